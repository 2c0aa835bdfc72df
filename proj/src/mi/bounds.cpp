#include "bmi/mi/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bmi/error.hpp"

namespace bmi::mi {

namespace {

void require_scores(std::span<const double> joint, std::span<const double> marginal) {
  if (joint.empty() || marginal.empty()) throw UsageError("MI bound needs non-empty score lists");
  for (double s : joint)
    if (!std::isfinite(s)) throw InvalidValueError("non-finite joint score");
  for (double s : marginal)
    if (!std::isfinite(s)) throw InvalidValueError("non-finite marginal score");
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

double dv_bound(std::span<const double> joint, std::span<const double> marginal) {
  require_scores(joint, marginal);
  const double m = *std::max_element(marginal.begin(), marginal.end());
  double mean = 0.0, tail = 0.0;
  for (double s : joint) mean += s - m;
  for (double s : marginal) tail += std::exp(s - m);
  return mean / static_cast<double>(joint.size()) -
         std::log(tail / static_cast<double>(marginal.size()));
}

double proxy_objective(std::span<const double> joint, std::span<const double> marginal) {
  require_scores(joint, marginal);
  double a = 0.0, b = 0.0;
  for (double s : joint) a -= numerics::softplus(-s);
  for (double s : marginal) b += numerics::softplus(s);
  return a / static_cast<double>(joint.size()) - b / static_cast<double>(marginal.size());
}

numerics::Var proxy_objective(numerics::Graph& g, numerics::Var joint, numerics::Var marginal) {
  return g.sub(g.mean(g.neg(g.softplus(g.neg(joint)))), g.mean(g.softplus(marginal)));
}

void JointTable::validate() const {
  if (rows == 0 || cols == 0 || p.size() != rows * cols)
    throw InputError("joint table shape does not match its entries");
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("joint table entry outside [0, inf)");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-12) throw InputError("joint table does not sum to 1");
}

std::vector<double> JointTable::row_marginal() const {
  std::vector<double> m(rows, 0.0);
  for (std::size_t x = 0; x < rows; ++x)
    for (std::size_t y = 0; y < cols; ++y) m[x] += at(x, y);
  return m;
}

std::vector<double> JointTable::col_marginal() const {
  std::vector<double> m(cols, 0.0);
  for (std::size_t x = 0; x < rows; ++x)
    for (std::size_t y = 0; y < cols; ++y) m[y] += at(x, y);
  return m;
}

JointTable JointTable::outer(const std::vector<double>& px, const std::vector<double>& py) {
  JointTable t{px.size(), py.size(), {}};
  for (double a : px)
    for (double b : py) t.p.push_back(a * b);
  return t;
}

MIBreakdown brute_force_mi(const JointTable& table) {
  table.validate();
  const auto px = table.row_marginal();
  const auto py = table.col_marginal();
  MIBreakdown r;
  r.h_x = entropy(px);
  r.h_y = entropy(py);
  const double h_xy = entropy(table.p);
  r.h_y_given_x = h_xy - r.h_x;
  r.h_x_given_y = h_xy - r.h_y;
  for (std::size_t x = 0; x < table.rows; ++x)
    for (std::size_t y = 0; y < table.cols; ++y) {
      const double p = table.at(x, y);
      if (p > 0.0) r.mi += p * std::log(p / (px[x] * py[y]));
    }
  if (std::abs(r.h_y - r.h_y_given_x - r.mi) > 1e-10 ||
      std::abs(r.h_x - r.h_x_given_y - r.mi) > 1e-10)
    throw StatisticsError("entropy identity violated beyond 1e-10");
  return r;
}

double exhaustive_dv(const JointTable& table, const std::vector<double>& scores) {
  table.validate();
  if (scores.size() != table.p.size()) throw ShapeError("one score per table cell");
  const auto px = table.row_marginal();
  const auto py = table.col_marginal();
  double first = 0.0;
  std::vector<double> terms;
  for (std::size_t x = 0; x < table.rows; ++x)
    for (std::size_t y = 0; y < table.cols; ++y) {
      const double p = table.at(x, y), s = scores[x * table.cols + y];
      if (p > 0.0) first += p * s;
      const double q = px[x] * py[y];
      if (q > 0.0) terms.push_back(std::log(q) + s);
    }
  return first - numerics::log_sum_exp(terms);
}

std::vector<double> log_density_ratio(const JointTable& table) {
  const auto px = table.row_marginal();
  const auto py = table.col_marginal();
  std::vector<double> t(table.p.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t x = 0; x < table.rows; ++x)
    for (std::size_t y = 0; y < table.cols; ++y) {
      const double p = table.at(x, y);
      if (p > 0.0) t[x * table.cols + y] = std::log(p / (px[x] * py[y]));
    }
  return t;
}

}  // namespace bmi::mi
