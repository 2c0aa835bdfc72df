#pragma once

#include <span>
#include <vector>

#include "bmi/numerics/graph.hpp"

namespace bmi::mi {

// mean(joint) - logsumexp(marginal) + log(n_marginal), in nats.
double dv_bound(std::span<const double> joint, std::span<const double> marginal);

// mean over joint of -softplus(-s) minus mean over marginal of softplus(s).
double proxy_objective(std::span<const double> joint, std::span<const double> marginal);
numerics::Var proxy_objective(numerics::Graph& g, numerics::Var joint, numerics::Var marginal);

// Probabilities p(x, y) over finite supports, row-major.
struct JointTable {
  std::size_t rows = 0, cols = 0;
  std::vector<double> p;

  double at(std::size_t x, std::size_t y) const { return p[x * cols + y]; }
  // Throws InputError unless entries are finite, non-negative and sum to 1
  // within 1e-12.
  void validate() const;
  std::vector<double> row_marginal() const;
  std::vector<double> col_marginal() const;

  static JointTable outer(const std::vector<double>& px, const std::vector<double>& py);
};

struct MIBreakdown {
  double mi = 0.0;
  double h_x = 0.0, h_y = 0.0;
  double h_y_given_x = 0.0, h_x_given_y = 0.0;
};

// Exact MI and entropies in nats with 0 log 0 = 0.
MIBreakdown brute_force_mi(const JointTable& table);

// DV bound with exact expectations: E_p[T] - log E_{px py}[exp T]. Entries of
// `scores` may be -inf where p(x, y) = 0.
double exhaustive_dv(const JointTable& table, const std::vector<double>& scores);

// log p(x, y) / (p(x) p(y)), -inf where p(x, y) = 0.
std::vector<double> log_density_ratio(const JointTable& table);

}  // namespace bmi::mi
