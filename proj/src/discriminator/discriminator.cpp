#include "bmi/discriminator/discriminator.hpp"

#include <cmath>
#include <ostream>

#include "bmi/error.hpp"
#include "bmi/util/random.hpp"

namespace bmi::discriminator {

using numerics::Tensor;

void DiscriminatorConfig::validate() const {
  if (input_dim == 0) throw ConfigError("disc.input_dim must be positive");
  if (hidden == 0) throw ConfigError("disc.hidden must be at least 1");
}

DiscriminatorConfig DiscriminatorConfig::from_key_values(const KeyValues& kv,
                                                         const std::string& prefix) {
  DiscriminatorConfig c;
  c.input_dim = static_cast<std::size_t>(kv.get_u64(prefix + "input_dim", 0));
  c.hidden = static_cast<std::size_t>(kv.get_u64(prefix + "hidden", c.hidden));
  c.seed = kv.get_u64(prefix + "seed", c.seed);
  return c;
}

void DiscriminatorConfig::write_key_values(std::ostream& out, const std::string& prefix) const {
  out << prefix << "input_dim = " << input_dim << "\n";
  out << prefix << "hidden = " << hidden << "\n";
  out << prefix << "seed = " << seed << "\n";
}

std::vector<double> feature_map(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeError("feature_map dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  const std::size_t d = a.size();
  std::vector<double> f(5 * d);
  for (std::size_t j = 0; j < d; ++j) {
    f[j] = a[j];
    f[d + j] = b[j];
    f[2 * d + j] = a[j] - b[j];
    f[3 * d + j] = std::abs(a[j] - b[j]);
    f[4 * d + j] = a[j] * b[j];
  }
  return f;
}

namespace {

Tensor uniform_tensor(numerics::Shape shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

}  // namespace

Discriminator::Discriminator(DiscriminatorConfig config, std::string prefix)
    : config_(config) {
  config_.validate();
  Rng rng = make_rng(config_.seed, prefix + "init");
  const std::size_t f = config_.feature_dim(), h = config_.hidden;
  w1_ = &params_.add(prefix + "w1", uniform_tensor({f, h}, 1.0 / std::sqrt(double(f)), rng));
  b1_ = &params_.add(prefix + "b1", Tensor({1, h}, 0.0));
  w2_ = &params_.add(prefix + "w2", uniform_tensor({h, 1}, 1.0 / std::sqrt(double(h)), rng));
  b2_ = &params_.add(prefix + "b2", Tensor({1, 1}, 0.0));
}

void Discriminator::zero_parameters() {
  for (auto* p : params_.all()) p->value.fill(0.0);
}

double Discriminator::score(const std::vector<double>& a, const std::vector<double>& b) const {
  if (a.size() != config_.input_dim) throw ShapeError("encoding dim does not match discriminator");
  const auto f = feature_map(a, b);
  const std::size_t h = config_.hidden;
  std::vector<double> z(h, 0.0);
  const auto& W1 = w1_->value.storage();
  for (std::size_t p = 0; p < f.size(); ++p) {
    if (f[p] == 0.0) continue;
    for (std::size_t j = 0; j < h; ++j) z[j] += f[p] * W1[p * h + j];
  }
  double s = 0.0;
  for (std::size_t j = 0; j < h; ++j) {
    const double t = std::tanh(z[j] + b1_->value[j]);
    if (t == 0.0) continue;
    s += t * w2_->value[j];
  }
  return s + b2_->value[0];
}

DiscriminatorNodes Discriminator::bind(Graph& g) {
  return {g.parameter(*w1_), g.parameter(*b1_), g.parameter(*w2_), g.parameter(*b2_)};
}

Var Discriminator::features(Graph& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) throw ShapeError("feature_map shape mismatch");
  Var d = g.sub(a, b);
  return g.concat({a, b, d, g.abs(d), g.mul(a, b)}, 1);
}

Var Discriminator::score(Graph& g, const DiscriminatorNodes& n, Var a, Var b) const {
  const auto& s = g.shape(a);
  if (s.size() != 2 || s[1] != config_.input_dim)
    throw ShapeError("encoding dim does not match discriminator");
  Var hidden = g.tanh(g.add_row(g.matmul(features(g, a, b), n.w1), n.b1));
  Var out = g.add_row(g.matmul(hidden, n.w2), n.b2);
  return g.reshape(out, {s[0]});
}

}  // namespace bmi::discriminator
