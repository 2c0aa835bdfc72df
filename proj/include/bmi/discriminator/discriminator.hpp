#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmi/numerics/graph.hpp"
#include "bmi/util/key_values.hpp"

namespace bmi::discriminator {

using numerics::Graph;
using numerics::Var;

struct DiscriminatorConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t feature_dim() const { return 5 * input_dim; }

  static DiscriminatorConfig from_key_values(const KeyValues& kv,
                                             const std::string& prefix = "disc.");
  void write_key_values(std::ostream& out, const std::string& prefix = "disc.") const;
};

// [a, b, a - b, |a - b|, a * b]
std::vector<double> feature_map(const std::vector<double>& a, const std::vector<double>& b);

struct DiscriminatorNodes {
  Var w1, b1, w2, b2;
};

// Score D(a, b) = w2 . tanh(W1 f(a, b) + b1) + b2, unbounded.
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config, std::string prefix = "disc.");

  const DiscriminatorConfig& config() const { return config_; }
  numerics::ParameterSet& params() { return params_; }
  const numerics::ParameterSet& params() const { return params_; }
  void zero_parameters();

  double score(const std::vector<double>& a, const std::vector<double>& b) const;

  DiscriminatorNodes bind(Graph& g);
  // a, b: [N, d] -> [N, 5d]
  static Var features(Graph& g, Var a, Var b);
  // a, b: [N, d] -> [N] scores
  Var score(Graph& g, const DiscriminatorNodes& n, Var a, Var b) const;

 private:
  DiscriminatorConfig config_;
  numerics::ParameterSet params_;
  numerics::Parameter *w1_, *b1_, *w2_, *b2_;
};

}  // namespace bmi::discriminator
