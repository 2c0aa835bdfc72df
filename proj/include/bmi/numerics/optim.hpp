#pragma once

#include <cstdint>
#include <map>

#include "bmi/numerics/graph.hpp"

namespace bmi::numerics {

// Plain gradient descent with optional global-norm clipping.
struct Sgd {
  double learning_rate = 1.0;
  double clip_norm = 0.0;  // 0 disables clipping

  void step(ParameterSet& params) const;
};

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void step(ParameterSet& params);
  void reset() { moments_.clear(); }

 private:
  struct Moments {
    Tensor m, v;
    std::uint64_t t = 0;
  };
  std::map<std::uint64_t, Moments> moments_;
};

double global_grad_norm(const ParameterSet& params);

}  // namespace bmi::numerics
