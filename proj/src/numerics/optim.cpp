#include "bmi/numerics/optim.hpp"

#include <cmath>

#include "bmi/error.hpp"

namespace bmi::numerics {

double global_grad_norm(const ParameterSet& params) {
  double s = 0.0;
  for (const auto* p : params.all())
    for (double g : p->grad.storage()) s += g * g;
  return std::sqrt(s);
}

void Sgd::step(ParameterSet& params) const {
  double scale = learning_rate;
  if (clip_norm > 0.0) {
    const double norm = global_grad_norm(params);
    if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
    if (norm > clip_norm) scale *= clip_norm / norm;
  }
  for (auto* p : params.all()) {
    auto& v = p->value.storage();
    const auto& g = p->grad.storage();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= scale * g[i];
  }
}

void Adam::step(ParameterSet& params) {
  for (auto* p : params.all()) {
    auto& st = moments_[p->id];
    if (st.t == 0) {
      st.m = Tensor(p->value.shape(), 0.0);
      st.v = Tensor(p->value.shape(), 0.0);
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(beta1, double(st.t));
    const double c2 = 1.0 - std::pow(beta2, double(st.t));
    auto& w = p->value.storage();
    const auto& g = p->grad.storage();
    auto& m = st.m.storage();
    auto& v = st.v.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + weight_decay * w[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      w[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
}

}  // namespace bmi::numerics
