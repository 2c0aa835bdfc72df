#include "bmi/numerics/gradient_check.hpp"

#include <algorithm>
#include <cmath>

#include "bmi/error.hpp"

namespace bmi::numerics {

GradientCheckResult gradient_check(Graph& graph, Var output, const Bindings& point,
                                   double step) {
  if (!(step > 0.0 && step <= 1e-2))
    throw UsageError("gradient_check step must lie in (0, 1e-2]");
  if (shape_size(graph.shape(output)) != 1)
    throw UsageError("gradient_check needs a scalar-valued function");

  const auto params = graph.parameters();
  std::vector<Tensor> saved_grads;
  for (auto* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }

  graph.forward(point);
  graph.backward(output);

  GradientCheckResult result;
  auto consider = [&](double analytic, double numeric, const std::string& where) {
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    ++result.coordinates;
    if (err > result.max_relative_error || result.worst.empty()) {
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = where;
      }
    }
  };

  auto eval_at = [&](const Bindings& b) {
    graph.forward(b);
    return graph.value(output).item();
  };

  std::vector<std::pair<Var, Tensor>> input_grads;
  for (auto v : graph.inputs())
    if (point.count(graph.input_name(v))) input_grads.emplace_back(v, graph.grad(v));

  for (const auto& [v, analytic] : input_grads) {
    const std::string& name = graph.input_name(v);
    auto it = point.find(name);
    Bindings b = point;
    for (std::size_t j = 0; j < it->second.size(); ++j) {
      Tensor& t = b.at(name);
      const double orig = t[j];
      t[j] = orig + step;
      const double up = eval_at(b);
      t[j] = orig - step;
      const double down = eval_at(b);
      t[j] = orig;
      consider(analytic[j], (up - down) / (2.0 * step),
               name + "[" + std::to_string(j) + "]");
    }
  }

  for (auto* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double orig = p->value[j];
      p->value[j] = orig + step;
      const double up = eval_at(point);
      p->value[j] = orig - step;
      const double down = eval_at(point);
      p->value[j] = orig;
      consider(analytic[j], (up - down) / (2.0 * step),
               p->name + "[" + std::to_string(j) + "]");
    }
  }

  graph.forward(point);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved_grads[i];
  return result;
}

}  // namespace bmi::numerics
