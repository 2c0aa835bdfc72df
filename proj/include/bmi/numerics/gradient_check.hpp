#pragma once

#include "bmi/numerics/graph.hpp"

namespace bmi::numerics {

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param or input name>[index]"
};

// Compares the analytic gradient of the scalar `output` against central
// differences for every coordinate of the bound inputs and every parameter the
// graph reads. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
// Parameter values and gradients are restored afterwards.
GradientCheckResult gradient_check(Graph& graph, Var output, const Bindings& point,
                                   double step = 1e-5);

}  // namespace bmi::numerics
