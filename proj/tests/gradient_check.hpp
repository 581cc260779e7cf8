#pragma once

// Finite-difference oracle for parameter gradients. Test-only: it drives the
// loss as a black box and never looks at the tape's backward closures.

#include <functional>
#include <string>
#include <vector>

#include "hern/autograd.hpp"
#include "hern/params.hpp"
#include "test_support.hpp"

namespace hern::testing {

struct GradientMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientReport {
  std::size_t checked = 0;
  double worst_rel_error = 0.0;
  std::vector<GradientMismatch> failures;
};

/// Builds the scalar loss on a tape from the given parameters.
using LossBuilder =
    std::function<Var(Tape<double>&, const ModelParams<double>&)>;

/// Compares tape gradients with central differences for every element of
/// every parameter (or every `stride`-th element when stride > 1).
inline GradientReport check_param_gradients(ModelParams<double> params, const LossBuilder& loss,
                                            double step, double tolerance,
                                            std::size_t stride = 1) {
  Tape<double> tape;
  tape.backward(loss(tape, params));
  const ParamGrads<double> analytic = tape.parameter_grads(params);

  auto evaluate = [&] {
    Tape<double> t(false);
    return t.value(loss(t, params))[0];
  };

  GradientReport report;
  for (auto& [name, tensor] : params) {
    const Tensor<double>& g = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); i += stride) {
      const double numeric = central_difference(evaluate, tensor[i], step);
      const double err = relative_error(g[i], numeric);
      ++report.checked;
      report.worst_rel_error = std::max(report.worst_rel_error, err);
      if (err >= tolerance) report.failures.push_back({name, i, g[i], numeric, err});
    }
  }
  return report;
}

}  // namespace hern::testing
