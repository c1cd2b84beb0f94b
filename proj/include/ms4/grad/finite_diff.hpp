#pragma once

#include <functional>
#include <map>
#include <string>

#include "ms4/grad/tape.hpp"

namespace ms4::grad {

/// Loss used by the finite-difference side. Returning long double lets a
/// caller evaluate the loss in extended precision so that the central
/// difference is not dominated by rounding of the loss value.
using LossFn = std::function<long double(const ParamMap&)>;
using GradFn = std::function<ParamMap(const ParamMap&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  /// Worst coordinate per named array.
  std::map<std::string, double> per_param;
};

/// Compares an analytic gradient against central differences, one scalar
/// coordinate at a time. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// `loss` must be deterministic.
GradCheckReport finite_diff_check(const LossFn& loss, const GradFn& grad,
                                  const ParamMap& params, double epsilon);

}  // namespace ms4::grad
