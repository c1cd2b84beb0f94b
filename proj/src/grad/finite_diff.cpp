#include "ms4/grad/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "ms4/errors.hpp"

namespace ms4::grad {

GradCheckReport finite_diff_check(const LossFn& loss, const GradFn& grad,
                                  const ParamMap& params, double epsilon) {
  const ParamMap analytic = grad(params);
  GradCheckReport report;
  ParamMap probe = params;
  for (auto& [name, values] : probe) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw ContractError("gradient missing for parameter " + name);
    }
    double worst = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double saved = values.data()[i];
      values.data()[i] = saved + epsilon;
      const long double up = loss(probe);
      values.data()[i] = saved - epsilon;
      const long double down = loss(probe);
      values.data()[i] = saved;
      const auto numeric = static_cast<double>((up - down) / (2.0L * epsilon));
      const double exact = it->second.data()[i];
      const double denom =
          std::max({std::abs(exact), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
    report.per_param[name] = worst;
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

}  // namespace ms4::grad
