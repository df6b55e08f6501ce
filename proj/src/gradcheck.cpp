#include "ndlab/gradcheck.hpp"

#include <cmath>

#include "ndlab/errors.hpp"

namespace ndlab {

GradCheckReport finite_diff_check(const std::function<double(ParamStore&)>& scalar_fn,
                                  ParamStore& params, double h) {
  if (!(h > 0.0)) throw ParamError("finite_diff_check: h must be > 0");

  params.zero_grads();
  const double base = scalar_fn(params);
  if (!std::isfinite(base))
    throw DivergenceError("finite_diff_check: non-finite loss at the base point");

  // Snapshot analytic gradients before probing individual coordinates.
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (const auto& e : params.entries()) analytic.push_back(e.grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& entry = params.entries()[pi];
    if (!entry.trainable) continue;
    double param_max = 0.0;
    for (std::size_t k = 0; k < entry.value.data.size(); ++k) {
      const double saved = entry.value.data[k];
      entry.value.data[k] = saved + h;
      const double f_plus = scalar_fn(params);
      entry.value.data[k] = saved - h;
      const double f_minus = scalar_fn(params);
      entry.value.data[k] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw DivergenceError("finite_diff_check: non-finite loss while probing '" +
                              entry.name + "'");
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[pi].data[k];
      const double rel =
          std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      param_max = std::max(param_max, rel);
    }
    report.per_param_errors.emplace_back(entry.name, param_max);
    if (param_max >= report.max_rel_error) {
      // >= so a worst_param is recorded even when every error is exactly 0
      if (param_max > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = param_max;
        report.worst_param = entry.name;
      }
    }
  }
  return report;
}

}  // namespace ndlab
