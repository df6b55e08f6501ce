#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ndlab/params.hpp"

namespace ndlab {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<std::pair<std::string, double>> per_param_errors;
};

// scalar_fn must evaluate the objective at the current parameter values and,
// as a side effect, leave the analytic gradient in each entry's grad slot.
// It must not mutate parameter values or any other state it reads.
//
// Central differences (f(p+h) - f(p-h)) / 2h per trainable coordinate;
// rel error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport finite_diff_check(const std::function<double(ParamStore&)>& scalar_fn,
                                  ParamStore& params, double h);

}  // namespace ndlab
