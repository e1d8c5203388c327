#pragma once

#include <functional>

#include "dreamprm/autodiff/param_vector.hpp"

namespace dreamprm::ad {

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) per coordinate.
ParamVector finite_difference(const std::function<double(const ParamVector&)>& loss_fn, const ParamVector& params,
                              double eps);

/// max_i |a_i - b_i| / max(max_i |b_i|, floor). The reference is `b`.
double relative_error(const ParamVector& a, const ParamVector& b, double floor = 1e-12);

}  // namespace dreamprm::ad
