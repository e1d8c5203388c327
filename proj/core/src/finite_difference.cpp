#include "dreamprm/autodiff/finite_difference.hpp"

#include <algorithm>
#include <cmath>

#include "dreamprm/error.hpp"

namespace dreamprm::ad {

ParamVector finite_difference(const std::function<double(const ParamVector&)>& loss_fn, const ParamVector& params,
                              double eps) {
  if (!(eps > 0.0)) throw Error("finite_difference: eps must be positive");
  ParamVector out = params;
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + eps;
    const double up = loss_fn(probe);
    probe[i] = params[i] - eps;
    const double down = loss_fn(probe);
    probe[i] = params[i];
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

double relative_error(const ParamVector& a, const ParamVector& b, double floor) {
  require_same_size(a, b, "relative_error");
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

}  // namespace dreamprm::ad
