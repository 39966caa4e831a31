#include "dglight/gradcheck.hpp"

#include "dglight/error.hpp"

#include <algorithm>
#include <cmath>

namespace dglight {

Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& params,
                          double h) {
  if (!(h > 0.0)) throw Error("central_difference: step must be positive");
  Tensor grad(params.rows(), params.cols());
  Tensor probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    const double x = params.data()[i];
    probe.data()[i] = x + h;
    const double up = f(probe);
    probe.data()[i] = x - h;
    const double down = f(probe);
    probe.data()[i] = x;
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double finite_diff_check(const std::function<double(const Tensor&)>& f,
                         const std::function<Tensor(const Tensor&)>& analytic_grad,
                         const Tensor& params, double h) {
  if (params.size() == 0) return 0.0;
  const Tensor analytic = analytic_grad(params);
  if (shape_of(analytic) != shape_of(params)) {
    throw Error("finite_diff_check: gradient shape differs from parameter shape");
  }
  const Tensor numeric = central_difference(f, params, h);
  double worst = 0.0;
  for (Index i = 0; i < params.size(); ++i) {
    const double a = analytic.data()[i];
    const double err = std::abs(a - numeric.data()[i]) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dglight
