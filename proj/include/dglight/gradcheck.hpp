#pragma once

#include "dglight/tensor.hpp"

#include <functional>

namespace dglight {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// A zero-size parameter tensor yields 0.
double finite_diff_check(const std::function<double(const Tensor&)>& f,
                         const std::function<Tensor(const Tensor&)>& analytic_grad,
                         const Tensor& params, double h);

// Central-difference gradient of f at params.
Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& params,
                          double h);

}  // namespace dglight
