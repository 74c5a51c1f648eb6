#pragma once

#include <functional>

#include "m2m/tensor.hpp"

namespace m2m::diff {

// Central-difference check of reverse-mode gradients. `op` must map the
// point tensor to a scalar and be differentiable there (sample away from
// kinks such as maxpool ties or abs at zero). Returns
//   max_i |analytic_i - fd_i| / max(1, |fd_i|)
// with fd the central difference at step h. Throws on a non-finite
// difference quotient.
double gradcheck(const std::function<Tensor(const Tensor&)>& op,
                 const Tensor& point, double h = 1e-5);

}  // namespace m2m::diff
