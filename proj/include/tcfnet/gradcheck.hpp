// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "tcfnet/tensor.hpp"

namespace tcfnet {

// Central finite differences: the gradient oracle every analytic backward
// rule is checked against. f must be pure and deterministic.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps = 1e-5);

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
double max_rel_error(const Tensor& a, const Tensor& b);

}  // namespace tcfnet
