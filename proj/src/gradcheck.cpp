// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace tcfnet {

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_gradient: eps must be positive");
    Tensor g(x.shape);
    Tensor probe = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        probe.data[i] = x.data[i] + eps;
        double fp = f(probe);
        probe.data[i] = x.data[i] - eps;
        double fm = f(probe);
        probe.data[i] = x.data[i];
        g.data[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

double max_rel_error(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("max_rel_error: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double denom = std::max({1.0, std::abs(a.data[i]), std::abs(b.data[i])});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace tcfnet
