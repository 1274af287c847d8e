// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace tcfnet {

void adam_step(std::vector<Parameter>& params, const std::map<std::string, Tensor>& grads,
               AdamState& state) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (Parameter& p : params) {
        if (!p.trainable) continue;
        auto it = grads.find(p.name);
        if (it == grads.end())
            throw std::invalid_argument("adam_step: missing gradient for trainable parameter '" + p.name + "'");
        const Tensor& g = it->second;
        if (g.shape != p.tensor.shape)
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape) +
                                        " does not match parameter '" + p.name + "' " +
                                        shape_str(p.tensor.shape));
        Tensor& m = state.m.try_emplace(p.name, Tensor(p.tensor.shape)).first->second;
        Tensor& v = state.v.try_emplace(p.name, Tensor(p.tensor.shape)).first->second;
        for (size_t i = 0; i < g.data.size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.tensor.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace tcfnet
