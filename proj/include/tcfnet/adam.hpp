// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "tcfnet/tensor.hpp"

namespace tcfnet {

// Named model weight. Non-trainable entries (centroids, running statistics)
// still serialize into checkpoints; they just never receive updates.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

struct AdamState {
    int64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

// One ADAM update with bias correction over all trainable parameters.
// grads must contain an entry for every trainable parameter.
void adam_step(std::vector<Parameter>& params, const std::map<std::string, Tensor>& grads,
               AdamState& state);

}  // namespace tcfnet
