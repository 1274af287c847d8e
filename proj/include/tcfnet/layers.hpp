// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "tcfnet/autodiff.hpp"

namespace tcfnet {

// Feature maps are (B, H, W, M) row-major: H = electrode rows, W = time,
// M = maps. Dense activations are (B, D).

enum class Padding { valid, same };
enum class Mode { train, infer };

// Cross-correlation (no kernel flip). x (B,H,W,Cin), w (KH,KW,Cin,Cout).
Var conv2d(Var x, Var w, Padding padding);
Var conv2d(Var x, Var w, Var bias, Padding padding);

// Per-channel convolution. w (KH,KW,C,mult); output maps = C*mult, output
// channel c*mult+m comes from input channel c and kernel slice m.
Var depthwise_conv2d(Var x, Var w, int depth_multiplier, Padding padding);
Var depthwise_conv2d(Var x, Var w, Var bias, int depth_multiplier, Padding padding);

// Depthwise stage (same padding, multiplier 1) followed by 1x1 pointwise
// mixing. wd (KH,KW,C,1), wp (1,1,C,F).
Var separable_conv2d(Var x, Var wd, Var wp, Var bias);

// Channel-broadcast add: (B,H,W,M) + (M).
Var add_chanvec(Var x, Var bias);

// Non-overlapping mean pooling, stride = window; trailing remainder truncated.
Var avg_pool2d(Var x, int wh, int ww);

// Train mode normalizes by batch statistics per map and updates the running
// statistics in place (side effect, outside the graph). Infer mode is an
// affine map using the running statistics.
Var batch_norm_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                     double momentum, double eps);
Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var, double eps);

Var elu(Var x, double alpha = 1.0);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh_op(Var x);

// Inverted dropout: train mode scales kept units by 1/(1-p); infer mode is
// the identity. The mask is drawn from `rng` (one stream per model).
Var dropout(Var x, double p, Mode mode, std::mt19937_64& rng);

Var flatten(Var x);
Var dense(Var x, Var w, Var b);

Var softmax(Var logits);
// Weighted mean of -log p[label]; class_weights size C (use all-ones for the
// unweighted loss).
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                          const std::vector<double>& class_weights);

}  // namespace tcfnet
