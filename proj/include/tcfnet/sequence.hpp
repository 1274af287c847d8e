// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "tcfnet/layers.hpp"

namespace tcfnet {

// LSTM gate weights bound onto a tape for one forward pass. All W share the
// input dim; all U are hidden x hidden.
struct LstmCellVars {
    Var w_i, w_f, w_o, w_c;  // (F, N)
    Var u_i, u_f, u_o, u_c;  // (N, N)
    Var b_i, b_f, b_o, b_c;  // (N)
};

// One recurrence step. Gates are sigmoid; the candidate cell is linear (no
// tanh) and the hidden state is o * c_t directly — this follows the gate
// equations used by the architectures here, which deviate from the textbook
// LSTM on those two points.
struct LstmStepOut {
    Var h;
    Var c;
};
LstmStepOut lstm_cell_step(Var x_t, Var h_prev, Var c_prev, const LstmCellVars& p);

enum class LstmReturn { all, last };

// Unrolls the cell over (B,T,F) from a zero initial state.
// Returns (B,T,N) for LstmReturn::all, (B,N) for LstmReturn::last.
Var lstm_layer(Var sequence, const LstmCellVars& p, LstmReturn mode);

// --- temporal convolutional network -------------------------------------

struct TcnConfig {
    int filters = 6;
    int kernel_size = 2;
    std::vector<int> dilations = {1, 2};  // one residual block per entry
    double dropout_p = 0.5;
};

// Left-padded dilated causal convolution: x (B,T,C), w (k,C,F), bias (F).
// y[t] only depends on x[t], x[t-d], ..., x[t-(k-1)d].
Var causal_conv1d(Var x, Var w, Var bias, int dilation);

struct TcnBlockVars {
    Var w1, b1;
    Var w2, b2;
    std::optional<Var> proj_w;  // 1x1 projection when channels change
    std::optional<Var> proj_b;
};

// Residual blocks of two dilated causal convs + ELU + dropout each, ELU
// after the residual add. return_sequence keeps the full (B,T,F) output;
// otherwise only the last time step (B,F) is returned.
Var tcn_forward(Var sequence, const std::vector<TcnBlockVars>& blocks, const TcnConfig& config,
                Mode mode, std::mt19937_64& rng, bool return_sequence);

// Smallest usable sequence length: the largest dilated tap must reach real
// samples for at least one output position.
int tcn_min_sequence_length(const TcnConfig& config);

}  // namespace tcfnet
