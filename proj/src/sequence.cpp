// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/sequence.hpp"

#include <algorithm>
#include <stdexcept>

namespace tcfnet {

LstmStepOut lstm_cell_step(Var x_t, Var h_prev, Var c_prev, const LstmCellVars& p) {
    Var i = sigmoid(add_rowvec(add(matmul(x_t, p.w_i), matmul(h_prev, p.u_i)), p.b_i));
    Var f = sigmoid(add_rowvec(add(matmul(x_t, p.w_f), matmul(h_prev, p.u_f)), p.b_f));
    Var o = sigmoid(add_rowvec(add(matmul(x_t, p.w_o), matmul(h_prev, p.u_o)), p.b_o));
    Var c_cand = add_rowvec(add(matmul(x_t, p.w_c), matmul(h_prev, p.u_c)), p.b_c);
    Var c_t = add(mul(f, c_prev), mul(i, c_cand));
    Var h_t = mul(o, c_t);
    return {h_t, c_t};
}

Var lstm_layer(Var sequence, const LstmCellVars& p, LstmReturn mode) {
    const Tensor& sv = sequence.val();
    if (sv.rank() != 3) throw std::invalid_argument("lstm_layer: sequence must be (B,T,F), got " + shape_str(sv.shape));
    int B = sv.dim(0), T = sv.dim(1);
    if (T < 1) throw std::invalid_argument("lstm_layer: empty sequence");
    int N = p.u_i.val().dim(0);

    Tape& tape = *sequence.tape;
    Var h = tape.constant(Tensor({B, N}));
    Var c = tape.constant(Tensor({B, N}));
    std::vector<Var> steps;
    steps.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        Var x_t = select(sequence, 1, t);  // (B,F)
        LstmStepOut out = lstm_cell_step(x_t, h, c, p);
        h = out.h;
        c = out.c;
        if (mode == LstmReturn::all) steps.push_back(reshape(h, {B, 1, N}));
    }
    if (mode == LstmReturn::last) return h;
    if (steps.size() == 1) return steps[0];
    return concat(steps, 1);
}

// --- TCN ----------------------------------------------------------------------

Var causal_conv1d(Var x, Var w, Var bias, int dilation) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    if (xv.rank() != 3) throw std::invalid_argument("causal_conv1d: input must be (B,T,C)");
    if (wv.rank() != 3) throw std::invalid_argument("causal_conv1d: kernel must be (k,C,F)");
    if (dilation < 1) throw std::invalid_argument("causal_conv1d: dilation must be >= 1");
    int B = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
    int K = wv.dim(0), F = wv.dim(2);
    if (wv.dim(1) != C)
        throw std::invalid_argument("causal_conv1d: kernel channels " + std::to_string(wv.dim(1)) +
                                    " != input channels " + std::to_string(C));
    const Tensor& bv = bias.val();
    if (bv.rank() != 1 || bv.dim(0) != F)
        throw std::invalid_argument("causal_conv1d: bias must be (" + std::to_string(F) + ")");

    Tensor out({B, T, F});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
            double* orow = &out.data[(static_cast<size_t>(b) * T + t) * F];
            for (int f = 0; f < F; ++f) orow[f] = bv.data[static_cast<size_t>(f)];
            for (int j = 0; j < K; ++j) {
                int ti = t - j * dilation;
                if (ti < 0) continue;
                const double* xrow = &xv.data[(static_cast<size_t>(b) * T + ti) * C];
                const double* krow = &wv.data[static_cast<size_t>(j) * C * F];
                for (int c = 0; c < C; ++c) {
                    double xc = xrow[c];
                    const double* kk = krow + static_cast<size_t>(c) * F;
                    for (int f = 0; f < F; ++f) orow[f] += xc * kk[f];
                }
            }
        }

    return x.tape->make_node(std::move(out), {x.id, w.id, bias.id},
                             [B, T, C, K, F, dilation](Tape& t2, int self) {
        const Tensor& g = t2.grad_buffer(self);
        int px = t2.parents(self)[0], pw = t2.parents(self)[1], pb = t2.parents(self)[2];
        const auto& X = t2.value(px).data;
        const auto& W = t2.value(pw).data;
        bool need_dx = t2.requires_grad(px), need_dw = t2.requires_grad(pw), need_db = t2.requires_grad(pb);
        std::vector<double> dx(need_dx ? X.size() : 0, 0.0);
        std::vector<double> dw(need_dw ? W.size() : 0, 0.0);
        std::vector<double> db(need_db ? static_cast<size_t>(F) : 0, 0.0);
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) {
                const double* grow = &g.data[(static_cast<size_t>(b) * T + t) * F];
                if (need_db)
                    for (int f = 0; f < F; ++f) db[static_cast<size_t>(f)] += grow[f];
                for (int j = 0; j < K; ++j) {
                    int ti = t - j * dilation;
                    if (ti < 0) continue;
                    size_t xoff = (static_cast<size_t>(b) * T + ti) * C;
                    size_t koff = static_cast<size_t>(j) * C * F;
                    for (int c = 0; c < C; ++c) {
                        const double* kk = &W[koff + static_cast<size_t>(c) * F];
                        if (need_dx) {
                            double acc = 0.0;
                            for (int f = 0; f < F; ++f) acc += grow[f] * kk[f];
                            dx[xoff + c] += acc;
                        }
                        if (need_dw) {
                            double xc = X[xoff + c];
                            double* dk = &dw[koff + static_cast<size_t>(c) * F];
                            for (int f = 0; f < F; ++f) dk[f] += xc * grow[f];
                        }
                    }
                }
            }
        if (need_dx) t2.accumulate(px, dx);
        if (need_dw) t2.accumulate(pw, dw);
        if (need_db) t2.accumulate(pb, db);
    });
}

int tcn_min_sequence_length(const TcnConfig& config) {
    int max_d = 1;
    for (int d : config.dilations) max_d = std::max(max_d, d);
    return (config.kernel_size - 1) * max_d + 1;
}

Var tcn_forward(Var sequence, const std::vector<TcnBlockVars>& blocks, const TcnConfig& config,
                Mode mode, std::mt19937_64& rng, bool return_sequence) {
    const Tensor& sv = sequence.val();
    if (sv.rank() != 3) throw std::invalid_argument("tcn_forward: sequence must be (B,T,C)");
    int T = sv.dim(1);
    int min_len = tcn_min_sequence_length(config);
    if (T < min_len)
        throw std::invalid_argument("tcn_forward: sequence length " + std::to_string(T) +
                                    " below required minimum " + std::to_string(min_len) +
                                    " for dilations up to " +
                                    std::to_string(*std::max_element(config.dilations.begin(),
                                                                     config.dilations.end())));
    if (blocks.size() != config.dilations.size())
        throw std::invalid_argument("tcn_forward: need one block per dilation");

    Var x = sequence;
    for (size_t i = 0; i < blocks.size(); ++i) {
        int d = config.dilations[i];
        const TcnBlockVars& blk = blocks[i];
        Var path = causal_conv1d(x, blk.w1, blk.b1, d);
        path = elu(path);
        path = dropout(path, config.dropout_p, mode, rng);
        path = causal_conv1d(path, blk.w2, blk.b2, d);
        path = elu(path);
        path = dropout(path, config.dropout_p, mode, rng);
        Var res = x;
        if (blk.proj_w) res = causal_conv1d(x, *blk.proj_w, *blk.proj_b, 1);
        x = elu(add(path, res));
    }
    if (return_sequence) return x;
    return select(x, 1, x.val().dim(1) - 1);
}

}  // namespace tcfnet
