// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/layers.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace tcfnet {

namespace {

struct ConvDims {
    int B, H, W, Cin;
    int KH, KW, Cout;
    int OH, OW;
    int pad_top, pad_left;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, Padding padding, const char* op) {
    if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": input must be (B,H,W,C), got " + shape_str(x.shape));
    if (w.rank() != 4) throw std::invalid_argument(std::string(op) + ": kernel must be rank 4, got " + shape_str(w.shape));
    ConvDims d{};
    d.B = x.dim(0); d.H = x.dim(1); d.W = x.dim(2); d.Cin = x.dim(3);
    d.KH = w.dim(0); d.KW = w.dim(1);
    if (padding == Padding::valid) {
        if (d.KH > d.H || d.KW > d.W)
            throw std::invalid_argument(std::string(op) + ": kernel " + shape_str({d.KH, d.KW}) +
                                        " larger than input " + shape_str(x.shape) + " under valid padding");
        d.OH = d.H - d.KH + 1;
        d.OW = d.W - d.KW + 1;
        d.pad_top = 0;
        d.pad_left = 0;
    } else {
        d.OH = d.H;
        d.OW = d.W;
        d.pad_top = (d.KH - 1) / 2;
        d.pad_left = (d.KW - 1) / 2;
    }
    return d;
}

}  // namespace

// --- standard convolution ----------------------------------------------------

Var conv2d(Var x, Var w, Padding padding) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    ConvDims d = conv_dims(xv, wv, padding, "conv2d");
    if (wv.dim(2) != d.Cin)
        throw std::invalid_argument("conv2d: kernel input channels " + std::to_string(wv.dim(2)) +
                                    " != input channels " + std::to_string(d.Cin));
    d.Cout = wv.dim(3);

    Tensor out({d.B, d.OH, d.OW, d.Cout});
    const double* X = xv.data.data();
    const double* K = wv.data.data();
    double* O = out.data.data();
    for (int b = 0; b < d.B; ++b)
        for (int oh = 0; oh < d.OH; ++oh)
            for (int ow = 0; ow < d.OW; ++ow) {
                double* orow = O + ((static_cast<size_t>(b) * d.OH + oh) * d.OW + ow) * d.Cout;
                for (int kh = 0; kh < d.KH; ++kh) {
                    int ih = oh - d.pad_top + kh;
                    if (ih < 0 || ih >= d.H) continue;
                    for (int kw = 0; kw < d.KW; ++kw) {
                        int iw = ow - d.pad_left + kw;
                        if (iw < 0 || iw >= d.W) continue;
                        const double* xrow = X + ((static_cast<size_t>(b) * d.H + ih) * d.W + iw) * d.Cin;
                        const double* krow = K + (static_cast<size_t>(kh) * d.KW + kw) * d.Cin * d.Cout;
                        for (int ic = 0; ic < d.Cin; ++ic) {
                            double xv2 = xrow[ic];
                            const double* kk = krow + static_cast<size_t>(ic) * d.Cout;
                            for (int oc = 0; oc < d.Cout; ++oc) orow[oc] += xv2 * kk[oc];
                        }
                    }
                }
            }

    return x.tape->make_node(std::move(out), {x.id, w.id}, [d](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int px = t.parents(self)[0], pw = t.parents(self)[1];
        const double* X = t.value(px).data.data();
        const double* K = t.value(pw).data.data();
        bool need_dx = t.requires_grad(px), need_dw = t.requires_grad(pw);
        std::vector<double> dx(need_dx ? t.value(px).data.size() : 0, 0.0);
        std::vector<double> dw(need_dw ? t.value(pw).data.size() : 0, 0.0);
        for (int b = 0; b < d.B; ++b)
            for (int oh = 0; oh < d.OH; ++oh)
                for (int ow = 0; ow < d.OW; ++ow) {
                    const double* grow = g.data.data() + ((static_cast<size_t>(b) * d.OH + oh) * d.OW + ow) * d.Cout;
                    for (int kh = 0; kh < d.KH; ++kh) {
                        int ih = oh - d.pad_top + kh;
                        if (ih < 0 || ih >= d.H) continue;
                        for (int kw = 0; kw < d.KW; ++kw) {
                            int iw = ow - d.pad_left + kw;
                            if (iw < 0 || iw >= d.W) continue;
                            size_t xoff = ((static_cast<size_t>(b) * d.H + ih) * d.W + iw) * d.Cin;
                            size_t koff = (static_cast<size_t>(kh) * d.KW + kw) * d.Cin * d.Cout;
                            for (int ic = 0; ic < d.Cin; ++ic) {
                                const double* kk = K + koff + static_cast<size_t>(ic) * d.Cout;
                                if (need_dx) {
                                    double acc = 0.0;
                                    for (int oc = 0; oc < d.Cout; ++oc) acc += grow[oc] * kk[oc];
                                    dx[xoff + ic] += acc;
                                }
                                if (need_dw) {
                                    double xv2 = X[xoff + ic];
                                    double* dk = dw.data() + koff + static_cast<size_t>(ic) * d.Cout;
                                    for (int oc = 0; oc < d.Cout; ++oc) dk[oc] += xv2 * grow[oc];
                                }
                            }
                        }
                    }
                }
        if (need_dx) t.accumulate(px, dx);
        if (need_dw) t.accumulate(pw, dw);
    });
}

Var conv2d(Var x, Var w, Var bias, Padding padding) {
    return add_chanvec(conv2d(x, w, padding), bias);
}

// --- depthwise convolution -----------------------------------------------------

Var depthwise_conv2d(Var x, Var w, int depth_multiplier, Padding padding) {
    if (depth_multiplier < 1)
        throw std::invalid_argument("depthwise_conv2d: depth multiplier must be >= 1, got " +
                                    std::to_string(depth_multiplier));
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    ConvDims d = conv_dims(xv, wv, padding, "depthwise_conv2d");
    if (wv.dim(2) != d.Cin || wv.dim(3) != depth_multiplier)
        throw std::invalid_argument("depthwise_conv2d: kernel " + shape_str(wv.shape) +
                                    " incompatible with input channels " + std::to_string(d.Cin) +
                                    " and multiplier " + std::to_string(depth_multiplier));
    int M = depth_multiplier;
    int Cout = d.Cin * M;

    Tensor out({d.B, d.OH, d.OW, Cout});
    const double* X = xv.data.data();
    const double* K = wv.data.data();
    double* O = out.data.data();
    for (int b = 0; b < d.B; ++b)
        for (int oh = 0; oh < d.OH; ++oh)
            for (int ow = 0; ow < d.OW; ++ow) {
                double* orow = O + ((static_cast<size_t>(b) * d.OH + oh) * d.OW + ow) * Cout;
                for (int kh = 0; kh < d.KH; ++kh) {
                    int ih = oh - d.pad_top + kh;
                    if (ih < 0 || ih >= d.H) continue;
                    for (int kw = 0; kw < d.KW; ++kw) {
                        int iw = ow - d.pad_left + kw;
                        if (iw < 0 || iw >= d.W) continue;
                        const double* xrow = X + ((static_cast<size_t>(b) * d.H + ih) * d.W + iw) * d.Cin;
                        const double* krow = K + (static_cast<size_t>(kh) * d.KW + kw) * d.Cin * M;
                        for (int c = 0; c < d.Cin; ++c)
                            for (int m = 0; m < M; ++m)
                                orow[c * M + m] += xrow[c] * krow[static_cast<size_t>(c) * M + m];
                    }
                }
            }

    return x.tape->make_node(std::move(out), {x.id, w.id}, [d, M](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int px = t.parents(self)[0], pw = t.parents(self)[1];
        const double* X = t.value(px).data.data();
        const double* K = t.value(pw).data.data();
        bool need_dx = t.requires_grad(px), need_dw = t.requires_grad(pw);
        std::vector<double> dx(need_dx ? t.value(px).data.size() : 0, 0.0);
        std::vector<double> dw(need_dw ? t.value(pw).data.size() : 0, 0.0);
        int Cout = d.Cin * M;
        for (int b = 0; b < d.B; ++b)
            for (int oh = 0; oh < d.OH; ++oh)
                for (int ow = 0; ow < d.OW; ++ow) {
                    const double* grow = g.data.data() + ((static_cast<size_t>(b) * d.OH + oh) * d.OW + ow) * Cout;
                    for (int kh = 0; kh < d.KH; ++kh) {
                        int ih = oh - d.pad_top + kh;
                        if (ih < 0 || ih >= d.H) continue;
                        for (int kw = 0; kw < d.KW; ++kw) {
                            int iw = ow - d.pad_left + kw;
                            if (iw < 0 || iw >= d.W) continue;
                            size_t xoff = ((static_cast<size_t>(b) * d.H + ih) * d.W + iw) * d.Cin;
                            size_t koff = (static_cast<size_t>(kh) * d.KW + kw) * d.Cin * M;
                            for (int c = 0; c < d.Cin; ++c)
                                for (int m = 0; m < M; ++m) {
                                    double gv = grow[c * M + m];
                                    if (need_dx) dx[xoff + c] += gv * K[koff + static_cast<size_t>(c) * M + m];
                                    if (need_dw) dw[koff + static_cast<size_t>(c) * M + m] += gv * X[xoff + c];
                                }
                        }
                    }
                }
        if (need_dx) t.accumulate(px, dx);
        if (need_dw) t.accumulate(pw, dw);
    });
}

Var depthwise_conv2d(Var x, Var w, Var bias, int depth_multiplier, Padding padding) {
    return add_chanvec(depthwise_conv2d(x, w, depth_multiplier, padding), bias);
}

Var separable_conv2d(Var x, Var wd, Var wp, Var bias) {
    if (wd.val().dim(3) != 1)
        throw std::invalid_argument("separable_conv2d: depthwise stage uses multiplier 1, kernel " +
                                    shape_str(wd.val().shape));
    if (wp.val().dim(0) != 1 || wp.val().dim(1) != 1)
        throw std::invalid_argument("separable_conv2d: pointwise kernel must be 1x1, got " +
                                    shape_str(wp.val().shape));
    Var mid = depthwise_conv2d(x, wd, 1, Padding::same);
    return conv2d(mid, wp, bias, Padding::valid);
}

// --- broadcast bias ------------------------------------------------------------

Var add_chanvec(Var x, Var bias) {
    const Tensor& xv = x.val();
    const Tensor& bv = bias.val();
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(3))
        throw std::invalid_argument("add_chanvec: cannot add " + shape_str(bv.shape) + " over " +
                                    shape_str(xv.shape));
    int M = xv.dim(3);
    int64_t pixels = xv.size() / M;
    Tensor out = xv;
    for (int64_t p = 0; p < pixels; ++p)
        for (int m = 0; m < M; ++m) out.data[static_cast<size_t>(p) * M + m] += bv.data[static_cast<size_t>(m)];
    return x.tape->make_node(std::move(out), {x.id, bias.id}, [pixels, M](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        t.accumulate(t.parents(self)[0], g);
        int pb = t.parents(self)[1];
        if (!t.requires_grad(pb)) return;
        std::vector<double> db(static_cast<size_t>(M), 0.0);
        for (int64_t p = 0; p < pixels; ++p)
            for (int m = 0; m < M; ++m) db[static_cast<size_t>(m)] += g.data[static_cast<size_t>(p) * M + m];
        t.accumulate(pb, db);
    });
}

// --- pooling --------------------------------------------------------------------

Var avg_pool2d(Var x, int wh, int ww) {
    const Tensor& xv = x.val();
    if (xv.rank() != 4) throw std::invalid_argument("avg_pool2d: input must be (B,H,W,C)");
    if (wh < 1 || ww < 1) throw std::invalid_argument("avg_pool2d: window must be >= 1");
    int B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    int OH = H / wh, OW = W / ww;
    if (OH < 1 || OW < 1)
        throw std::invalid_argument("avg_pool2d: window (" + std::to_string(wh) + "," + std::to_string(ww) +
                                    ") larger than input " + shape_str(xv.shape));
    double inv = 1.0 / (wh * ww);
    Tensor out({B, OH, OW, C});
    for (int b = 0; b < B; ++b)
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                double* orow = &out.data[((static_cast<size_t>(b) * OH + oh) * OW + ow) * C];
                for (int dh = 0; dh < wh; ++dh)
                    for (int dw2 = 0; dw2 < ww; ++dw2) {
                        const double* xrow =
                            &xv.data[((static_cast<size_t>(b) * H + oh * wh + dh) * W + ow * ww + dw2) * C];
                        for (int c = 0; c < C; ++c) orow[c] += xrow[c];
                    }
                for (int c = 0; c < C; ++c) orow[c] *= inv;
            }
    return x.tape->make_node(std::move(out), {x.id}, [B, H, W, C, OH, OW, wh, ww, inv](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int p = t.parents(self)[0];
        if (!t.requires_grad(p)) return;
        std::vector<double> dx(t.value(p).data.size(), 0.0);
        for (int b = 0; b < B; ++b)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const double* grow = &g.data[((static_cast<size_t>(b) * OH + oh) * OW + ow) * C];
                    for (int dh = 0; dh < wh; ++dh)
                        for (int dw2 = 0; dw2 < ww; ++dw2) {
                            double* xrow = &dx[((static_cast<size_t>(b) * H + oh * wh + dh) * W + ow * ww + dw2) * C];
                            for (int c = 0; c < C; ++c) xrow[c] += grow[c] * inv;
                        }
                }
        t.accumulate(p, dx);
    });
}

// --- batch normalization ----------------------------------------------------------

namespace {

void check_bn_args(const Tensor& x, const Tensor& gamma, const Tensor& beta, const char* op) {
    if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": input must be (B,H,W,C)");
    int C = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw std::invalid_argument(std::string(op) + ": gamma/beta must be (" + std::to_string(C) + ")");
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                     double momentum, double eps) {
    const Tensor& xv = x.val();
    check_bn_args(xv, gamma.val(), beta.val(), "batch_norm_train");
    int C = xv.dim(3);
    int64_t N = xv.size() / C;
    if (N < 2) throw std::invalid_argument("batch_norm_train: needs batch*H*W >= 2 samples per map");

    std::vector<double> mean(static_cast<size_t>(C), 0.0), var(static_cast<size_t>(C), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += xv.data[static_cast<size_t>(i) * C + c];
    for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(N);
    for (int64_t i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
            double dvi = xv.data[static_cast<size_t>(i) * C + c] - mean[static_cast<size_t>(c)];
            var[static_cast<size_t>(c)] += dvi * dvi;
        }
    for (int c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(N);

    // Running statistics track the biased batch moments.
    for (int c = 0; c < C; ++c) {
        running_mean.data[static_cast<size_t>(c)] =
            momentum * running_mean.data[static_cast<size_t>(c)] + (1.0 - momentum) * mean[static_cast<size_t>(c)];
        running_var.data[static_cast<size_t>(c)] =
            momentum * running_var.data[static_cast<size_t>(c)] + (1.0 - momentum) * var[static_cast<size_t>(c)];
    }

    std::vector<double> inv_sd(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) inv_sd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

    const Tensor& gv = gamma.val();
    const Tensor& bv = beta.val();
    Tensor out(xv.shape);
    // xhat is cached for the backward rule.
    auto xhat = std::make_shared<std::vector<double>>(xv.data.size());
    for (int64_t i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
            size_t idx = static_cast<size_t>(i) * C + c;
            double xh = (xv.data[idx] - mean[static_cast<size_t>(c)]) * inv_sd[static_cast<size_t>(c)];
            (*xhat)[idx] = xh;
            out.data[idx] = gv.data[static_cast<size_t>(c)] * xh + bv.data[static_cast<size_t>(c)];
        }

    return x.tape->make_node(std::move(out), {x.id, gamma.id, beta.id},
                             [C, N, inv_sd, xhat](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int px = t.parents(self)[0], pg = t.parents(self)[1], pb = t.parents(self)[2];
        const auto& gam = t.value(pg).data;

        std::vector<double> dgamma(static_cast<size_t>(C), 0.0), dbeta(static_cast<size_t>(C), 0.0);
        std::vector<double> sum_dxhat(static_cast<size_t>(C), 0.0), sum_dxhat_xhat(static_cast<size_t>(C), 0.0);
        for (int64_t i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c) {
                size_t idx = static_cast<size_t>(i) * C + c;
                double gi = g.data[idx];
                dgamma[static_cast<size_t>(c)] += gi * (*xhat)[idx];
                dbeta[static_cast<size_t>(c)] += gi;
                double dxh = gi * gam[static_cast<size_t>(c)];
                sum_dxhat[static_cast<size_t>(c)] += dxh;
                sum_dxhat_xhat[static_cast<size_t>(c)] += dxh * (*xhat)[idx];
            }
        if (t.requires_grad(pg)) t.accumulate(pg, dgamma);
        if (t.requires_grad(pb)) t.accumulate(pb, dbeta);
        if (t.requires_grad(px)) {
            std::vector<double> dx(g.data.size());
            double invN = 1.0 / static_cast<double>(N);
            for (int64_t i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) {
                    size_t idx = static_cast<size_t>(i) * C + c;
                    double dxh = g.data[idx] * gam[static_cast<size_t>(c)];
                    dx[idx] = inv_sd[static_cast<size_t>(c)] * invN *
                              (static_cast<double>(N) * dxh - sum_dxhat[static_cast<size_t>(c)] -
                               (*xhat)[idx] * sum_dxhat_xhat[static_cast<size_t>(c)]);
                }
            t.accumulate(px, dx);
        }
    });
}

Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var, double eps) {
    const Tensor& xv = x.val();
    check_bn_args(xv, gamma.val(), beta.val(), "batch_norm_infer");
    int C = xv.dim(3);
    int64_t N = xv.size() / C;

    std::vector<double> inv_sd(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c)
        inv_sd[static_cast<size_t>(c)] = 1.0 / std::sqrt(running_var.data[static_cast<size_t>(c)] + eps);
    std::vector<double> mean = running_mean.data;

    const auto& gv = gamma.val().data;
    const auto& bv = beta.val().data;
    Tensor out(xv.shape);
    auto xhat = std::make_shared<std::vector<double>>(xv.data.size());
    for (int64_t i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
            size_t idx = static_cast<size_t>(i) * C + c;
            double xh = (xv.data[idx] - mean[static_cast<size_t>(c)]) * inv_sd[static_cast<size_t>(c)];
            (*xhat)[idx] = xh;
            out.data[idx] = gv[static_cast<size_t>(c)] * xh + bv[static_cast<size_t>(c)];
        }
    return x.tape->make_node(std::move(out), {x.id, gamma.id, beta.id},
                             [C, N, inv_sd, xhat](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int px = t.parents(self)[0], pg = t.parents(self)[1], pb = t.parents(self)[2];
        const auto& gam = t.value(pg).data;
        if (t.requires_grad(px)) {
            std::vector<double> dx(g.data.size());
            for (int64_t i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) {
                    size_t idx = static_cast<size_t>(i) * C + c;
                    dx[idx] = g.data[idx] * gam[static_cast<size_t>(c)] * inv_sd[static_cast<size_t>(c)];
                }
            t.accumulate(px, dx);
        }
        if (t.requires_grad(pg) || t.requires_grad(pb)) {
            std::vector<double> dgamma(static_cast<size_t>(C), 0.0), dbeta(static_cast<size_t>(C), 0.0);
            for (int64_t i = 0; i < N; ++i)
                for (int c = 0; c < C; ++c) {
                    size_t idx = static_cast<size_t>(i) * C + c;
                    dgamma[static_cast<size_t>(c)] += g.data[idx] * (*xhat)[idx];
                    dbeta[static_cast<size_t>(c)] += g.data[idx];
                }
            t.accumulate(pg, dgamma);
            t.accumulate(pb, dbeta);
        }
    });
}

// --- activations --------------------------------------------------------------

Var elu(Var x, double alpha) {
    Tensor out = x.val();
    for (double& v : out.data) v = v >= 0.0 ? v : alpha * (std::exp(v) - 1.0);
    return x.tape->make_node(std::move(out), {x.id}, [alpha](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        const auto& xv = t.value(t.parents(self)[0]).data;
        std::vector<double> dx(g.data.size());
        for (size_t i = 0; i < dx.size(); ++i)
            dx[i] = g.data[i] * (xv[i] >= 0.0 ? 1.0 : y[i] + alpha);
        t.accumulate(t.parents(self)[0], dx);
    });
}

Var relu(Var x) {
    Tensor out = x.val();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return x.tape->make_node(std::move(out), {x.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& xv = t.value(t.parents(self)[0]).data;
        std::vector<double> dx(g.data.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? g.data[i] : 0.0;
        t.accumulate(t.parents(self)[0], dx);
    });
}

Var sigmoid(Var x) {
    Tensor out = x.val();
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return x.tape->make_node(std::move(out), {x.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        std::vector<double> dx(g.data.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = g.data[i] * y[i] * (1.0 - y[i]);
        t.accumulate(t.parents(self)[0], dx);
    });
}

Var tanh_op(Var x) {
    Tensor out = x.val();
    for (double& v : out.data) v = std::tanh(v);
    return x.tape->make_node(std::move(out), {x.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        std::vector<double> dx(g.data.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = g.data[i] * (1.0 - y[i] * y[i]);
        t.accumulate(t.parents(self)[0], dx);
    });
}

// --- dropout -------------------------------------------------------------------

Var dropout(Var x, double p, Mode mode, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (mode == Mode::infer || p == 0.0) return x;
    double keep = 1.0 - p;
    double scale = 1.0 / keep;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto mask = std::make_shared<std::vector<double>>(x.val().data.size());
    Tensor out = x.val();
    for (size_t i = 0; i < out.data.size(); ++i) {
        double m = u(rng) < keep ? scale : 0.0;
        (*mask)[i] = m;
        out.data[i] *= m;
    }
    return x.tape->make_node(std::move(out), {x.id}, [mask](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        std::vector<double> dx(g.data.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = g.data[i] * (*mask)[i];
        t.accumulate(t.parents(self)[0], dx);
    });
}

// --- dense / softmax -------------------------------------------------------------

Var flatten(Var x) {
    const Shape& s = x.val().shape;
    if (s.size() < 2) throw std::invalid_argument("flatten: needs rank >= 2");
    int64_t rest = 1;
    for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
    return reshape(x, {s[0], static_cast<int>(rest)});
}

Var dense(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

Var softmax(Var logits) {
    const Tensor& lv = logits.val();
    if (lv.rank() != 2 || lv.dim(1) < 1)
        throw std::invalid_argument("softmax: logits must be (B,C) with C >= 1, got " + shape_str(lv.shape));
    int B = lv.dim(0), C = lv.dim(1);
    Tensor out(lv.shape);
    for (int b = 0; b < B; ++b) {
        const double* row = &lv.data[static_cast<size_t>(b) * C];
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        double* orow = &out.data[static_cast<size_t>(b) * C];
        for (int c = 0; c < C; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        for (int c = 0; c < C; ++c) orow[c] /= sum;
    }
    return logits.tape->make_node(std::move(out), {logits.id}, [B, C](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        std::vector<double> dx(g.data.size());
        for (int b = 0; b < B; ++b) {
            size_t off = static_cast<size_t>(b) * C;
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += g.data[off + c] * y[off + c];
            for (int c = 0; c < C; ++c) dx[off + c] = y[off + c] * (g.data[off + c] - dot);
        }
        t.accumulate(t.parents(self)[0], dx);
    });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                          const std::vector<double>& class_weights) {
    const Tensor& lv = logits.val();
    if (lv.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be (B,C)");
    int B = lv.dim(0), C = lv.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                                    " labels for batch " + std::to_string(B));
    if (static_cast<int>(class_weights.size()) != C)
        throw std::invalid_argument("softmax_cross_entropy: class_weights size must equal C");

    auto probs = std::make_shared<std::vector<double>>(lv.data.size());
    double loss = 0.0, wsum = 0.0;
    for (int b = 0; b < B; ++b) {
        int y = labels[static_cast<size_t>(b)];
        if (y < 0 || y >= C) throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const double* row = &lv.data[static_cast<size_t>(b) * C];
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
        double log_z = mx + std::log(sum);
        for (int c = 0; c < C; ++c) (*probs)[static_cast<size_t>(b) * C + c] = std::exp(row[c] - log_z);
        double w = class_weights[static_cast<size_t>(y)];
        loss += w * (log_z - row[y]);
        wsum += w;
    }
    loss /= wsum;

    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    auto weights_copy = std::make_shared<std::vector<double>>(class_weights);
    return logits.tape->make_node(Tensor::scalar(loss), {logits.id},
                                  [B, C, probs, labels_copy, weights_copy, wsum](Tape& t, int self) {
        double g = t.grad_buffer(self).data[0];
        int p = t.parents(self)[0];
        if (!t.requires_grad(p)) return;
        std::vector<double> dx(static_cast<size_t>(B) * C);
        for (int b = 0; b < B; ++b) {
            int y = (*labels_copy)[static_cast<size_t>(b)];
            double w = (*weights_copy)[static_cast<size_t>(y)] / wsum;
            for (int c = 0; c < C; ++c) {
                double pr = (*probs)[static_cast<size_t>(b) * C + c];
                dx[static_cast<size_t>(b) * C + c] = g * w * (pr - (c == y ? 1.0 : 0.0));
            }
        }
        t.accumulate(p, dx);
    });
}

}  // namespace tcfnet
