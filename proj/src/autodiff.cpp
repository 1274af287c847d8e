// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace tcfnet {

const Tensor& Var::val() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make_node(Tensor value, std::vector<int> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (int p : parents)
        if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
}

void Tape::accumulate(int id, const Tensor& contribution) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (contribution.shape != n.value.shape)
        throw std::logic_error("gradient shape " + shape_str(contribution.shape) +
                               " does not match value shape " + shape_str(n.value.shape));
    accumulate(id, contribution.data);
}

void Tape::accumulate(int id, const std::vector<double>& contribution) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& g = grad_buffer(id);
    for (size_t i = 0; i < contribution.size(); ++i) g.data[i] += contribution[i];
    n.grad_touched = true;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::logic_error("loss belongs to a different tape");
    if (backward_done_) throw std::logic_error("backward() already ran; reset the tape first");
    const Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.size() != 1)
        throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                    shape_str(ln.value.shape));
    backward_done_ = true;
    if (!ln.requires_grad) return;  // loss constant: all gradients are zero

    grad_buffer(loss.id).data[0] = 1.0;
    nodes_[static_cast<size_t>(loss.id)].grad_touched = true;

    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.grad_touched || !n.backward) continue;
        n.backward(*this, i);
    }
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) throw std::logic_error("grad() on a node that does not require grad");
    if (n.grad.data.empty()) {
        // Untouched: return an owned zero tensor per node so callers can read it.
        const_cast<Node&>(n).grad = Tensor(n.value.shape);
    }
    return n.grad;
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

// --- helpers -------------------------------------------------------------

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.val().shape != b.val().shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.val().shape) +
                                    " vs " + shape_str(b.val().shape));
    if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

int64_t stride_after(const Shape& s, int axis) {
    int64_t st = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) st *= s[i];
    return st;
}

}  // namespace

// --- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tensor out = a.val();
    const auto& bd = b.val().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
    return a.tape->make_node(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        t.accumulate(t.parents(self)[0], g);
        t.accumulate(t.parents(self)[1], g);
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.val();
    const auto& bd = b.val().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bd[i];
    return a.tape->make_node(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        t.accumulate(t.parents(self)[0], g);
        std::vector<double> ng(g.data.size());
        for (size_t i = 0; i < ng.size(); ++i) ng[i] = -g.data[i];
        t.accumulate(t.parents(self)[1], ng);
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.val();
    const auto& bd = b.val().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
    return a.tape->make_node(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int pa = t.parents(self)[0], pb = t.parents(self)[1];
        const auto& av = t.value(pa).data;
        const auto& bv = t.value(pb).data;
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] * bv[i];
        t.accumulate(pa, buf);
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] * av[i];
        t.accumulate(pb, buf);
    });
}

Var divide(Var a, Var b) {
    check_same_shape(a, b, "div");
    Tensor out = a.val();
    const auto& bd = b.val().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bd[i];
    return a.tape->make_node(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int pa = t.parents(self)[0], pb = t.parents(self)[1];
        const auto& av = t.value(pa).data;
        const auto& bv = t.value(pb).data;
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] / bv[i];
        t.accumulate(pa, buf);
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = -g.data[i] * av[i] / (bv[i] * bv[i]);
        t.accumulate(pb, buf);
    });
}

Var neg(Var a) {
    Tensor out = a.val();
    for (double& v : out.data) v = -v;
    return a.tape->make_node(std::move(out), {a.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        std::vector<double> ng(g.data.size());
        for (size_t i = 0; i < ng.size(); ++i) ng[i] = -g.data[i];
        t.accumulate(t.parents(self)[0], ng);
    });
}

Var exp_op(Var a) {
    Tensor out = a.val();
    for (double& v : out.data) v = std::exp(v);
    return a.tape->make_node(std::move(out), {a.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] * y[i];
        t.accumulate(t.parents(self)[0], buf);
    });
}

Var log_op(Var a) {
    Tensor out = a.val();
    for (double& v : out.data) v = std::log(v);
    return a.tape->make_node(std::move(out), {a.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& x = t.value(t.parents(self)[0]).data;
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] / x[i];
        t.accumulate(t.parents(self)[0], buf);
    });
}

Var maximum(Var a, Var b) {
    check_same_shape(a, b, "maximum");
    Tensor out = a.val();
    const auto& bd = b.val().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(out.data[i], bd[i]);
    return a.tape->make_node(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int pa = t.parents(self)[0], pb = t.parents(self)[1];
        const auto& av = t.value(pa).data;
        const auto& bv = t.value(pb).data;
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = av[i] >= bv[i] ? g.data[i] : 0.0;
        t.accumulate(pa, buf);
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = av[i] >= bv[i] ? 0.0 : g.data[i];
        t.accumulate(pb, buf);
    });
}

Var add_scalar(Var a, double c) {
    Tensor out = a.val();
    for (double& v : out.data) v += c;
    return a.tape->make_node(std::move(out), {a.id}, [](Tape& t, int self) {
        t.accumulate(t.parents(self)[0], t.grad_buffer(self));
    });
}

Var mul_scalar(Var a, double c) {
    Tensor out = a.val();
    for (double& v : out.data) v *= c;
    return a.tape->make_node(std::move(out), {a.id}, [c](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        std::vector<double> buf(g.data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = g.data[i] * c;
        t.accumulate(t.parents(self)[0], buf);
    });
}

Var add_rowvec(Var m, Var v) {
    const Tensor& mv = m.val();
    const Tensor& vv = v.val();
    if (mv.rank() != 2 || vv.rank() != 1 || mv.dim(1) != vv.dim(0))
        throw std::invalid_argument("add_rowvec: incompatible shapes " + shape_str(mv.shape) + " + " +
                                    shape_str(vv.shape));
    Tensor out = mv;
    int rows = mv.dim(0), cols = mv.dim(1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.data[static_cast<size_t>(r) * cols + c] += vv.data[static_cast<size_t>(c)];
    return m.tape->make_node(std::move(out), {m.id, v.id}, [rows, cols](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        t.accumulate(t.parents(self)[0], g);
        std::vector<double> gv(static_cast<size_t>(cols), 0.0);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) gv[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r) * cols + c];
        t.accumulate(t.parents(self)[1], gv);
    });
}

// --- matmul ----------------------------------------------------------------

Var matmul(Var a, Var b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                                    shape_str(bv.shape));
    int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
    Tensor out({M, N});
    for (int i = 0; i < M; ++i) {
        const double* arow = &av.data[static_cast<size_t>(i) * K];
        double* orow = &out.data[static_cast<size_t>(i) * N];
        for (int k = 0; k < K; ++k) {
            double aik = arow[k];
            const double* brow = &bv.data[static_cast<size_t>(k) * N];
            for (int j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    }
    return a.tape->make_node(std::move(out), {a.id, b.id}, [M, K, N](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int pa = t.parents(self)[0], pb = t.parents(self)[1];
        const auto& av2 = t.value(pa).data;
        const auto& bv2 = t.value(pb).data;
        // dA = dC . B^T
        std::vector<double> da(static_cast<size_t>(M) * K);
        for (int i = 0; i < M; ++i) {
            const double* grow = &g.data[static_cast<size_t>(i) * N];
            for (int k = 0; k < K; ++k) {
                const double* brow = &bv2[static_cast<size_t>(k) * N];
                double acc = 0.0;
                for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                da[static_cast<size_t>(i) * K + k] = acc;
            }
        }
        t.accumulate(pa, da);
        // dB = A^T . dC
        std::vector<double> db(static_cast<size_t>(K) * N, 0.0);
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
                double aik = av2[static_cast<size_t>(i) * K + k];
                const double* grow = &g.data[static_cast<size_t>(i) * N];
                double* drow = &db[static_cast<size_t>(k) * N];
                for (int j = 0; j < N; ++j) drow[j] += aik * grow[j];
            }
        t.accumulate(pb, db);
    });
}

// --- shape ops ---------------------------------------------------------------

Var reshape(Var a, Shape shape) {
    if (numel(shape) != a.val().size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.val().shape) + " as " +
                                    shape_str(shape));
    Tensor out(shape, a.val().data);
    return a.tape->make_node(std::move(out), {a.id}, [](Tape& t, int self) {
        t.accumulate(t.parents(self)[0], t.grad_buffer(self).data);
    });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = xs[0].val().shape;
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = s0;
    int axis_total = 0;
    for (const Var& x : xs) {
        const Shape& s = x.val().shape;
        if (s.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        axis_total += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;

    int64_t inner = stride_after(s0, axis);
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];

    Tensor out(out_shape);
    std::vector<int> ids;
    std::vector<int64_t> spans;  // axis extent * inner, per input
    int64_t out_span = static_cast<int64_t>(axis_total) * inner;
    int64_t offset = 0;
    for (const Var& x : xs) {
        const Tensor& xv = x.val();
        int64_t span = static_cast<int64_t>(xv.shape[static_cast<size_t>(axis)]) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(&xv.data[static_cast<size_t>(o * span)], span,
                        &out.data[static_cast<size_t>(o * out_span + offset)]);
        offset += span;
        ids.push_back(x.id);
        spans.push_back(span);
    }
    return xs[0].tape->make_node(std::move(out), ids, [outer, out_span, spans](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int64_t offset2 = 0;
        for (size_t i = 0; i < spans.size(); ++i) {
            int p = t.parents(self)[i];
            if (t.requires_grad(p)) {
                std::vector<double> buf(static_cast<size_t>(outer * spans[i]));
                for (int64_t o = 0; o < outer; ++o)
                    std::copy_n(&g.data[static_cast<size_t>(o * out_span + offset2)], spans[i],
                                &buf[static_cast<size_t>(o * spans[i])]);
                t.accumulate(p, buf);
            }
            offset2 += spans[i];
        }
    });
}

Var select(Var a, int axis, int index) {
    const Shape& s = a.val().shape;
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("select: axis out of range");
    if (index < 0 || index >= s[static_cast<size_t>(axis)])
        throw std::invalid_argument("select: index out of range");
    Shape out_shape;
    for (size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    int64_t inner = stride_after(s, axis);
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    int64_t axis_n = s[static_cast<size_t>(axis)];

    Tensor out(out_shape);
    const Tensor& av = a.val();
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(&av.data[static_cast<size_t>((o * axis_n + index) * inner)], inner,
                    &out.data[static_cast<size_t>(o * inner)]);
    return a.tape->make_node(std::move(out), {a.id}, [outer, inner, axis_n, index](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int p = t.parents(self)[0];
        if (!t.requires_grad(p)) return;
        std::vector<double> buf(t.value(p).data.size(), 0.0);
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(&g.data[static_cast<size_t>(o * inner)], inner,
                        &buf[static_cast<size_t>((o * axis_n + index) * inner)]);
        t.accumulate(p, buf);
    });
}

// --- reductions ---------------------------------------------------------------

Var reduce_sum(Var a) {
    double s = 0.0;
    for (double v : a.val().data) s += v;
    return a.tape->make_node(Tensor::scalar(s), {a.id}, [](Tape& t, int self) {
        double g = t.grad_buffer(self).data[0];
        int p = t.parents(self)[0];
        if (!t.requires_grad(p)) return;
        std::vector<double> buf(t.value(p).data.size(), g);
        t.accumulate(p, buf);
    });
}

Var reduce_mean(Var a) {
    double inv = 1.0 / static_cast<double>(a.val().size());
    return mul_scalar(reduce_sum(a), inv);
}

Var reduce_sum(Var a, int axis) {
    const Shape& s = a.val().shape;
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("reduce_sum: axis out of range");
    Shape out_shape;
    for (size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    int64_t inner = stride_after(s, axis);
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    int64_t axis_n = s[static_cast<size_t>(axis)];

    Tensor out(out_shape);
    const auto& ad = a.val().data;
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < axis_n; ++k)
            for (int64_t i = 0; i < inner; ++i)
                out.data[static_cast<size_t>(o * inner + i)] += ad[static_cast<size_t>((o * axis_n + k) * inner + i)];
    return a.tape->make_node(std::move(out), {a.id}, [outer, inner, axis_n](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        int p = t.parents(self)[0];
        if (!t.requires_grad(p)) return;
        std::vector<double> buf(t.value(p).data.size());
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < axis_n; ++k)
                for (int64_t i = 0; i < inner; ++i)
                    buf[static_cast<size_t>((o * axis_n + k) * inner + i)] = g.data[static_cast<size_t>(o * inner + i)];
        t.accumulate(p, buf);
    });
}

Var reduce_mean(Var a, int axis) {
    double inv = 1.0 / static_cast<double>(a.val().shape[static_cast<size_t>(axis)]);
    return mul_scalar(reduce_sum(a, axis), inv);
}

}  // namespace tcfnet
