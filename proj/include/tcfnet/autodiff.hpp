// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "tcfnet/tensor.hpp"

namespace tcfnet {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& val() const;
    const Shape& shape() const;
    bool requires_grad() const;
};

// Reverse-mode tape over dense tensors. Nodes are appended in topological
// order by construction; backward() walks them in reverse. One forward pass
// per tape: rebuild (or reset) the tape for the next pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Extension point used by the layer library: append a node whose value is
    // already computed, with the rule that pulls grad(self) back to parents.
    Var make_node(Tensor value, std::vector<int> parents, BackwardFn backward);

    void backward(Var loss);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(Var v) const;
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    const std::vector<int>& parents(int id) const { return nodes_[static_cast<size_t>(id)].parents; }

    // Accumulate a contribution into a parent's gradient buffer. No-op when
    // the parent does not require grad.
    void accumulate(int id, const Tensor& contribution);
    void accumulate(int id, const std::vector<double>& contribution);
    Tensor& grad_buffer(int id);
    bool grad_touched(int id) const { return nodes_[static_cast<size_t>(id)].grad_touched; }

    size_t size() const { return nodes_.size(); }
    void reset();

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
        bool grad_touched = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// --- primitive ops -----------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var neg(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var maximum(Var a, Var b);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
// Row-broadcast add: (B,N) + (N) -> (B,N).
Var add_rowvec(Var m, Var v);

Var matmul(Var a, Var b);
Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& xs, int axis);
// Drop `axis` by picking `index` along it.
Var select(Var a, int axis, int index);

Var reduce_sum(Var a);
Var reduce_sum(Var a, int axis);
Var reduce_mean(Var a);
Var reduce_mean(Var a, int axis);

}  // namespace tcfnet
