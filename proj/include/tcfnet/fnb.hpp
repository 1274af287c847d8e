// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "tcfnet/autodiff.hpp"

namespace tcfnet {

// Fuzzy rule bank: K centroids over d-dimensional activations plus a
// learnable per-dimension scaling vector. The scaling is stored as log a so
// it stays strictly positive under unconstrained updates. Centroids start at
// zero and are refit from the previous training epoch's activations.
struct FuzzyRuleSet {
    int K = 4;
    int d = 0;
    Tensor centroids;  // (K, d), non-trainable
    Tensor log_a;      // (d), trainable

    FuzzyRuleSet() = default;
    FuzzyRuleSet(int K_, int d_);
};

// Bounded store of activation vectors from the current epoch; uniform
// reservoir sampling once full.
class ActivationBuffer {
public:
    explicit ActivationBuffer(int capacity = 4096, uint64_t seed = 0);

    void collect(const std::vector<double>& v);
    void collect_batch(const Tensor& batch);  // rows of (B,d)

    const std::vector<std::vector<double>>& store() const { return store_; }
    int64_t seen() const { return seen_; }
    void clear();

    std::mt19937_64& rng() { return rng_; }

private:
    int capacity_;
    int64_t seen_ = 0;
    std::vector<std::vector<double>> store_;
    std::mt19937_64 rng_;
};

// Rule activations for a batch: row b of the output is
//   softmax_k( sum_j -1/4 (v_bj - c_kj)^2 / a_j^2 ),
// the log-space form of the Gaussian-membership product t-norm followed by
// normalization. v (B,d) -> (B,K). Gradients flow to v and log_a; centroids
// are constants. Set stop_input_grad to cut the branch into the upstream
// network.
Var fnb_forward(Var v, Var log_a, const Tensor& centroids, bool stop_input_grad = false);

// Direct product-form evaluation of the same rule activations for one
// vector; the oracle the log-space path is checked against (underflows for
// large d, which is why the network uses the log-space form).
std::vector<double> fnb_forward_product_oracle(const std::vector<double>& v,
                                               const Tensor& centroids,
                                               const std::vector<double>& a);

// Fuzzy c-means. Returns (K,d) centroids.
//   memberships u_ik ∝ (1/||v_i - c_k||^2)^(1/(m-1)), rows normalized;
//   centroids    c_k = sum_i u_ik^m v_i / sum_i u_ik^m;
// iterated until the largest centroid shift drops below tol or max_iter.
Tensor fuzzy_cluster(const std::vector<std::vector<double>>& data, int K, double fuzzifier = 2.0,
                     double tol = 1e-5, int max_iter = 100, uint64_t seed = 0);

// Refit centroids from the buffer and clear it; the scaling vector is left
// untouched. An empty (or under-populated) buffer leaves centroids unchanged
// and warns on stderr.
void epoch_end_update(FuzzyRuleSet& rules, ActivationBuffer& buffer, double fuzzifier = 2.0,
                      double tol = 1e-5, int max_iter = 100);

}  // namespace tcfnet
