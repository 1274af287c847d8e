// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/fnb.hpp"

#include <cmath>
#include <iostream>
#include <memory>
#include <stdexcept>

namespace tcfnet {

FuzzyRuleSet::FuzzyRuleSet(int K_, int d_) : K(K_), d(d_) {
    if (K < 1 || d < 1) throw std::invalid_argument("FuzzyRuleSet: K and d must be >= 1");
    centroids = Tensor({K, d});
    log_a = Tensor({d});  // a = 1 elementwise
}

ActivationBuffer::ActivationBuffer(int capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity < 1) throw std::invalid_argument("ActivationBuffer: capacity must be >= 1");
}

void ActivationBuffer::collect(const std::vector<double>& v) {
    seen_ += 1;
    if (static_cast<int>(store_.size()) < capacity_) {
        store_.push_back(v);
        return;
    }
    // Reservoir step: keep each of the `seen_` vectors with equal probability.
    std::uniform_int_distribution<int64_t> pick(0, seen_ - 1);
    int64_t j = pick(rng_);
    if (j < capacity_) store_[static_cast<size_t>(j)] = v;
}

void ActivationBuffer::collect_batch(const Tensor& batch) {
    if (batch.rank() != 2) throw std::invalid_argument("collect_batch: expected (B,d)");
    int B = batch.dim(0), d = batch.dim(1);
    for (int b = 0; b < B; ++b)
        collect(std::vector<double>(batch.data.begin() + static_cast<int64_t>(b) * d,
                                    batch.data.begin() + static_cast<int64_t>(b + 1) * d));
}

void ActivationBuffer::clear() {
    store_.clear();
    seen_ = 0;
}

// --- forward / backward -----------------------------------------------------

Var fnb_forward(Var v, Var log_a, const Tensor& centroids, bool stop_input_grad) {
    const Tensor& vv = v.val();
    if (vv.rank() != 2) throw std::invalid_argument("fnb_forward: input must be (B,d)");
    int B = vv.dim(0), d = vv.dim(1);
    if (centroids.rank() != 2 || centroids.dim(1) != d)
        throw std::invalid_argument("fnb_forward: centroids " + shape_str(centroids.shape) +
                                    " incompatible with input dim " + std::to_string(d));
    int K = centroids.dim(0);
    const Tensor& lav = log_a.val();
    if (lav.rank() != 1 || lav.dim(0) != d)
        throw std::invalid_argument("fnb_forward: log_a must be (" + std::to_string(d) + ")");

    std::vector<double> inv_a2(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) inv_a2[static_cast<size_t>(j)] = std::exp(-2.0 * lav.data[static_cast<size_t>(j)]);

    Tensor out({B, K});
    auto scores = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * K);
    for (int b = 0; b < B; ++b) {
        const double* vrow = &vv.data[static_cast<size_t>(b) * d];
        double mx = -1e300;
        for (int k = 0; k < K; ++k) {
            const double* crow = &centroids.data[static_cast<size_t>(k) * d];
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                double diff = vrow[j] - crow[j];
                s -= 0.25 * diff * diff * inv_a2[static_cast<size_t>(j)];
            }
            (*scores)[static_cast<size_t>(b) * K + k] = s;
            mx = std::max(mx, s);
        }
        double sum = 0.0;
        double* orow = &out.data[static_cast<size_t>(b) * K];
        for (int k = 0; k < K; ++k) {
            orow[k] = std::exp((*scores)[static_cast<size_t>(b) * K + k] - mx);
            sum += orow[k];
        }
        for (int k = 0; k < K; ++k) orow[k] /= sum;
    }

    auto cent = std::make_shared<Tensor>(centroids);
    return v.tape->make_node(std::move(out), {v.id, log_a.id},
                             [B, K, d, cent, inv_a2, stop_input_grad](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        int pv = t.parents(self)[0], pa = t.parents(self)[1];
        const auto& vv = t.value(pv).data;
        bool need_dv = t.requires_grad(pv) && !stop_input_grad;
        bool need_da = t.requires_grad(pa);
        std::vector<double> dv(need_dv ? vv.size() : 0, 0.0);
        std::vector<double> da(need_da ? static_cast<size_t>(d) : 0, 0.0);
        for (int b = 0; b < B; ++b) {
            size_t off = static_cast<size_t>(b) * K;
            double dot = 0.0;
            for (int k = 0; k < K; ++k) dot += g.data[off + k] * y[off + k];
            const double* vrow = &vv[static_cast<size_t>(b) * d];
            for (int k = 0; k < K; ++k) {
                double ds = y[off + k] * (g.data[off + k] - dot);  // d loss / d score_k
                if (ds == 0.0) continue;
                const double* crow = &cent->data[static_cast<size_t>(k) * d];
                for (int j = 0; j < d; ++j) {
                    double diff = vrow[j] - crow[j];
                    double w = diff * inv_a2[static_cast<size_t>(j)];
                    if (need_dv) dv[static_cast<size_t>(b) * d + j] += ds * (-0.5) * w;
                    if (need_da) da[static_cast<size_t>(j)] += ds * 0.5 * diff * w;
                }
            }
        }
        if (need_dv) t.accumulate(pv, dv);
        if (need_da) t.accumulate(pa, da);
    });
}

std::vector<double> fnb_forward_product_oracle(const std::vector<double>& v,
                                               const Tensor& centroids,
                                               const std::vector<double>& a) {
    int K = centroids.dim(0), d = centroids.dim(1);
    if (static_cast<int>(v.size()) != d || static_cast<int>(a.size()) != d)
        throw std::invalid_argument("fnb_forward_product_oracle: dimension mismatch");
    std::vector<double> o(static_cast<size_t>(K));
    long double total = 0.0L;
    for (int k = 0; k < K; ++k) {
        long double prod = 1.0L;
        for (int j = 0; j < d; ++j) {
            long double diff = v[static_cast<size_t>(j)] - centroids.data[static_cast<size_t>(k) * d + j];
            long double ratio = diff / a[static_cast<size_t>(j)];
            prod *= expl(-0.25L * ratio * ratio);
        }
        o[static_cast<size_t>(k)] = static_cast<double>(prod);
        total += prod;
    }
    for (int k = 0; k < K; ++k) o[static_cast<size_t>(k)] = static_cast<double>(o[static_cast<size_t>(k)] / total);
    return o;
}

// --- fuzzy c-means ------------------------------------------------------------

Tensor fuzzy_cluster(const std::vector<std::vector<double>>& data, int K, double fuzzifier,
                     double tol, int max_iter, uint64_t seed) {
    int64_t n = static_cast<int64_t>(data.size());
    if (n < K)
        throw std::invalid_argument("fuzzy_cluster: need at least K=" + std::to_string(K) +
                                    " points, got " + std::to_string(n));
    if (K < 1) throw std::invalid_argument("fuzzy_cluster: K must be >= 1");
    if (fuzzifier <= 1.0) throw std::invalid_argument("fuzzy_cluster: fuzzifier must be > 1");
    int d = static_cast<int>(data[0].size());
    for (const auto& row : data)
        if (static_cast<int>(row.size()) != d) throw std::invalid_argument("fuzzy_cluster: ragged data");

    std::mt19937_64 rng(seed);

    // Seed centroids from K distinct data points; jitter duplicates so no two
    // centroids coincide at the start.
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int64_t> pick(0, i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    Tensor centroids({K, d});
    std::normal_distribution<double> jitter(0.0, 1e-9);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < d; ++j)
            centroids.data[static_cast<size_t>(k) * d + j] =
                data[static_cast<size_t>(idx[static_cast<size_t>(k)])][static_cast<size_t>(j)] + jitter(rng);

    double exponent = 1.0 / (fuzzifier - 1.0);
    std::vector<double> dist2(static_cast<size_t>(K));
    std::vector<double> u(static_cast<size_t>(K));
    Tensor next({K, d});
    std::vector<double> denom(static_cast<size_t>(K));

    for (int iter = 0; iter < max_iter; ++iter) {
        std::fill(next.data.begin(), next.data.end(), 0.0);
        std::fill(denom.begin(), denom.end(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            const auto& row = data[static_cast<size_t>(i)];
            int exact_hit = -1;
            for (int k = 0; k < K; ++k) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    double diff = row[static_cast<size_t>(j)] - centroids.data[static_cast<size_t>(k) * d + j];
                    s += diff * diff;
                }
                dist2[static_cast<size_t>(k)] = s;
                if (s == 0.0 && exact_hit < 0) exact_hit = k;
            }
            if (exact_hit >= 0) {
                std::fill(u.begin(), u.end(), 0.0);
                u[static_cast<size_t>(exact_hit)] = 1.0;
            } else {
                double total = 0.0;
                for (int k = 0; k < K; ++k) {
                    u[static_cast<size_t>(k)] = std::pow(1.0 / dist2[static_cast<size_t>(k)], exponent);
                    total += u[static_cast<size_t>(k)];
                }
                for (int k = 0; k < K; ++k) u[static_cast<size_t>(k)] /= total;
            }
            for (int k = 0; k < K; ++k) {
                double um = std::pow(u[static_cast<size_t>(k)], fuzzifier);
                denom[static_cast<size_t>(k)] += um;
                for (int j = 0; j < d; ++j)
                    next.data[static_cast<size_t>(k) * d + j] += um * row[static_cast<size_t>(j)];
            }
        }
        double shift = 0.0;
        for (int k = 0; k < K; ++k) {
            if (denom[static_cast<size_t>(k)] <= 0.0) {
                // Collapsed cluster: re-seed near a random point.
                std::uniform_int_distribution<int64_t> pick(0, n - 1);
                const auto& row = data[static_cast<size_t>(pick(rng))];
                for (int j = 0; j < d; ++j)
                    next.data[static_cast<size_t>(k) * d + j] = row[static_cast<size_t>(j)] + jitter(rng);
            } else {
                for (int j = 0; j < d; ++j)
                    next.data[static_cast<size_t>(k) * d + j] /= denom[static_cast<size_t>(k)];
            }
            for (int j = 0; j < d; ++j) {
                double delta = std::abs(next.data[static_cast<size_t>(k) * d + j] -
                                        centroids.data[static_cast<size_t>(k) * d + j]);
                shift = std::max(shift, delta);
            }
        }
        centroids.data = next.data;
        if (shift < tol) break;
    }
    return centroids;
}

void epoch_end_update(FuzzyRuleSet& rules, ActivationBuffer& buffer, double fuzzifier, double tol,
                      int max_iter) {
    if (static_cast<int>(buffer.store().size()) < rules.K) {
        std::cerr << "[fnb] warning: activation buffer holds " << buffer.store().size()
                  << " vectors (< K=" << rules.K << "); centroids left unchanged\n";
        buffer.clear();
        return;
    }
    std::uniform_int_distribution<uint64_t> seed_dist;
    uint64_t seed = seed_dist(buffer.rng());
    rules.centroids = fuzzy_cluster(buffer.store(), rules.K, fuzzifier, tol, max_iter, seed);
    buffer.clear();
}

}  // namespace tcfnet
