// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "tcfnet/adam.hpp"
#include "tcfnet/fnb.hpp"
#include "tcfnet/gradcheck.hpp"

using namespace tcfnet;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
    Tensor t(s);
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("single rule normalizes to exactly one") {
    FuzzyRuleSet rules(1, 4);
    Tape t;
    Var v = t.constant(Tensor({1, 4}, {0.3, -1.0, 2.0, 0.0}));
    Var la = t.constant(rules.log_a);
    Var o = fnb_forward(v, la, rules.centroids);
    CHECK(o.val().shape == Shape{1, 1});
    CHECK(o.val().data[0] == 1.0);
}

TEST_CASE("input sitting on a centroid wins the activation") {
    FuzzyRuleSet rules(3, 2);
    // centroids: (1,1), (5,5), (-3,2)
    rules.centroids = Tensor({3, 2}, {1, 1, 5, 5, -3, 2});
    Tape t;
    Var v = t.constant(Tensor({1, 2}, {1, 1}));
    Var o = fnb_forward(v, t.constant(rules.log_a), rules.centroids);
    const auto& y = o.val().data;
    CHECK(y[0] > y[1]);
    CHECK(y[0] > y[2]);
}

TEST_CASE("hand-evaluated two-rule case in one dimension") {
    // d=1, a=1, centroids {0,2}, v=0: scores (0, -1) -> softmax = (0.7311, 0.2689)
    FuzzyRuleSet rules(2, 1);
    rules.centroids = Tensor({2, 1}, {0.0, 2.0});
    Tape t;
    Var o = fnb_forward(t.constant(Tensor({1, 1}, {0.0})), t.constant(rules.log_a), rules.centroids);
    CHECK(o.val().data[0] == doctest::Approx(0.73105857863).epsilon(1e-9));
    CHECK(o.val().data[1] == doctest::Approx(0.26894142137).epsilon(1e-9));

    auto oracle = fnb_forward_product_oracle({0.0}, rules.centroids, {1.0});
    CHECK(o.val().data[0] == doctest::Approx(oracle[0]).epsilon(1e-12));
    CHECK(o.val().data[1] == doctest::Approx(oracle[1]).epsilon(1e-12));
}

TEST_CASE("outputs sum to one and stay in (0,1) on random inputs") {
    std::mt19937_64 rng(50);
    for (int trial = 0; trial < 200; ++trial) {
        int K = 1 + static_cast<int>(rng() % 6);
        int d = 1 + static_cast<int>(rng() % 12);
        FuzzyRuleSet rules(K, d);
        rules.centroids = random_tensor({K, d}, rng, 2.0);
        rules.log_a = random_tensor({d}, rng, 0.5);
        Tape t;
        Var o = fnb_forward(t.constant(random_tensor({3, d}, rng, 3.0)), t.constant(rules.log_a),
                            rules.centroids);
        for (int b = 0; b < 3; ++b) {
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                double y = o.val().data[static_cast<size_t>(b) * K + k];
                CHECK(y > 0.0);
                CHECK(y < 1.0 + 1e-15);
                sum += y;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("log-space path matches the direct product oracle for d up to 16") {
    std::mt19937_64 rng(51);
    for (int d = 1; d <= 16; ++d) {
        int K = 3;
        FuzzyRuleSet rules(K, d);
        rules.centroids = random_tensor({K, d}, rng, 1.5);
        std::vector<double> a(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) {
            a[static_cast<size_t>(j)] = 0.5 + 2.0 * std::abs(random_tensor({1}, rng).data[0]);
            rules.log_a.data[static_cast<size_t>(j)] = std::log(a[static_cast<size_t>(j)]);
        }
        Tensor v0 = random_tensor({1, d}, rng, 2.0);
        Tape t;
        Var o = fnb_forward(t.constant(v0), t.constant(rules.log_a), rules.centroids);
        auto oracle = fnb_forward_product_oracle(v0.data, rules.centroids, a);
        for (int k = 0; k < K; ++k) {
            double rel = std::abs(o.val().data[static_cast<size_t>(k)] - oracle[static_cast<size_t>(k)]) /
                         std::max(1e-300, oracle[static_cast<size_t>(k)]);
            CHECK(rel < 1e-9);
        }
    }
}

TEST_CASE("log-space path survives dimensions where the raw product underflows") {
    std::mt19937_64 rng(52);
    int d = 200, K = 4;
    FuzzyRuleSet rules(K, d);
    rules.centroids = random_tensor({K, d}, rng, 2.0);
    Tape t;
    Var o = fnb_forward(t.constant(random_tensor({1, d}, rng, 10.0)), t.constant(rules.log_a),
                        rules.centroids);
    double sum = 0.0;
    for (double y : o.val().data) {
        CHECK(y > 0.0);
        sum += y;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("common rescaling of a sharpens toward the nearest centroid") {
    std::mt19937_64 rng(53);
    int K = 4, d = 6;
    FuzzyRuleSet rules(K, d);
    rules.centroids = random_tensor({K, d}, rng, 2.0);
    Tensor v0 = random_tensor({1, d}, rng, 2.0);

    auto activations = [&](double log_shift) {
        Tensor la = rules.log_a;
        for (double& x : la.data) x += log_shift;
        Tape t;
        return fnb_forward(t.constant(v0), t.constant(la), rules.centroids).val().data;
    };
    auto base = activations(0.0);
    auto sharp = activations(-2.0);  // shrink a by e^-2
    int argmax_base = 0, argmax_sharp = 0;
    for (int k = 1; k < K; ++k) {
        if (base[static_cast<size_t>(k)] > base[static_cast<size_t>(argmax_base)]) argmax_base = k;
        if (sharp[static_cast<size_t>(k)] > sharp[static_cast<size_t>(argmax_sharp)]) argmax_sharp = k;
    }
    CHECK(argmax_base == argmax_sharp);
    CHECK(sharp[static_cast<size_t>(argmax_sharp)] > base[static_cast<size_t>(argmax_base)]);
}

TEST_CASE("gradients w.r.t. input and log scaling match finite differences") {
    std::mt19937_64 rng(54);
    for (int trial = 0; trial < 10; ++trial) {
        int K = 2 + static_cast<int>(rng() % 4);
        int d = 2 + static_cast<int>(rng() % 6);
        Tensor cent = random_tensor({K, d}, rng, 1.5);
        Tensor la0 = random_tensor({d}, rng, 0.4);
        Tensor v0 = random_tensor({2, d}, rng, 2.0);
        Tensor rand_w = random_tensor({2, K}, rng);  // random linear readout

        auto loss = [&](Tape& t, Var v, Var la) {
            Var o = fnb_forward(v, la, cent);
            return reduce_sum(mul(o, t.constant(rand_w)));
        };
        auto fv = [&](const Tensor& probe) {
            Tape t;
            return loss(t, t.leaf(probe, false), t.leaf(la0, false)).val().item();
        };
        auto fa = [&](const Tensor& probe) {
            Tape t;
            return loss(t, t.leaf(v0, false), t.leaf(probe, false)).val().item();
        };
        Tape t;
        Var v = t.leaf(v0, true);
        Var la = t.leaf(la0, true);
        t.backward(loss(t, v, la));
        CHECK(max_rel_error(t.grad(v), finite_diff_gradient(fv, v0)) < 1e-4);
        CHECK(max_rel_error(t.grad(la), finite_diff_gradient(fa, la0)) < 1e-4);
    }
}

TEST_CASE("all-equal centroids give uniform output and zero input gradient") {
    int K = 3, d = 4;
    Tensor cent({K, d});
    for (double& c : cent.data) c = 0.7;
    Tensor v0({1, d}, {1.0, -2.0, 0.5, 3.0});
    Tape t;
    Var v = t.leaf(v0, true);
    Var o = fnb_forward(v, t.constant(Tensor({d})), cent);
    for (double y : o.val().data) CHECK(y == doctest::Approx(1.0 / K).epsilon(1e-12));
    t.backward(reduce_sum(mul(o, o)));
    for (double g : t.grad(v).data) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("stop_input_grad cuts the branch into the upstream network") {
    Tensor cent({2, 3}, {0, 0, 0, 1, 1, 1});
    Tensor v0({1, 3}, {0.2, 0.4, 0.6});
    Tape t;
    Var v = t.leaf(v0, true);
    Var o = fnb_forward(v, t.constant(Tensor({3})), cent, /*stop_input_grad=*/true);
    t.backward(reduce_sum(mul(o, o)));
    for (double g : t.grad(v).data) CHECK(g == 0.0);
}

// --- activation buffer ------------------------------------------------------

TEST_CASE("buffer keeps everything under capacity") {
    ActivationBuffer buf(4096, 1);
    for (int i = 0; i < 100; ++i) buf.collect({static_cast<double>(i)});
    CHECK(buf.store().size() == 100);
    CHECK(buf.seen() == 100);
}

TEST_CASE("reservoir keeps exactly capacity items, uniformly") {
    // Push 0..999 into a capacity-8 buffer many times; each value should be
    // retained with probability 8/1000. Chi-square over 50 coarse bins.
    const int capacity = 8, n = 1000, repeats = 4000;
    std::vector<int> counts(50, 0);
    for (int rep = 0; rep < repeats; ++rep) {
        ActivationBuffer buf(capacity, static_cast<uint64_t>(rep));
        for (int i = 0; i < n; ++i) buf.collect({static_cast<double>(i)});
        REQUIRE(buf.store().size() == capacity);
        for (const auto& v : buf.store()) counts[static_cast<size_t>(v[0] / 20.0)] += 1;
    }
    double expected = static_cast<double>(capacity) * repeats / 50.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 49 dof: 99.9th percentile is ~85.4
    CHECK(chi2 < 85.4);
}

TEST_CASE("epoch end update refits centroids and clears the buffer") {
    FuzzyRuleSet rules(2, 1);
    ActivationBuffer buf(4096, 3);
    for (int i = 0; i < 50; ++i) buf.collect({0.0});
    for (int i = 0; i < 50; ++i) buf.collect({10.0});
    epoch_end_update(rules, buf);
    CHECK(buf.store().empty());
    double lo = std::min(rules.centroids.data[0], rules.centroids.data[1]);
    double hi = std::max(rules.centroids.data[0], rules.centroids.data[1]);
    CHECK(std::abs(lo - 0.0) < 0.1);
    CHECK(std::abs(hi - 10.0) < 0.1);
}

TEST_CASE("empty buffer leaves centroids unchanged") {
    FuzzyRuleSet rules(2, 3);
    rules.centroids = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor before = rules.centroids;
    ActivationBuffer buf(16, 0);
    epoch_end_update(rules, buf);
    CHECK(rules.centroids.data == before.data);
}

TEST_CASE("centroids start at zero before the first update") {
    FuzzyRuleSet rules(5, 7);
    for (double c : rules.centroids.data) CHECK(c == 0.0);
    for (double la : rules.log_a.data) CHECK(la == 0.0);  // a = 1
}

TEST_CASE("identical buffer and seed give identical centroids") {
    auto run = [] {
        std::mt19937_64 rng(9);
        FuzzyRuleSet rules(3, 2);
        ActivationBuffer buf(256, 42);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (int i = 0; i < 100; ++i) buf.collect({dist(rng), dist(rng)});
        epoch_end_update(rules, buf);
        return rules.centroids.data;
    };
    CHECK(run() == run());
}

// --- fuzzy c-means ------------------------------------------------------------

TEST_CASE("fcm separates two well-separated groups") {
    std::vector<std::vector<double>> data;
    for (int i = 0; i < 50; ++i) data.push_back({0.0});
    for (int i = 0; i < 50; ++i) data.push_back({10.0});
    Tensor c = fuzzy_cluster(data, 2, 2.0, 1e-5, 100, 7);
    double lo = std::min(c.data[0], c.data[1]);
    double hi = std::max(c.data[0], c.data[1]);
    CHECK(std::abs(lo - 0.0) < 0.1);
    CHECK(std::abs(hi - 10.0) < 0.1);
}

TEST_CASE("fcm with K equal to the number of distinct points recovers them") {
    std::vector<std::vector<double>> data{{0.0, 0.0}, {5.0, 1.0}, {-3.0, 4.0}};
    Tensor c = fuzzy_cluster(data, 3, 2.0, 1e-12, 500, 11);
    // every data point has some centroid within a tight radius
    for (const auto& p : data) {
        double best = 1e300;
        for (int k = 0; k < 3; ++k) {
            double d2 = 0.0;
            for (int j = 0; j < 2; ++j) {
                double diff = p[static_cast<size_t>(j)] - c.data[static_cast<size_t>(k) * 2 + j];
                d2 += diff * diff;
            }
            best = std::min(best, d2);
        }
        CHECK(best < 1e-4);
    }
}

TEST_CASE("fcm memberships row-normalize at every iteration") {
    // Recompute memberships against the returned centroids: rows sum to 1.
    std::mt19937_64 rng(60);
    std::vector<std::vector<double>> data;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < 40; ++i) data.push_back({dist(rng), dist(rng) + 3.0});
    Tensor c = fuzzy_cluster(data, 3, 2.0, 1e-5, 100, 3);
    for (const auto& p : data) {
        double total = 0.0;
        std::vector<double> u(3);
        for (int k = 0; k < 3; ++k) {
            double d2 = 0.0;
            for (int j = 0; j < 2; ++j) {
                double diff = p[static_cast<size_t>(j)] - c.data[static_cast<size_t>(k) * 2 + j];
                d2 += diff * diff;
            }
            u[static_cast<size_t>(k)] = 1.0 / d2;
            total += u[static_cast<size_t>(k)];
        }
        double sum = 0.0;
        for (int k = 0; k < 3; ++k) sum += u[static_cast<size_t>(k)] / total;
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("fcm rejects fewer points than clusters") {
    std::vector<std::vector<double>> data{{1.0}, {2.0}};
    CHECK_THROWS_AS(fuzzy_cluster(data, 3), std::invalid_argument);
}

TEST_CASE("fcm on one tight cluster keeps all centroids inside it") {
    std::mt19937_64 rng(61);
    std::vector<std::vector<double>> data;
    std::normal_distribution<double> dist(5.0, 0.05);
    for (int i = 0; i < 60; ++i) data.push_back({dist(rng)});
    Tensor c = fuzzy_cluster(data, 4, 2.0, 1e-5, 100, 13);
    for (double v : c.data) CHECK(std::abs(v - 5.0) < 0.5);
}

TEST_CASE("scaling vector stays positive through many optimizer updates") {
    // log-parameterization: a = exp(log_a) is positive whatever the updates do
    std::mt19937_64 rng(62);
    std::vector<Parameter> params{{"fnb.log_a", Tensor({4}), true}};
    AdamState st;
    st.lr = 0.05;
    std::normal_distribution<double> dist(0.0, 5.0);
    for (int step = 0; step < 500; ++step) {
        Tensor g({4});
        for (double& v : g.data) v = dist(rng);
        adam_step(params, {{"fnb.log_a", g}}, st);
        for (double la : params[0].tensor.data) CHECK(std::isfinite(la));
        for (double la : params[0].tensor.data) CHECK(std::exp(la) > 0.0);
    }
}
