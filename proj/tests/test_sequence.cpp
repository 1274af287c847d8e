// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "tcfnet/gradcheck.hpp"
#include "tcfnet/sequence.hpp"

using namespace tcfnet;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
    Tensor t(s);
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : t.data) v = dist(rng);
    return t;
}

LstmCellVars zero_cell(Tape& t, int F, int N) {
    auto z = [&](Shape s) { return t.constant(Tensor(std::move(s))); };
    return {z({F, N}), z({F, N}), z({F, N}), z({F, N}),
            z({N, N}), z({N, N}), z({N, N}), z({N, N}),
            z({N}),    z({N}),    z({N}),    z({N})};
}

struct CellTensors {
    Tensor w_i, w_f, w_o, w_c, u_i, u_f, u_o, u_c, b_i, b_f, b_o, b_c;
};

CellTensors random_cell(int F, int N, std::mt19937_64& rng) {
    auto r = [&](Shape s) { return random_tensor(std::move(s), rng, 0.4); };
    return {r({F, N}), r({F, N}), r({F, N}), r({F, N}),
            r({N, N}), r({N, N}), r({N, N}), r({N, N}),
            r({N}),    r({N}),    r({N}),    r({N})};
}

LstmCellVars bind_cell(Tape& t, const CellTensors& c) {
    return {t.constant(c.w_i), t.constant(c.w_f), t.constant(c.w_o), t.constant(c.w_c),
            t.constant(c.u_i), t.constant(c.u_f), t.constant(c.u_o), t.constant(c.u_c),
            t.constant(c.b_i), t.constant(c.b_f), t.constant(c.b_o), t.constant(c.b_c)};
}

}  // namespace

TEST_CASE("lstm cell at the all-zero point") {
    Tape t;
    LstmCellVars p = zero_cell(t, 3, 4);
    Var x = t.constant(Tensor({1, 3}));
    Var h0 = t.constant(Tensor({1, 4}));
    Var c0 = t.constant(Tensor({1, 4}));
    LstmStepOut out = lstm_cell_step(x, h0, c0, p);
    for (double v : out.c.val().data) CHECK(v == 0.0);
    for (double v : out.h.val().data) CHECK(v == 0.0);
}

TEST_CASE("lstm cell with zero weights and unit previous cell state") {
    // gates sit at 0.5, candidate is 0, so c = 0.5 and h = 0.25
    Tape t;
    LstmCellVars p = zero_cell(t, 3, 4);
    Var x = t.constant(Tensor({1, 3}));
    Var h0 = t.constant(Tensor({1, 4}));
    Var c0 = t.constant(Tensor::full({1, 4}, 1.0));
    LstmStepOut out = lstm_cell_step(x, h0, c0, p);
    for (double v : out.c.val().data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    for (double v : out.h.val().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("lstm gates stay strictly inside (0,1)") {
    std::mt19937_64 rng(31);
    Tape t;
    CellTensors ct = random_cell(5, 6, rng);
    LstmCellVars p = bind_cell(t, ct);
    Var x = t.constant(random_tensor({4, 5}, rng, 6.0));
    Var h0 = t.constant(random_tensor({4, 6}, rng, 6.0));
    Var i = sigmoid(add_rowvec(add(matmul(x, p.w_i), matmul(h0, p.u_i)), p.b_i));
    for (double v : i.val().data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("lstm layer on a length-1 sequence equals one cell step") {
    std::mt19937_64 rng(32);
    CellTensors ct = random_cell(3, 4, rng);
    Tensor x0 = random_tensor({2, 1, 3}, rng);

    Tape t;
    LstmCellVars p = bind_cell(t, ct);
    Var seq = t.constant(x0);
    Var last = lstm_layer(seq, p, LstmReturn::last);

    Var x_t = select(seq, 1, 0);
    LstmStepOut step = lstm_cell_step(x_t, t.constant(Tensor({2, 4})), t.constant(Tensor({2, 4})), p);
    CHECK(last.val().data == step.h.val().data);
}

TEST_CASE("return last equals step T of return all") {
    std::mt19937_64 rng(33);
    CellTensors ct = random_cell(3, 5, rng);
    Tensor x0 = random_tensor({2, 7, 3}, rng);
    Tape t;
    LstmCellVars p = bind_cell(t, ct);
    Var all = lstm_layer(t.constant(x0), p, LstmReturn::all);
    Var last = lstm_layer(t.constant(x0), p, LstmReturn::last);
    CHECK(all.val().shape == Shape{2, 7, 5});
    Var picked = select(all, 1, 6);
    for (size_t i = 0; i < last.val().data.size(); ++i)
        CHECK(picked.val().data[i] == doctest::Approx(last.val().data[i]).epsilon(1e-15));
}

TEST_CASE("30-unit layer on a (6-step, 6-feature) input yields 30 values") {
    std::mt19937_64 rng(34);
    CellTensors ct = random_cell(6, 30, rng);
    Tape t;
    Var out = lstm_layer(t.constant(random_tensor({1, 6, 6}, rng)), bind_cell(t, ct), LstmReturn::last);
    CHECK(out.val().shape == Shape{1, 30});
}

TEST_CASE("lstm layer rejects an empty sequence") {
    Tape t;
    LstmCellVars p = zero_cell(t, 3, 4);
    CHECK_THROWS_AS(lstm_layer(t.constant(Tensor({2, 3})), p, LstmReturn::all), std::invalid_argument);
}

TEST_CASE("lstm gradient through 5 unrolled steps matches finite differences") {
    std::mt19937_64 rng(35);
    for (int trial = 0; trial < 3; ++trial) {
        CellTensors ct = random_cell(3, 4, rng);
        Tensor x0 = random_tensor({2, 5, 3}, rng);

        auto loss_with = [&](const CellTensors& probe_ct, const Tensor& probe_x) {
            Tape t;
            LstmCellVars p = bind_cell(t, probe_ct);
            Var out = lstm_layer(t.leaf(probe_x, false), p, LstmReturn::last);
            return reduce_sum(mul(out, out)).val().item();
        };

        // gradient w.r.t. the input sequence
        auto fx = [&](const Tensor& probe) {
            Tape t;
            LstmCellVars p = bind_cell(t, ct);
            Var out = lstm_layer(t.leaf(probe, false), p, LstmReturn::last);
            return reduce_sum(mul(out, out)).val().item();
        };
        Tape t;
        LstmCellVars p = bind_cell(t, ct);
        Var xv = t.leaf(x0, true);
        Var out = lstm_layer(xv, p, LstmReturn::last);
        t.backward(reduce_sum(mul(out, out)));
        CHECK(max_rel_error(t.grad(xv), finite_diff_gradient(fx, x0)) < 1e-4);

        // gradient w.r.t. one recurrent weight matrix
        auto fu = [&](const Tensor& probe) {
            CellTensors c2 = ct;
            c2.u_c = probe;
            return loss_with(c2, x0);
        };
        Tape t2;
        LstmCellVars p2 = bind_cell(t2, ct);
        p2.u_c = t2.leaf(ct.u_c, true);
        Var out2 = lstm_layer(t2.leaf(x0, false), p2, LstmReturn::last);
        t2.backward(reduce_sum(mul(out2, out2)));
        CHECK(max_rel_error(t2.grad(p2.u_c), finite_diff_gradient(fu, ct.u_c)) < 1e-4);
    }
}

// --- TCN -----------------------------------------------------------------

namespace {

struct TcnTensors {
    std::vector<Tensor> w1, b1, w2, b2;
    std::vector<std::optional<Tensor>> pw, pb;
};

TcnTensors random_tcn(int C, const TcnConfig& cfg, std::mt19937_64& rng) {
    TcnTensors t;
    int in_c = C;
    for (size_t i = 0; i < cfg.dilations.size(); ++i) {
        t.w1.push_back(random_tensor({cfg.kernel_size, in_c, cfg.filters}, rng, 0.4));
        t.b1.push_back(random_tensor({cfg.filters}, rng, 0.1));
        t.w2.push_back(random_tensor({cfg.kernel_size, cfg.filters, cfg.filters}, rng, 0.4));
        t.b2.push_back(random_tensor({cfg.filters}, rng, 0.1));
        if (in_c != cfg.filters) {
            t.pw.push_back(random_tensor({1, in_c, cfg.filters}, rng, 0.4));
            t.pb.push_back(random_tensor({cfg.filters}, rng, 0.1));
        } else {
            t.pw.push_back(std::nullopt);
            t.pb.push_back(std::nullopt);
        }
        in_c = cfg.filters;
    }
    return t;
}

std::vector<TcnBlockVars> bind_tcn(Tape& t, const TcnTensors& tt) {
    std::vector<TcnBlockVars> blocks;
    for (size_t i = 0; i < tt.w1.size(); ++i) {
        TcnBlockVars b{t.constant(tt.w1[i]), t.constant(tt.b1[i]), t.constant(tt.w2[i]),
                       t.constant(tt.b2[i]), std::nullopt, std::nullopt};
        if (tt.pw[i]) {
            b.proj_w = t.constant(*tt.pw[i]);
            b.proj_b = t.constant(*tt.pb[i]);
        }
        blocks.push_back(b);
    }
    return blocks;
}

}  // namespace

TEST_CASE("tcn on a (6,8) sequence emits the table's 6-vector") {
    std::mt19937_64 rng(40);
    TcnConfig cfg;  // filters 6, kernel 2, dilations (1,2)
    TcnTensors tt = random_tcn(8, cfg, rng);
    Tape t;
    std::mt19937_64 drop_rng(0);
    Var out = tcn_forward(t.constant(random_tensor({1, 6, 8}, rng)), bind_tcn(t, tt), cfg, Mode::infer,
                          drop_rng, false);
    CHECK(out.val().shape == Shape{1, 6});
}

TEST_CASE("tcn with zeroed conv kernels reduces to the projected last step") {
    std::mt19937_64 rng(41);
    TcnConfig cfg;
    cfg.dilations = {1};
    Tensor x0 = random_tensor({1, 6, 8}, rng);
    Tensor pw = random_tensor({1, 8, 6}, rng, 0.5);
    Tensor pb = random_tensor({6}, rng, 0.1);

    Tape t;
    std::mt19937_64 drop_rng(0);
    std::vector<TcnBlockVars> blocks{{t.constant(Tensor({2, 8, 6})), t.constant(Tensor({6})),
                                      t.constant(Tensor({2, 6, 6})), t.constant(Tensor({6})),
                                      t.constant(pw), t.constant(pb)}};
    Var out = tcn_forward(t.constant(x0), blocks, cfg, Mode::infer, drop_rng, false);

    // conv path is elu(elu(0)) = 0, so output = elu(projection of last step)
    for (int f = 0; f < 6; ++f) {
        double acc = pb.data[static_cast<size_t>(f)];
        for (int c = 0; c < 8; ++c)
            acc += x0.data[static_cast<size_t>(5) * 8 + c] * pw.data[static_cast<size_t>(c) * 6 + f];
        double expect = acc >= 0 ? acc : std::exp(acc) - 1.0;
        CHECK(out.val().data[static_cast<size_t>(f)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("tcn causality: perturbing time t leaves earlier outputs unchanged") {
    std::mt19937_64 rng(42);
    TcnConfig cfg;
    TcnTensors tt = random_tcn(5, cfg, rng);
    Tensor x0 = random_tensor({1, 8, 5}, rng);

    auto run = [&](const Tensor& x) {
        Tape t;
        std::mt19937_64 drop_rng(0);
        return tcn_forward(t.constant(x), bind_tcn(t, tt), cfg, Mode::infer, drop_rng, true).val();
    };
    Tensor base = run(x0);
    for (int tp = 1; tp < 8; ++tp) {
        Tensor perturbed = x0;
        for (int c = 0; c < 5; ++c) perturbed.data[static_cast<size_t>(tp) * 5 + c] += 7.7;
        Tensor after = run(perturbed);
        for (int ti = 0; ti < tp; ++ti)
            for (int f = 0; f < cfg.filters; ++f)
                CHECK(after.data[static_cast<size_t>(ti) * cfg.filters + f] ==
                      base.data[static_cast<size_t>(ti) * cfg.filters + f]);
    }
}

TEST_CASE("tcn rejects sequences shorter than the required minimum") {
    std::mt19937_64 rng(43);
    TcnConfig cfg;
    cfg.dilations = {1, 4};  // requires T >= 5
    TcnTensors tt = random_tcn(3, cfg, rng);
    Tape t;
    std::mt19937_64 drop_rng(0);
    CHECK(tcn_min_sequence_length(cfg) == 5);
    CHECK_THROWS_WITH_AS(tcn_forward(t.constant(random_tensor({1, 4, 3}, rng)), bind_tcn(t, tt), cfg,
                                     Mode::infer, drop_rng, false),
                         doctest::Contains("minimum 5"), std::invalid_argument);
}

TEST_CASE("tcn gradient matches finite differences") {
    std::mt19937_64 rng(44);
    TcnConfig cfg;
    cfg.dropout_p = 0.0;
    TcnTensors tt = random_tcn(4, cfg, rng);
    Tensor x0 = random_tensor({2, 6, 4}, rng);
    auto f = [&](const Tensor& probe) {
        Tape t;
        std::mt19937_64 drop_rng(0);
        Var out = tcn_forward(t.leaf(probe, false), bind_tcn(t, tt), cfg, Mode::infer, drop_rng, false);
        return reduce_sum(mul(out, out)).val().item();
    };
    Tape t;
    std::mt19937_64 drop_rng(0);
    Var x = t.leaf(x0, true);
    Var out = tcn_forward(x, bind_tcn(t, tt), cfg, Mode::infer, drop_rng, false);
    t.backward(reduce_sum(mul(out, out)));
    CHECK(max_rel_error(t.grad(x), finite_diff_gradient(f, x0)) < 1e-4);
}

TEST_CASE("stacked lstm determinism under a fixed seed") {
    auto run = [] {
        std::mt19937_64 rng(77);
        CellTensors c1 = random_cell(6, 30, rng);
        CellTensors c2 = random_cell(30, 30, rng);
        Tape t;
        Var seq = t.constant(random_tensor({2, 6, 6}, rng));
        Var h1 = lstm_layer(seq, bind_cell(t, c1), LstmReturn::all);
        Var h2 = lstm_layer(h1, bind_cell(t, c2), LstmReturn::last);
        return h2.val().data;
    };
    CHECK(run() == run());
}
