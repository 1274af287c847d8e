// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "tcfnet/adam.hpp"
#include "tcfnet/autodiff.hpp"
#include "tcfnet/gradcheck.hpp"
#include "tcfnet/layers.hpp"

using namespace tcfnet;

TEST_CASE("elementwise forward values") {
    Tape tape;
    Var a = tape.leaf(Tensor({2}, {1, 2}), true);
    Var b = tape.leaf(Tensor({2}, {3, 4}), true);
    CHECK(add(a, b).val().data == std::vector<double>{4, 6});
    CHECK(sub(a, b).val().data == std::vector<double>{-2, -2});
    CHECK(mul(a, b).val().data == std::vector<double>{3, 8});
    CHECK(divide(b, a).val().data == std::vector<double>{3, 2});
    CHECK(neg(a).val().data == std::vector<double>{-1, -2});
}

TEST_CASE("add rejects mismatched shapes naming them") {
    Tape tape;
    Var a = tape.leaf(Tensor({2}, {1, 2}), false);
    Var b = tape.leaf(Tensor({3}, {1, 2, 3}), false);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2)"), std::invalid_argument);
}

TEST_CASE("matmul identity case") {
    Tape tape;
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.data[static_cast<size_t>(i) * 3 + i] = 1.0;
    Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
    Var r = matmul(tape.constant(eye), tape.constant(a));
    CHECK(r.val().data == a.data);
}

TEST_CASE("concat along axis 0") {
    Tape tape;
    Var a = tape.constant(Tensor({2}, {1, 2}));
    Var b = tape.constant(Tensor({1}, {3}));
    Var c = concat({a, b}, 0);
    CHECK(c.val().shape == Shape{3});
    CHECK(c.val().data == std::vector<double>{1, 2, 3});
}

TEST_CASE("concat along axis 1 and its gradient routing") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Var b = tape.leaf(Tensor({2, 1}, {5, 6}), true);
    Var c = concat({a, b}, 1);
    CHECK(c.val().shape == Shape{2, 3});
    CHECK(c.val().data == std::vector<double>{1, 2, 5, 3, 4, 6});
    Var loss = reduce_sum(mul(c, c));
    tape.backward(loss);
    CHECK(tape.grad(a).data == std::vector<double>{2, 4, 6, 8});
    CHECK(tape.grad(b).data == std::vector<double>{10, 12});
}

TEST_CASE("backward of sum of squares") {
    Tape tape;
    Var w = tape.leaf(Tensor({2}, {1, -2}), true);
    Var loss = reduce_sum(mul(w, w));
    tape.backward(loss);
    CHECK(tape.grad(w).data == std::vector<double>{2, -4});
}

TEST_CASE("backward of sum of exp at zero") {
    Tape tape;
    Var w = tape.leaf(Tensor({1}, {0}), true);
    Var loss = reduce_sum(exp_op(w));
    tape.backward(loss);
    CHECK(tape.grad(w).data[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    Var w = tape.leaf(Tensor({2}, {1, 2}), true);
    Var y = mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("tape refuses a second backward without reset") {
    Tape tape;
    Var w = tape.leaf(Tensor({1}, {2}), true);
    Var loss = reduce_sum(mul(w, w));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
    tape.reset();
    CHECK(tape.size() == 0);
}

TEST_CASE("finite differences: analytic derivative of x^2") {
    auto f = [](const Tensor& x) { return x.data[0] * x.data[0]; };
    Tensor x({1}, {3.0});
    Tensor g = finite_diff_gradient(f, x, 1e-5);
    CHECK(g.data[0] == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("finite differences: linear function has all-ones gradient") {
    auto f = [](const Tensor& x) {
        double s = 0;
        for (double v : x.data) s += v;
        return s;
    };
    Tensor x({5}, {0.3, -1.2, 4.0, 0.0, 2.5});
    Tensor g = finite_diff_gradient(f, x, 1e-5);
    for (double v : g.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("random 3-layer MLP gradient matches finite differences") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x0 = truncated_normal({3, 4}, 1.0, rng);
        Tensor w1 = truncated_normal({4, 5}, 0.7, rng);
        Tensor b1 = truncated_normal({5}, 0.3, rng);
        Tensor w2 = truncated_normal({5, 4}, 0.7, rng);
        Tensor b2 = truncated_normal({4}, 0.3, rng);
        Tensor w3 = truncated_normal({4, 2}, 0.7, rng);
        Tensor b3 = truncated_normal({2}, 0.3, rng);

        auto run = [&](const Tensor& wprobe, int which) {
            return [&, which, wprobe](const Tensor& probe) {
                Tape t;
                Var x = t.constant(x0);
                Var v1 = t.leaf(which == 0 ? probe : w1, true);
                Var v2 = t.leaf(which == 1 ? probe : w2, true);
                Var v3 = t.leaf(which == 2 ? probe : w3, true);
                Var h1 = relu(add_rowvec(matmul(x, v1), t.constant(b1)));
                Var h2 = sigmoid(add_rowvec(matmul(h1, v2), t.constant(b2)));
                Var out = add_rowvec(matmul(h2, v3), t.constant(b3));
                return reduce_sum(mul(out, out)).val().item();
            };
        };

        Tape t;
        Var x = t.constant(x0);
        Var v1 = t.leaf(w1, true);
        Var v2 = t.leaf(w2, true);
        Var v3 = t.leaf(w3, true);
        Var h1 = relu(add_rowvec(matmul(x, v1), t.constant(b1)));
        Var h2 = sigmoid(add_rowvec(matmul(h1, v2), t.constant(b2)));
        Var out = add_rowvec(matmul(h2, v3), t.constant(b3));
        t.backward(reduce_sum(mul(out, out)));

        CHECK(max_rel_error(t.grad(v1), finite_diff_gradient(run(w1, 0), w1)) < 1e-4);
        CHECK(max_rel_error(t.grad(v2), finite_diff_gradient(run(w2, 1), w2)) < 1e-4);
        CHECK(max_rel_error(t.grad(v3), finite_diff_gradient(run(w3, 2), w3)) < 1e-4);
    }
}

TEST_CASE("primitive gradients match finite differences") {
    std::mt19937_64 rng(11);
    auto check_unary = [&](auto make, const Tensor& x0) {
        auto f = [&](const Tensor& probe) {
            Tape t;
            Var x = t.leaf(probe, true);
            return reduce_sum(make(t, x)).val().item();
        };
        Tape t;
        Var x = t.leaf(x0, true);
        t.backward(reduce_sum(make(t, x)));
        CHECK(max_rel_error(t.grad(x), finite_diff_gradient(f, x0)) < 1e-4);
    };

    Tensor xpos({2, 3}, {0.5, 1.5, 2.0, 0.3, 0.9, 1.2});
    Tensor xany({2, 3}, {0.5, -1.5, 2.0, -0.3, 0.9, -1.2});

    check_unary([](Tape&, Var x) { return exp_op(x); }, xany);
    check_unary([](Tape&, Var x) { return log_op(x); }, xpos);
    check_unary([](Tape&, Var x) { return neg(x); }, xany);
    check_unary([](Tape&, Var x) { return mul_scalar(add_scalar(x, 0.7), -1.3); }, xany);
    check_unary([](Tape&, Var x) { return reshape(x, {3, 2}); }, xany);
    check_unary([](Tape&, Var x) { return select(x, 1, 1); }, xany);
    check_unary([](Tape&, Var x) { return reduce_sum(x, 0); }, xany);
    check_unary([](Tape&, Var x) { return reduce_mean(x, 1); }, xany);

    // binary ops, including the max tie-free case
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a0({6}), b0({6});
        for (int i = 0; i < 6; ++i) {
            a0.data[static_cast<size_t>(i)] = u(rng);
            b0.data[static_cast<size_t>(i)] = u(rng) + 1e-3;
        }
        auto f_a = [&](const Tensor& probe) {
            Tape t;
            Var a = t.leaf(probe, true);
            Var b = t.constant(b0);
            return reduce_sum(add(mul(divide(a, b), maximum(a, b)), sub(a, b))).val().item();
        };
        Tape t;
        Var a = t.leaf(a0, true);
        Var b = t.leaf(b0, true);
        t.backward(reduce_sum(add(mul(divide(a, b), maximum(a, b)), sub(a, b))));
        CHECK(max_rel_error(t.grad(a), finite_diff_gradient(f_a, a0)) < 1e-4);
    }
}

TEST_CASE("determinism: same seed gives bit-identical forward and gradients") {
    auto run = [] {
        std::mt19937_64 rng(123);
        Tensor x0 = truncated_normal({4, 6}, 1.0, rng);
        Tensor w0 = truncated_normal({6, 3}, 0.5, rng);
        Tape t;
        Var x = t.constant(x0);
        Var w = t.leaf(w0, true);
        Var y = sigmoid(matmul(x, w));
        Var loss = reduce_sum(mul(y, y));
        double lv = loss.val().item();
        t.backward(loss);
        return std::make_pair(lv, t.grad(w).data);
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("adam first step moves a scalar by about lr against the gradient sign") {
    std::vector<Parameter> params{{"p", Tensor({1}, {1.0}), true}};
    AdamState st;
    st.lr = 1e-4;
    std::map<std::string, Tensor> grads{{"p", Tensor({1}, {0.37})}};
    adam_step(params, grads, st);
    double moved = 1.0 - params[0].tensor.data[0];
    CHECK(moved == doctest::Approx(1e-4).epsilon(1e-3));  // bias-corrected step ~ lr*sign(g)
    CHECK(st.step == 1);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    std::vector<Parameter> params{{"p", Tensor({3}, {1.0, -2.0, 0.5}), true}};
    AdamState st;
    std::map<std::string, Tensor> grads{{"p", Tensor({3})}};
    adam_step(params, grads, st);
    CHECK(params[0].tensor.data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam two identical steps move monotonically against the gradient") {
    std::vector<Parameter> params{{"p", Tensor({1}, {0.0}), true}};
    AdamState st;
    st.lr = 1e-4;
    std::map<std::string, Tensor> grads{{"p", Tensor({1}, {-2.5})}};
    adam_step(params, grads, st);
    double after1 = params[0].tensor.data[0];
    adam_step(params, grads, st);
    double after2 = params[0].tensor.data[0];
    CHECK(after1 > 0.0);  // negative gradient pushes the parameter up
    CHECK(after2 > after1);
}

TEST_CASE("adam rejects a missing gradient") {
    std::vector<Parameter> params{{"p", Tensor({1}, {1.0}), true}};
    AdamState st;
    std::map<std::string, Tensor> grads;
    CHECK_THROWS_WITH_AS(adam_step(params, grads, st), doctest::Contains("'p'"), std::invalid_argument);
}

TEST_CASE("forward ops keep finite values finite") {
    std::mt19937_64 rng(5);
    Tensor x0 = truncated_normal({3, 7}, 3.0, rng);
    Tape t;
    Var x = t.constant(x0);
    CHECK(all_finite(exp_op(x).val()));
    CHECK(all_finite(sigmoid(x).val()));
    CHECK(all_finite(elu(x).val()));
    CHECK(all_finite(softmax(x).val()));
}
