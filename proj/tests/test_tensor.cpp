#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "camlmlab/tensor.hpp"
#include "test_util.hpp"

using namespace camlmlab;
using testutil::random_mask;
using testutil::random_tensor;

using T = Tensor<double>;

TEST_CASE("matmul identity and projector") {
    Graph<double> g(false);
    auto eye = tensor_from<double>({2, 2}, {1, 0, 0, 1});
    auto a = tensor_from<double>({2, 2}, {1, 2, 3, 4});
    auto out = matmul(g, eye, a);
    CHECK(out->value == std::vector<double>{1, 2, 3, 4});

    auto proj = tensor_from<double>({2, 2}, {1, 0, 0, 0});
    auto b = tensor_from<double>({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(g, proj, b)->value == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul random case against brute-force triple loop") {
    Rng rng(101);
    Graph<double> g(false);
    auto a = random_tensor<double>({3, 4}, rng, false);
    auto b = random_tensor<double>({4, 2}, rng, false);
    auto out = matmul(g, a, b);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            double expect = 0.0;
            for (int k = 0; k < 4; ++k) expect += a->at(i, k) * b->at(k, j);
            CHECK(out->at(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul shape mismatch") {
    Graph<double> g(false);
    auto a = make_tensor<double>({2, 3});
    auto b = make_tensor<double>({2, 3});
    CHECK_THROWS_AS(matmul(g, a, b), ShapeError);
}

TEST_CASE("masked_softmax one-hot row and symmetric row") {
    Graph<double> g(false);
    auto scores = tensor_from<double>({2, 2}, {3.0, -1.0, 0.5, 0.5});
    BoolMatrix m(2);
    m.at(0, 1) = 1;  // row 0: only column 1 allowed
    m.at(1, 0) = m.at(1, 1) = 1;
    auto out = masked_softmax(g, scores, m);
    CHECK(out->at(0, 0) == 0.0);
    CHECK(out->at(0, 1) == 1.0);
    CHECK(out->at(1, 0) == doctest::Approx(0.5));

    auto equal4 = make_tensor<double>({4, 4});
    for (auto& v : equal4->value) v = 1.7;
    auto u = masked_softmax(g, equal4, BoolMatrix::ones(4));
    for (int j = 0; j < 4; ++j) CHECK(u->at(0, j) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("masked_softmax matches scalar oracle on [1,2,3]") {
    Graph<double> g(false);
    auto scores = make_tensor<double>({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) scores->at(i, j) = 1.0 + j;
    auto out = masked_softmax(g, scores, BoolMatrix::ones(3));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j)
        CHECK(out->at(0, j) == doctest::Approx(std::exp(1.0 + j) / z).epsilon(1e-12));
}

TEST_CASE("masked_softmax degenerate row is a hard error") {
    Graph<double> g(false);
    auto scores = make_tensor<double>({2, 2});
    BoolMatrix m(2);
    m.at(0, 0) = 1;  // row 1 fully disallowed
    CHECK_THROWS_AS(masked_softmax(g, scores, m), DegenerateRowError);
}

TEST_CASE("masked_softmax rows sum to one, zeros stay exact") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed);
        Graph<double> g(false);
        const int n = 3 + static_cast<int>(rng.below(6));
        auto scores = random_tensor<double>({n, n}, rng, false, 4.0);
        const BoolMatrix m = random_mask(n, rng);
        auto out = masked_softmax(g, scores, m);
        for (int i = 0; i < n; ++i) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                if (m.at(i, j)) {
                    sum += out->at(i, j);
                } else {
                    CHECK(out->at(i, j) == 0.0);
                }
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("gelu fixed points and saturation") {
    Graph<double> g(false);
    auto x = tensor_from<double>({3}, {0.0, 1.0, -10.0});
    auto out = gelu(g, x);
    CHECK(out->value[0] == 0.0);
    // scalar oracle: 0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715 x^3)))
    const double u = std::sqrt(2.0 / M_PI) * (1.0 + 0.044715);
    const double oracle = 0.5 * (1.0 + std::tanh(u));
    CHECK(out->value[1] == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(out->value[1] == doctest::Approx(0.84132).epsilon(1e-4));
    CHECK(std::abs(out->value[2]) < 1e-6);
}

TEST_CASE("layer_norm closed forms") {
    Graph<double> g(false);
    auto gain = tensor_from<double>({2}, {1, 1});
    auto bias = tensor_from<double>({2}, {0, 0});

    auto constant = tensor_from<double>({1, 2}, {3.5, 3.5});
    auto z = layer_norm(g, constant, gain, bias);
    CHECK(z->value[0] == doctest::Approx(0.0));
    CHECK(z->value[1] == doctest::Approx(0.0));

    auto pm = tensor_from<double>({1, 2}, {1.0, -1.0});
    auto out = layer_norm(g, pm, gain, bias);
    const double a = 1.0 / std::sqrt(1.0 + 1e-6);
    CHECK(out->value[0] == doctest::Approx(a).epsilon(1e-12));
    CHECK(out->value[1] == doctest::Approx(-a).epsilon(1e-12));

    auto zero_gain = tensor_from<double>({2}, {0, 0});
    auto shift = tensor_from<double>({2}, {0.25, -4.0});
    auto only_bias = layer_norm(g, pm, zero_gain, shift);
    CHECK(only_bias->value[0] == 0.25);
    CHECK(only_bias->value[1] == -4.0);
}

TEST_CASE("cross_entropy_logits trivial and oracle cases") {
    Graph<double> g(false);
    auto confident = make_tensor<double>({1, 4});
    confident->value[2] = 1000.0;
    CHECK(scalar_value(cross_entropy_logits(g, confident, {2})) < 1e-6);

    auto uniform = make_tensor<double>({1, 8});
    CHECK(scalar_value(cross_entropy_logits(g, uniform, {5})) ==
          doctest::Approx(std::log(8.0)).epsilon(1e-12));

    Rng rng(7);
    auto logits = random_tensor<double>({2, 5}, rng, false, 2.0);
    const std::vector<int> labels = {3, 0};
    double oracle = 0.0;
    for (int i = 0; i < 2; ++i) {
        double maxv = logits->at(i, 0);
        for (int j = 1; j < 5; ++j) maxv = std::max(maxv, logits->at(i, j));
        double z = 0.0;
        for (int j = 0; j < 5; ++j) z += std::exp(logits->at(i, j) - maxv);
        oracle += std::log(z) - (logits->at(i, labels[i]) - maxv);
    }
    oracle /= 2.0;
    CHECK(scalar_value(cross_entropy_logits(g, logits, labels)) ==
          doctest::Approx(oracle).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy_logits(g, uniform, {8}), LabelError);
    CHECK_THROWS_AS(cross_entropy_logits(g, uniform, {-1}), LabelError);
}

TEST_CASE("backward of sum and quadratic") {
    {
        Graph<double> g;
        auto x = tensor_from<double>({3}, {5, -2, 9}, true);
        g.backward(sum(g, x));
        CHECK(x->grad == std::vector<double>{1, 1, 1});
    }
    {
        Graph<double> g;
        auto x = tensor_from<double>({3}, {5, -2, 9}, true);
        auto loss = scale(g, sum(g, mul(g, x, x)), 0.5);
        g.backward(loss);
        CHECK(x->grad == std::vector<double>{5, -2, 9});
    }
}

TEST_CASE("backward misuse is an error") {
    Graph<double> g;
    auto x = tensor_from<double>({2}, {1, 2}, true);
    auto loss = sum(g, x);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), StateError);

    Graph<double> g2;
    CHECK_THROWS_AS(g2.backward(loss), StateError);  // detached graph

    Graph<double> g3;
    auto y = tensor_from<double>({2}, {1, 2}, true);
    auto vec = add(g3, y, y);
    CHECK_THROWS_AS(g3.backward(vec), ShapeError);  // non-scalar loss
}

TEST_CASE("finite_diff_check self checks") {
    auto x = tensor_from<double>({3}, {0.4, -1.2, 2.0}, true);
    const double err_sum = finite_diff_check<double>(
        [&](Graph<double>& g) { return sum(g, x); }, x, 1e-5);
    CHECK(err_sum <= 1e-10);

    auto y = tensor_from<double>({2}, {0.5, -0.3}, true);
    const double err_gelu = finite_diff_check<double>(
        [&](Graph<double>& g) { return sum(g, gelu(g, y)); }, y, 1e-5);
    CHECK(err_gelu <= 1e-6);
}

// Every differentiable op against central differences, randomized over seeds.
TEST_CASE("per-op gradient checks across 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const double tol = 1e-4;

        {
            auto a = random_tensor<double>({3, 4}, rng);
            auto b = random_tensor<double>({4, 2}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, matmul(g, a, b)); }, a, 1e-5) <= tol);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, matmul(g, a, b)); }, b, 1e-5) <= tol);
        }
        {
            auto a = random_tensor<double>({3, 4}, rng);
            auto b = random_tensor<double>({2, 4}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, matmul_nt(g, a, b)); }, b, 1e-5) <=
                  tol);
        }
        {
            auto a = random_tensor<double>({2, 3}, rng);
            auto b = random_tensor<double>({2, 3}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          return sum(g, mul(g, add(g, a, b), scale(g, a, 1.7)));
                      },
                      a, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({3, 4}, rng);
            auto b = random_tensor<double>({4}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, add_rowvec(g, x, b)); }, b, 1e-5) <=
                  tol);
        }
        {
            auto x = random_tensor<double>({3, 6}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto lo = slice_cols(g, x, 0, 2);
                          auto hi = slice_cols(g, x, 2, 6);
                          return sum(g, mul(g, concat_cols(g, {hi, lo}),
                                            concat_cols(g, {hi, lo})));
                      },
                      x, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({4, 3}, rng);
            const std::vector<int> idx = {1, 3, 1};  // duplicate accumulation
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto picked = gather_rows(g, x, idx);
                          return sum(g, mul(g, picked, picked));
                      },
                      x, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({3, 3}, rng);
            const std::vector<std::pair<int, int>> at = {{0, 1}, {2, 2}, {0, 1}};
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto v = gather_elems(g, x, at);
                          return sum(g, mul(g, v, v));
                      },
                      x, 1e-5) <= tol);
        }
        {
            auto a = random_tensor<double>({4}, rng);
            auto b = random_tensor<double>({4}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto m = stack_rows(g, {a, b, a});
                          return sum(g, mul(g, m, m));
                      },
                      a, 1e-5) <= tol);
        }
        {
            const int n = 5;
            auto scores = random_tensor<double>({n, n}, rng, true, 3.0);
            const BoolMatrix m = random_mask(n, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto p = masked_softmax(g, scores, m);
                          return sum(g, mul(g, p, p));
                      },
                      scores, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({6}, rng, true, 2.0);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, gelu(g, x)); }, x, 1e-5) <= tol);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return sum(g, softplus(g, x)); }, x, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({3, 5}, rng);
            auto gain = random_tensor<double>({5}, rng);
            auto bias = random_tensor<double>({5}, rng);
            auto weighted_sum = [&](Graph<double>& g) {
                auto y = layer_norm(g, x, gain, bias);
                return sum(g, mul(g, y, y));
            };
            CHECK(finite_diff_check<double>(weighted_sum, x, 1e-5) <= tol);
            CHECK(finite_diff_check<double>(weighted_sum, gain, 1e-5) <= tol);
            CHECK(finite_diff_check<double>(weighted_sum, bias, 1e-5) <= tol);
        }
        {
            auto logits = random_tensor<double>({3, 6}, rng, true, 2.0);
            const std::vector<int> labels = {2, 0, 5};
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) { return cross_entropy_logits(g, logits, labels); },
                      logits, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({4, 3}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          auto m = mean_axis0(g, x);
                          return sum(g, mul(g, m, m));
                      },
                      x, 1e-5) <= tol);
        }
        {
            auto x = random_tensor<double>({2, 4}, rng, true, 1.0);
            for (auto& v : x->value) v += v >= 0 ? 0.5 : -0.5;  // keep norms off zero
            auto weight = random_tensor<double>({2, 4}, rng, false);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          return sum(g, mul(g, row_l2_normalize(g, x), weight));
                      },
                      x, 1e-5) <= tol);
        }
        {
            auto a = random_tensor<double>({1}, rng);
            auto b = random_tensor<double>({1}, rng);
            CHECK(finite_diff_check<double>(
                      [&](Graph<double>& g) {
                          return mean_scalars(g, {sum(g, mul(g, a, a)), sum(g, b)});
                      },
                      a, 1e-5) <= tol);
        }
    }
}

TEST_CASE("forward ops are pure and deterministic") {
    Rng rng(42);
    auto a = random_tensor<double>({4, 4}, rng, false, 2.0);
    auto b = random_tensor<double>({4, 4}, rng, false, 2.0);
    Graph<double> g(false);
    auto first = matmul(g, a, b);
    auto second = matmul(g, a, b);
    CHECK(first->value == second->value);
    auto s1 = masked_softmax(g, first, BoolMatrix::ones(4));
    auto s2 = masked_softmax(g, second, BoolMatrix::ones(4));
    CHECK(s1->value == s2->value);
}

TEST_CASE("non-finite forward results are rejected") {
    Graph<double> g(false);
    auto huge = tensor_from<double>({1, 1}, {1e308});
    CHECK_THROWS_AS(matmul(g, huge, huge), NumericsError);
}

TEST_CASE("gradients accumulate additively on shared leaves") {
    Graph<double> g;
    auto x = tensor_from<double>({2}, {1.0, 2.0}, true);
    auto loss = sum(g, add(g, x, x));
    g.backward(loss);
    CHECK(x->grad == std::vector<double>{2, 2});
}

TEST_CASE("float32 mode runs the same ops") {
    Rng rng(3);
    Graph<float> g;
    auto a = random_tensor<float>({3, 3}, rng, true);
    auto out = masked_softmax(g, scale(g, matmul(g, a, a), 0.5f), BoolMatrix::ones(3));
    auto loss = sum(g, out);
    g.backward(loss);
    CHECK(a->grad.size() == 9);
    for (float v : a->grad) CHECK(std::isfinite(v));
}
