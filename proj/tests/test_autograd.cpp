#include <doctest.h>

#include <cmath>
#include <functional>

#include "usdrl/autograd.hpp"
#include "usdrl/rng.hpp"

using namespace usdrl;
using G = Graph<double>;

namespace {

Mat<double> random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Mat<double> m(r, c);
    for (auto& v : m.vec()) v = scale * rng.normal();
    return m;
}

// Finite-difference check of d(sum of op output)/d(inputs) for an op built by
// `build` from leaf nodes. Catches wrong backward formulas at the source.
void check_op_gradient(const std::vector<Mat<double>>& inputs,
                       const std::function<G::N(G&, std::vector<G::N>&)>& build,
                       double tol = 1e-6) {
    auto eval = [&](const std::vector<Mat<double>>& vals) {
        G g;
        std::vector<G::N> leaves;
        for (const auto& v : vals) leaves.push_back(g.leaf(v));
        auto out = build(g, leaves);
        double s = 0;
        for (std::size_t i = 0; i < out->value.size(); ++i)
            s += out->value[i] * (1.0 + 0.1 * static_cast<double>(i % 7));  // uneven weights
        return s;
    };

    G g;
    std::vector<G::N> leaves;
    for (const auto& v : inputs) leaves.push_back(g.leaf(v));
    auto out = build(g, leaves);
    Mat<double> seed(out->value.rows(), out->value.cols());
    for (std::size_t i = 0; i < seed.size(); ++i)
        seed[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
    g.backward_seeded({{out, seed}});

    const double h = 1e-6;
    for (std::size_t li = 0; li < inputs.size(); ++li) {
        for (std::size_t i = 0; i < inputs[li].size(); ++i) {
            auto plus = inputs;
            auto minus = inputs;
            plus[li][i] += h;
            minus[li][i] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2 * h);
            const double an = leaves[li]->grad[i];
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
            CAPTURE(li);
            CAPTURE(i);
            CHECK(err < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise ops and broadcasting gradients") {
    Rng rng(11);
    auto a = random_mat(3, 4, rng);
    auto full = random_mat(3, 4, rng);
    auto col = random_mat(3, 1, rng);
    auto row = random_mat(1, 4, rng);
    auto scalar = random_mat(1, 1, rng);
    for (const auto& b : {full, col, row, scalar}) {
        check_op_gradient({a, b}, [](G& g, std::vector<G::N>& l) { return g.add(l[0], l[1]); });
        check_op_gradient({a, b}, [](G& g, std::vector<G::N>& l) { return g.sub(l[0], l[1]); });
        check_op_gradient({a, b}, [](G& g, std::vector<G::N>& l) { return g.mul(l[0], l[1]); });
    }
    // keep divisors away from zero
    auto pos = col;
    for (auto& v : pos.vec()) v = 1.5 + std::abs(v);
    check_op_gradient({a, pos}, [](G& g, std::vector<G::N>& l) { return g.div(l[0], l[1]); });
}

TEST_CASE("matmul, transpose, slicing and concatenation gradients") {
    Rng rng(12);
    auto a = random_mat(3, 5, rng);
    auto b = random_mat(5, 2, rng);
    check_op_gradient({a, b}, [](G& g, std::vector<G::N>& l) { return g.matmul(l[0], l[1]); });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.transpose(l[0]); });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.slice_cols(l[0], 1, 4); });
    auto c = random_mat(3, 2, rng);
    check_op_gradient({a, c},
                      [](G& g, std::vector<G::N>& l) { return g.concat_cols(l[0], l[1]); });
    auto d = random_mat(2, 5, rng);
    check_op_gradient({a, d}, [](G& g, std::vector<G::N>& l) {
        return g.concat_rows({l[0], l[1]});
    });
}

TEST_CASE("nonlinearity gradients") {
    Rng rng(13);
    auto a = random_mat(4, 3, rng);
    for (auto& v : a.vec())
        if (std::abs(v) < 0.05) v += 0.2;  // keep clear of the ReLU kink
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.relu(l[0]); });
    auto pos = a;
    for (auto& v : pos.vec()) v = 0.5 + std::abs(v);
    check_op_gradient({pos}, [](G& g, std::vector<G::N>& l) { return g.sqrt_e(l[0]); });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.softmax_rows(l[0]); },
                      1e-5);
    check_op_gradient({a},
                      [](G& g, std::vector<G::N>& l) { return g.softmax_rows(l[0], true); },
                      1e-5);
}

TEST_CASE("causal softmax zeroes the future") {
    G g;
    Mat<double> x(3, 3, 1.0);
    auto y = g.softmax_rows(g.leaf(x), true);
    CHECK(y->value(0, 0) == doctest::Approx(1.0));
    CHECK(y->value(0, 1) == 0.0);
    CHECK(y->value(0, 2) == 0.0);
    CHECK(y->value(1, 0) == doctest::Approx(0.5));
    CHECK(y->value(1, 2) == 0.0);
    CHECK(y->value(2, 0) == doctest::Approx(1.0 / 3));
}

TEST_CASE("depthwise conv gradients and padding") {
    Rng rng(14);
    auto x = random_mat(6, 3, rng);
    auto k = random_mat(3, 3, rng);
    check_op_gradient({x, k}, [](G& g, std::vector<G::N>& l) {
        return g.conv1d_depthwise(l[0], l[1], false);
    });
    check_op_gradient({x, k}, [](G& g, std::vector<G::N>& l) {
        return g.conv1d_depthwise(l[0], l[1], true);
    });

    // causal output at row l reads rows <= l only
    G g;
    auto xl = g.leaf(x);
    auto kl = g.leaf(k);
    auto y = g.conv1d_depthwise(xl, kl, true);
    Mat<double> x2 = x;
    x2(5, 1) += 100.0;
    G g2;
    auto y2 = g2.conv1d_depthwise(g2.leaf(x2), g2.leaf(k), true);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(y->value(r, c) == y2->value(r, c));

    CHECK_THROWS(g.conv1d_depthwise(xl, g.leaf(Mat<double>(2, 3, 1.0)), false));
}

TEST_CASE("maxpool routes gradient to the argmax row") {
    G g;
    Mat<double> x(3, 2);
    x(0, 0) = 1; x(1, 0) = 5; x(2, 0) = 3;
    x(0, 1) = -2; x(1, 1) = -9; x(2, 1) = -1;
    auto xl = g.leaf(x);
    auto y = g.maxpool_rows(xl);
    CHECK(y->value(0, 0) == 5);
    CHECK(y->value(0, 1) == -1);
    g.backward_seeded({{y, Mat<double>(1, 2, 1.0)}});
    CHECK(xl->grad(1, 0) == 1.0);
    CHECK(xl->grad(2, 1) == 1.0);
    CHECK(xl->grad(0, 0) == 0.0);
}

TEST_CASE("cross entropy value and gradient") {
    G g;
    Mat<double> logits(1, 3);
    logits(0, 0) = std::log(0.7);
    logits(0, 1) = std::log(0.2);
    logits(0, 2) = std::log(0.1);
    auto l = g.leaf(logits);
    auto loss = g.cross_entropy_mean(l, {0});
    CHECK(loss->value(0, 0) == doctest::Approx(-std::log(0.7)).epsilon(1e-9));

    Rng rng(15);
    auto x = random_mat(4, 3, rng);
    check_op_gradient({x}, [](G& g2, std::vector<G::N>& lv) {
        return g2.cross_entropy_mean(lv[0], {0, 2, 1, 2});
    });
}

TEST_CASE("mean_of and reductions") {
    Rng rng(16);
    auto a = random_mat(2, 3, rng);
    auto b = random_mat(2, 3, rng);
    auto c = random_mat(2, 3, rng);
    check_op_gradient({a, b, c}, [](G& g, std::vector<G::N>& l) {
        return g.mean_of({l[0], l[1], l[2]});
    });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.sum_all(l[0]); });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.scale(l[0], -2.5); });
    check_op_gradient({a}, [](G& g, std::vector<G::N>& l) { return g.add_scalar(l[0], 1.25); });
}

TEST_CASE("gradient of a reused node accumulates") {
    G g;
    Mat<double> x(1, 1, 3.0);
    auto xl = g.leaf(x);
    auto y = g.mul(xl, xl);  // x^2
    g.backward(y);
    CHECK(xl->grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("unused leaf keeps a zero gradient") {
    G g;
    auto used = g.leaf(Mat<double>(1, 1, 2.0));
    auto unused = g.leaf(Mat<double>(2, 2, 1.0));
    auto y = g.mul(used, used);
    g.backward(y);
    for (std::size_t i = 0; i < unused->grad.size(); ++i) CHECK(unused->grad[i] == 0.0);
}
