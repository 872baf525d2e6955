#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bubbletomo/inn.hpp"

using namespace bubbletomo;
using namespace bubbletomo::inn;

namespace {

Mat<double> randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Mat<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

Model<double> random_model(std::size_t n, std::size_t m, std::size_t k, std::size_t hidden, std::uint64_t seed) {
    auto model = make_model<double>({n, m, k, hidden, 2.0}, seed);
    randomize(model, seed + 100);
    return model;
}

}  // namespace

TEST(CouplingBlock, ZeroWeightsAreIdentity) {
    CouplingBlock<double> blk(7, 5, 2.0);
    const Mat<double> u = randn(7, 4, 1);
    EXPECT_EQ(blk.forward(u), u);
    EXPECT_EQ(blk.n1, 4);
    EXPECT_EQ(blk.n2, 3);
}

TEST(CouplingBlock, InverseUndoesForward) {
    auto model = random_model(9, 4, 1, 6, 2);
    const auto& blk = model.blocks[0];
    const Mat<double> u = randn(9, 20, 3);
    EXPECT_LT((blk.inverse(blk.forward(u)) - u).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CouplingBlock, ScalarAffineStepByHand) {
    // n = 2: v1 = u1 e^a + b with s2 = a, t2 = b constant (bias only).
    CouplingBlock<double> blk(2, 3, 2.0);
    const double a = 0.3, b = -0.7;
    // raw log-scale r with 2 tanh(r / 2) = a
    blk.s2.l3.b(0) = 2.0 * std::atanh(a / 2.0);
    blk.t2.l3.b(0) = b;
    Mat<double> u(2, 1);
    u << 1.5, -0.4;
    const Mat<double> v = blk.forward(u);
    EXPECT_NEAR(v(0, 0), 1.5 * std::exp(a) + b, 1e-14);
    EXPECT_NEAR(v(1, 0), -0.4, 1e-15);
}

TEST(CouplingBlock, LogScaleIsBounded) {
    CouplingBlock<double> blk(2, 3, 2.0);
    blk.s2.l3.b(0) = 1e6;
    Mat<double> u(2, 1);
    u << 1.0, 0.0;
    EXPECT_NEAR(blk.forward(u)(0, 0), std::exp(2.0), 1e-12);
}

TEST(Mixer, IdentityAndSwap) {
    Mixer<double> mx(4);
    const Mat<double> v = randn(4, 3, 4);
    EXPECT_EQ(mx.forward(v), v);
    mx.perm = {1, 0, 2, 3};
    const Mat<double> out = mx.forward(v);
    EXPECT_EQ(out.row(0), v.row(1));
    EXPECT_EQ(out.row(1), v.row(0));
    EXPECT_EQ(out.row(2), v.row(2));
    EXPECT_EQ(mx.inverse(out), v);
}

TEST(Mixer, InverseMatchesDenseSolve) {
    auto model = random_model(12, 5, 3, 4, 5);
    for (const auto& mx : model.mixers) {
        const Mat<double> dense = mx.matrix();
        const Mat<double> out = randn(12, 7, 6);
        const Mat<double> oracle = dense.fullPivLu().solve(out);
        EXPECT_LT((mx.inverse(out) - oracle).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((mx.forward(oracle) - out).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((dense * oracle - mx.forward(oracle)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Mixer, DiagonalClampKeepsItInvertible) {
    Mixer<double> mx(3);
    mx.upper(1, 1) = 1e-12;
    mx.upper(2, 2) = -1e-15;
    EXPECT_EQ(mx.clamp_diagonal(), 2u);
    EXPECT_GE(std::abs(mx.upper(1, 1)), kMinDiagonal);
    EXPECT_GE(std::abs(mx.upper(2, 2)), kMinDiagonal);
    EXPECT_LT(mx.upper(2, 2), 0.0);
    EXPECT_EQ(mx.clamp_diagonal(), 0u);
}

TEST(Model, IdentityInitConcatenates) {
    auto model = make_model<double>({10, 4, 3, 8, 2.0}, 1, true);
    const Mat<double> y = randn(4, 5, 7), z = randn(6, 5, 8);
    const Mat<double> x = model.inverse_map(y, z);
    EXPECT_EQ(x.topRows(4), y);
    EXPECT_EQ(x.bottomRows(6), z);
}

TEST(Model, ForwardInvertsInverseMap) {
    for (std::size_t k = 1; k <= 6; ++k) {
        auto model = random_model(14, 5, k, 8, 10 + k);
        const Mat<double> yz = randn(14, 50, 20 + k);
        EXPECT_LT((model.forward_map(model.inverse_map(yz)) - yz).cwiseAbs().maxCoeff(), 1e-10) << k;
        // the reverse order divides by the learned scales first; allow one more digit
        EXPECT_LT((model.inverse_map(model.forward_map(yz)) - yz).cwiseAbs().maxCoeff(), 1e-9) << k;
    }
}

TEST(Model, Float32RoundTrip) {
    auto model = random_model(16, 6, 3, 8, 30).cast<float>();
    const Mat<float> yz = randn(16, 20, 31).cast<float>();
    EXPECT_LT((model.forward_map(model.inverse_map(yz)) - yz).cwiseAbs().maxCoeff(), 1e-4f);
}

TEST(Model, DifferentLatentsGiveDifferentMaps) {
    auto model = random_model(10, 4, 2, 6, 40);
    const Mat<double> y = randn(4, 1, 41);
    const Mat<double> a = model.inverse_map(y, randn(6, 1, 42));
    const Mat<double> b = model.inverse_map(y, randn(6, 1, 43));
    EXPECT_GT((a - b).norm(), 0.0);
}

TEST(Model, ShapeGuards) {
    auto model = make_model<double>({10, 4, 1, 4, 2.0}, 1);
    EXPECT_THROW(model.inverse_map(randn(9, 1, 1)), ShapeMismatch);
    EXPECT_THROW(model.inverse_map(randn(3, 1, 1), randn(6, 1, 2)), ShapeMismatch);
    EXPECT_THROW(make_model<double>({10, 10, 1, 4, 2.0}, 1), ConfigError);
    EXPECT_THROW(make_model<double>({10, 4, 0, 4, 2.0}, 1), ConfigError);
}

TEST(Model, CastPreservesMapping) {
    auto model = random_model(8, 3, 2, 5, 50);
    const auto back = model.cast<float>().cast<double>();
    const Mat<double> yz = randn(8, 4, 51);
    EXPECT_LT((back.inverse_map(yz) - model.inverse_map(yz)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Loss, HandValues) {
    Mat<double> x(2, 1), p(2, 1);
    x << 1.0, 0.0;
    p << 0.0, 0.0;
    EXPECT_DOUBLE_EQ(loss_lx(x, p), 1.0);
    EXPECT_DOUBLE_EQ(loss_lx(x, x), 0.0);
    Mat<double> x2(2, 2), p2(2, 2);
    x2 << 2.0, 1.0, 0.0, 1.0;
    p2 << 0.0, 1.0, 0.0, 1.0;  // residual norms^2 {4, 0}
    EXPECT_DOUBLE_EQ(loss_lx(x2, p2), std::sqrt(2.0));
    EXPECT_EQ(loss_lx_grad(x, x, 0.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradient, IdentityModelWithPerfectFitIsZero) {
    auto model = make_model<double>({6, 2, 2, 4, 2.0}, 3, true);
    const Mat<double> yz = randn(6, 3, 60);
    auto grad = model.zeros_like();
    EXPECT_EQ(loss_and_gradient(model, yz, yz, grad), 0.0);
    double worst = 0.0;
    for (auto s : grad.tensors()) {
        for (double v : s) worst = std::max(worst, std::abs(v));
    }
    EXPECT_EQ(worst, 0.0);
}

TEST(Gradient, MatchesCentralDifferences) {
    for (std::uint64_t seed : {70u, 71u, 72u}) {
        auto model = random_model(9, 4, 2, 5, seed);
        const auto res = gradient_check(model, randn(9, 6, seed + 1), randn(9, 6, seed + 2));
        EXPECT_LT(res.max_relative_error, 1e-4) << seed;
        EXPECT_GT(res.max_abs_analytic, 0.0);
    }
}

TEST(Gradient, HoldsNearLogScaleSaturation) {
    auto model = random_model(8, 3, 2, 5, 80);
    for (auto& blk : model.blocks) {
        for (Mlp<double>* s : {&blk.s1, &blk.s2}) s->l3.b.setConstant(3.0);  // tanh(1.5): saturating
    }
    const auto res = gradient_check(model, randn(8, 5, 81), randn(8, 5, 82));
    EXPECT_LT(res.max_relative_error, 1e-3);
}

TEST(Gradient, RefusesLargeModels) {
    auto model = make_model<double>({20, 4, 1, 4, 2.0}, 1);
    EXPECT_THROW(gradient_check(model, randn(20, 1, 1), randn(20, 1, 2)), ConfigError);
}
