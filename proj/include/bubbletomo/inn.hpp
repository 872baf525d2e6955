#pragma once

// Invertible network between x-space (dimension N) and [y, z]-space
// (M + D = N): k affine coupling blocks, each followed by a learned invertible
// feature-mixing layer in PLU form. The x-direction ([y, z] -> x) is the one
// trained; gradients are hand-derived reverse mode.
//
// Batches are column-major: one sample per column.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bubbletomo/errors.hpp"
#include "bubbletomo/rng.hpp"

namespace bubbletomo::inn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kMinDiagonal = 1e-8;

template <typename T>
struct Dense {
    Mat<T> w;  // out x in
    Vec<T> b;

    Dense() = default;
    Dense(Eigen::Index in, Eigen::Index out) : w(Mat<T>::Zero(out, in)), b(Vec<T>::Zero(out)) {}

    Mat<T> operator()(const Mat<T>& in) const { return (w * in).colwise() + b; }
};

/// in -> hidden -> hidden -> out with leaky-ReLU activations.
template <typename T>
struct Mlp {
    Dense<T> l1, l2, l3;

    struct Cache {
        Mat<T> in, z1, a1, z2, a2;
    };

    Mlp() = default;
    Mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out) : l1(in, hidden), l2(hidden, hidden), l3(hidden, out) {}

    static Mat<T> leaky(const Mat<T>& z) {
        return z.unaryExpr([](T v) { return v > T(0) ? v : T(kLeakySlope) * v; });
    }

    Mat<T> forward(const Mat<T>& in, Cache* cache = nullptr) const {
        Mat<T> z1 = l1(in);
        Mat<T> a1 = leaky(z1);
        Mat<T> z2 = l2(a1);
        Mat<T> a2 = leaky(z2);
        Mat<T> out = l3(a2);
        if (cache != nullptr) {
            cache->in = in;
            cache->z1 = std::move(z1);
            cache->a1 = std::move(a1);
            cache->z2 = std::move(z2);
            cache->a2 = std::move(a2);
        }
        return out;
    }

    /// Accumulates parameter gradients into `grad` and returns d(loss)/d(in).
    Mat<T> backward(const Cache& c, const Mat<T>& g_out, Mlp& grad) const {
        auto dleaky = [](const Mat<T>& z, const Mat<T>& g) {
            return Mat<T>(g.binaryExpr(z, [](T gv, T zv) { return zv > T(0) ? gv : T(kLeakySlope) * gv; }));
        };
        grad.l3.w.noalias() += g_out * c.a2.transpose();
        grad.l3.b += g_out.rowwise().sum();
        const Mat<T> g_z2 = dleaky(c.z2, l3.w.transpose() * g_out);
        grad.l2.w.noalias() += g_z2 * c.a1.transpose();
        grad.l2.b += g_z2.rowwise().sum();
        const Mat<T> g_z1 = dleaky(c.z1, l2.w.transpose() * g_z2);
        grad.l1.w.noalias() += g_z1 * c.in.transpose();
        grad.l1.b += g_z1.rowwise().sum();
        return l1.w.transpose() * g_z1;
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        for (Dense<T>* d : {&l1, &l2, &l3}) {
            f(std::span<T>(d->w.data(), static_cast<std::size_t>(d->w.size())));
            f(std::span<T>(d->b.data(), static_cast<std::size_t>(d->b.size())));
        }
    }
};

/// RealNVP-style block on u = [u1, u2] (sizes ceil(n/2), floor(n/2)):
///   v1 = u1 * exp(s2(u2)) + t2(u2)
///   v2 = u2 * exp(s1(v1)) + t1(v1)
/// Log-scales are bounded: s = clamp * tanh(raw / clamp).
template <typename T>
struct CouplingBlock {
    Eigen::Index n1 = 0;
    Eigen::Index n2 = 0;
    T s_clamp = T(2);
    Mlp<T> s1, t1;  // n1 -> n2
    Mlp<T> s2, t2;  // n2 -> n1

    struct Cache {
        Mat<T> u1, u2, raw_c, exp_c, v1, raw_a, exp_a;
        typename Mlp<T>::Cache s1, t1, s2, t2;
    };

    CouplingBlock() = default;
    CouplingBlock(Eigen::Index n, Eigen::Index hidden, T clamp)
        : n1((n + 1) / 2), n2(n / 2), s_clamp(clamp), s1(n1, hidden, n2), t1(n1, hidden, n2), s2(n2, hidden, n1),
          t2(n2, hidden, n1) {}

    Eigen::Index size() const { return n1 + n2; }

    Mat<T> bound(const Mat<T>& raw) const {
        const T c = s_clamp;
        return raw.unaryExpr([c](T v) { return c * std::tanh(v / c); });
    }

    Mat<T> forward(const Mat<T>& u, Cache* cache = nullptr) const {
        check(u);
        Mat<T> u1 = u.topRows(n1);
        Mat<T> u2 = u.bottomRows(n2);
        typename Mlp<T>::Cache cs2, ct2, cs1, ct1;
        Mat<T> raw_c = s2.forward(u2, cache ? &cs2 : nullptr);
        Mat<T> exp_c = bound(raw_c).array().exp();
        Mat<T> v1 = u1.cwiseProduct(exp_c) + t2.forward(u2, cache ? &ct2 : nullptr);
        Mat<T> raw_a = s1.forward(v1, cache ? &cs1 : nullptr);
        Mat<T> exp_a = bound(raw_a).array().exp();
        Mat<T> v2 = u2.cwiseProduct(exp_a) + t1.forward(v1, cache ? &ct1 : nullptr);
        Mat<T> out(n1 + n2, u.cols());
        out.topRows(n1) = v1;
        out.bottomRows(n2) = v2;
        if (cache != nullptr) {
            *cache = {std::move(u1), std::move(u2), std::move(raw_c), std::move(exp_c), std::move(v1),
                      std::move(raw_a), std::move(exp_a), std::move(cs1), std::move(ct1), std::move(cs2),
                      std::move(ct2)};
        }
        return out;
    }

    Mat<T> inverse(const Mat<T>& v) const {
        check(v);
        const Mat<T> v1 = v.topRows(n1);
        const Mat<T> v2 = v.bottomRows(n2);
        const Mat<T> u2 = (v2 - t1.forward(v1)).cwiseProduct(Mat<T>((-bound(s1.forward(v1))).array().exp()));
        const Mat<T> u1 = (v1 - t2.forward(u2)).cwiseProduct(Mat<T>((-bound(s2.forward(u2))).array().exp()));
        Mat<T> out(n1 + n2, v.cols());
        out.topRows(n1) = u1;
        out.bottomRows(n2) = u2;
        return out;
    }

    /// Reverse mode through forward(); returns d(loss)/du.
    Mat<T> backward(const Cache& c, const Mat<T>& g_out, CouplingBlock& grad) const {
        auto dbound = [this](const Mat<T>& raw, const Mat<T>& g) {
            const T cl = s_clamp;
            return Mat<T>(g.binaryExpr(raw, [cl](T gv, T rv) {
                const T th = std::tanh(rv / cl);
                return gv * (T(1) - th * th);
            }));
        };
        const Mat<T> g_v1_direct = g_out.topRows(n1);
        const Mat<T> g_v2 = g_out.bottomRows(n2);

        // v2 = u2 * exp(a) + t1(v1)
        Mat<T> g_u2 = g_v2.cwiseProduct(c.exp_a);
        const Mat<T> g_a = g_v2.cwiseProduct(c.u2).cwiseProduct(c.exp_a);
        Mat<T> g_v1 = g_v1_direct + s1.backward(c.s1, dbound(c.raw_a, g_a), grad.s1) +
                      t1.backward(c.t1, g_v2, grad.t1);

        // v1 = u1 * exp(c) + t2(u2)
        const Mat<T> g_u1 = g_v1.cwiseProduct(c.exp_c);
        const Mat<T> g_c = g_v1.cwiseProduct(c.u1).cwiseProduct(c.exp_c);
        g_u2 += s2.backward(c.s2, dbound(c.raw_c, g_c), grad.s2) + t2.backward(c.t2, g_v1, grad.t2);

        Mat<T> g_u(n1 + n2, g_out.cols());
        g_u.topRows(n1) = g_u1;
        g_u.bottomRows(n2) = g_u2;
        return g_u;
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        s1.for_each_tensor(f);
        t1.for_each_tensor(f);
        s2.for_each_tensor(f);
        t2.for_each_tensor(f);
    }

private:
    void check(const Mat<T>& m) const {
        if (m.rows() != n1 + n2) {
            throw ShapeMismatch("coupling block expects " + std::to_string(n1 + n2) + " features, got " +
                                std::to_string(m.rows()));
        }
    }
};

/// v' = P L U v with P a fixed permutation (out[i] = (L U v)[perm[i]]), L unit
/// lower triangular and U upper triangular with |U_ii| >= kMinDiagonal. Only
/// the strict lower part of `lower` and the upper part of `upper` are used.
template <typename T>
struct Mixer {
    std::vector<std::size_t> perm;
    Mat<T> lower;
    Mat<T> upper;

    struct Cache {
        Mat<T> in, w;
    };

    Mixer() = default;
    explicit Mixer(Eigen::Index n)
        : perm(static_cast<std::size_t>(n)), lower(Mat<T>::Zero(n, n)), upper(Mat<T>::Identity(n, n)) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
    }

    Eigen::Index size() const { return upper.rows(); }

    Mat<T> forward(const Mat<T>& v, Cache* cache = nullptr) const {
        check(v);
        Mat<T> w = upper.template triangularView<Eigen::Upper>() * v;
        const Mat<T> q = lower.template triangularView<Eigen::UnitLower>() * w;
        Mat<T> out(q.rows(), q.cols());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = q.row(static_cast<Eigen::Index>(perm[i]));
        }
        if (cache != nullptr) {
            cache->in = v;
            cache->w = std::move(w);
        }
        return out;
    }

    Mat<T> inverse(const Mat<T>& out) const {
        check(out);
        Mat<T> q(out.rows(), out.cols());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            q.row(static_cast<Eigen::Index>(perm[i])) = out.row(static_cast<Eigen::Index>(i));
        }
        lower.template triangularView<Eigen::UnitLower>().solveInPlace(q);
        upper.template triangularView<Eigen::Upper>().solveInPlace(q);
        return q;
    }

    /// Dense P L U, for tests and diagnostics.
    Mat<T> matrix() const {
        const Mat<T> lu = Mat<T>(lower.template triangularView<Eigen::UnitLower>()) *
                          Mat<T>(upper.template triangularView<Eigen::Upper>());
        Mat<T> out(lu.rows(), lu.cols());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = lu.row(static_cast<Eigen::Index>(perm[i]));
        }
        return out;
    }

    Mat<T> backward(const Cache& c, const Mat<T>& g_out, Mixer& grad) const {
        Mat<T> g_q(g_out.rows(), g_out.cols());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            g_q.row(static_cast<Eigen::Index>(perm[i])) = g_out.row(static_cast<Eigen::Index>(i));
        }
        grad.lower.template triangularView<Eigen::StrictlyLower>() += g_q * c.w.transpose();
        const Mat<T> g_w = lower.transpose().template triangularView<Eigen::UnitUpper>() * g_q;
        grad.upper.template triangularView<Eigen::Upper>() += g_w * c.in.transpose();
        return upper.transpose().template triangularView<Eigen::Lower>() * g_w;
    }

    /// Pushes |U_ii| back up to kMinDiagonal; returns the number of clamps.
    std::size_t clamp_diagonal() {
        std::size_t events = 0;
        for (Eigen::Index i = 0; i < upper.rows(); ++i) {
            T& d = upper(i, i);
            if (std::abs(d) < T(kMinDiagonal)) {
                d = d < T(0) ? T(-kMinDiagonal) : T(kMinDiagonal);
                ++events;
            }
        }
        return events;
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        f(std::span<T>(lower.data(), static_cast<std::size_t>(lower.size())));
        f(std::span<T>(upper.data(), static_cast<std::size_t>(upper.size())));
    }

private:
    void check(const Mat<T>& m) const {
        if (m.rows() != size()) {
            throw ShapeMismatch("mixer expects " + std::to_string(size()) + " features, got " +
                                std::to_string(m.rows()));
        }
    }
};

struct ModelShape {
    std::size_t n = 0;  // x dimension
    std::size_t m = 0;  // measurement dimension
    std::size_t k = 3;  // coupling blocks
    std::size_t hidden = 256;
    double s_clamp = 2.0;

    std::size_t d() const { return n - m; }

    void validate() const {
        require(n >= 2, "x dimension must be at least 2");
        require(m >= 1 && m < n, "measurement dimension must satisfy 1 <= M < N");
        require(k >= 1, "at least one coupling block is required");
        require(hidden >= 1, "hidden width must be positive");
        require(s_clamp > 0.0, "s_clamp must be positive");
    }
};

template <typename T>
struct Model {
    ModelShape shape;
    std::vector<CouplingBlock<T>> blocks;
    std::vector<Mixer<T>> mixers;

    struct Cache {
        std::vector<typename CouplingBlock<T>::Cache> blocks;
        std::vector<typename Mixer<T>::Cache> mixers;
    };

    Model() = default;

    /// Zero-initialised structure: every block and mixer is the identity.
    explicit Model(const ModelShape& s) : shape(s) {
        shape.validate();
        const auto n = static_cast<Eigen::Index>(s.n);
        for (std::size_t j = 0; j < s.k; ++j) {
            blocks.emplace_back(n, static_cast<Eigen::Index>(s.hidden), static_cast<T>(s.s_clamp));
            mixers.emplace_back(n);
        }
    }

    std::size_t n() const { return shape.n; }
    std::size_t m() const { return shape.m; }
    std::size_t d() const { return shape.d(); }

    /// [y; z] -> x. Throws NumericalFailure naming the first non-finite stage.
    Mat<T> inverse_map(const Mat<T>& yz, Cache* cache = nullptr) const {
        if (static_cast<std::size_t>(yz.rows()) != n()) {
            throw ShapeMismatch("model expects [y, z] of length " + std::to_string(n()) + ", got " +
                                std::to_string(yz.rows()));
        }
        if (cache != nullptr) {
            cache->blocks.resize(blocks.size());
            cache->mixers.resize(mixers.size());
        }
        Mat<T> v = yz;
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            v = blocks[j].forward(v, cache ? &cache->blocks[j] : nullptr);
            if (!v.allFinite()) throw NumericalFailure("non-finite activation after coupling block " + std::to_string(j));
            v = mixers[j].forward(v, cache ? &cache->mixers[j] : nullptr);
            if (!v.allFinite()) throw NumericalFailure("non-finite activation after mixer " + std::to_string(j));
        }
        return v;
    }

    Mat<T> inverse_map(const Mat<T>& y, const Mat<T>& z) const {
        if (static_cast<std::size_t>(y.rows()) != m() || static_cast<std::size_t>(z.rows()) != d() ||
            y.cols() != z.cols()) {
            throw ShapeMismatch("model expects y of length " + std::to_string(m()) + " and z of length " +
                                std::to_string(d()) + ", got " + std::to_string(y.rows()) + " and " +
                                std::to_string(z.rows()));
        }
        Mat<T> yz(static_cast<Eigen::Index>(n()), y.cols());
        yz.topRows(y.rows()) = y;
        yz.bottomRows(z.rows()) = z;
        return inverse_map(yz);
    }

    /// x -> [y; z].
    Mat<T> forward_map(const Mat<T>& x) const {
        if (static_cast<std::size_t>(x.rows()) != n()) {
            throw ShapeMismatch("model expects x of length " + std::to_string(n()) + ", got " +
                                std::to_string(x.rows()));
        }
        Mat<T> v = x;
        for (std::size_t j = blocks.size(); j-- > 0;) {
            v = mixers[j].inverse(v);
            v = blocks[j].inverse(v);
        }
        return v;
    }

    /// Back-propagates d(loss)/dx through a cached inverse_map.
    void backward(const Cache& cache, const Mat<T>& g_x, Model& grad) const {
        Mat<T> g = g_x;
        for (std::size_t j = blocks.size(); j-- > 0;) {
            g = mixers[j].backward(cache.mixers[j], g, grad.mixers[j]);
            g = blocks[j].backward(cache.blocks[j], g, grad.blocks[j]);
        }
    }

    /// Fixed parameter order: for each j in 0..k-1, block j (s1, t1, s2, t2;
    /// each l1.w, l1.b, l2.w, l2.b, l3.w, l3.b) then mixer j (lower, upper).
    /// Matrices are column-major.
    template <typename F>
    void for_each_tensor(F&& f) {
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            blocks[j].for_each_tensor(f);
            mixers[j].for_each_tensor(f);
        }
    }

    std::vector<std::span<T>> tensors() {
        std::vector<std::span<T>> out;
        for_each_tensor([&](std::span<T> s) { out.push_back(s); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t count = 0;
        for_each_tensor([&](std::span<T> s) { count += s.size(); });
        return count;
    }

    void set_zero() {
        for_each_tensor([](std::span<T> s) { std::fill(s.begin(), s.end(), T(0)); });
    }

    /// Same shape and permutations, all parameters zero: a gradient buffer.
    Model zeros_like() const {
        Model g = *this;
        g.set_zero();
        return g;
    }

    bool all_finite() {
        bool ok = true;
        for_each_tensor([&](std::span<T> s) {
            for (T v : s) ok = ok && std::isfinite(v);
        });
        return ok;
    }

    std::size_t clamp_mixers() {
        std::size_t events = 0;
        for (auto& mx : mixers) events += mx.clamp_diagonal();
        return events;
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> out(shape);
        auto* self = const_cast<Model*>(this);
        const auto src = self->tensors();
        const auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::transform(src[i].begin(), src[i].end(), dst[i].begin(), [](T v) { return static_cast<U>(v); });
        }
        for (std::size_t j = 0; j < mixers.size(); ++j) out.mixers[j].perm = mixers[j].perm;
        return out;
    }
};

/// Initialises a trainable model: hidden layers uniform in +-1/sqrt(fan_in),
/// s/t output layers zero (each block starts as the identity), mixers
/// L = U = I with a random permutation unless `identity_permutation`.
template <typename T>
Model<T> make_model(const ModelShape& shape, std::uint64_t seed, bool identity_permutation = false) {
    Model<T> model(shape);
    Rng rng(derive_seed(seed, {0x1A17ULL}));
    auto fill_uniform = [&](Mat<T>& w, Vec<T>& b) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
        for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>(u(rng));
    };
    for (auto& blk : model.blocks) {
        for (Mlp<T>* net : {&blk.s1, &blk.t1, &blk.s2, &blk.t2}) {
            fill_uniform(net->l1.w, net->l1.b);
            fill_uniform(net->l2.w, net->l2.b);
        }
    }
    if (!identity_permutation) {
        for (auto& mx : model.mixers) std::shuffle(mx.perm.begin(), mx.perm.end(), rng);
    }
    return model;
}

/// Perturbs every parameter (including output layers and the L/U triangles)
/// so that no block or mixer is the identity. Weights are N(0, scale^2 / fan_in),
/// biases N(0, scale^2). For property tests and gradient checks.
template <typename T>
void randomize(Model<T>& model, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    std::uniform_real_distribution<double> diag(0.6, 1.4);
    for (auto& blk : model.blocks) {
        for (Mlp<T>* net : {&blk.s1, &blk.t1, &blk.s2, &blk.t2}) {
            for (Dense<T>* d : {&net->l1, &net->l2, &net->l3}) {
                // weights shrink with fan-in so activations stay O(1) at any width
                const double w_scale = 1.0 / std::sqrt(static_cast<double>(d->w.cols()));
                for (Eigen::Index i = 0; i < d->w.size(); ++i) d->w.data()[i] = static_cast<T>(g(rng) * w_scale);
                for (Eigen::Index i = 0; i < d->b.size(); ++i) d->b.data()[i] = static_cast<T>(g(rng));
            }
        }
    }
    for (auto& mx : model.mixers) {
        const Eigen::Index n = mx.size();
        for (Eigen::Index c = 0; c < n; ++c) {
            for (Eigen::Index r = 0; r < n; ++r) {
                if (r > c) mx.lower(r, c) = static_cast<T>(g(rng) / std::sqrt(static_cast<double>(n)));
                if (r < c) mx.upper(r, c) = static_cast<T>(g(rng) / std::sqrt(static_cast<double>(n)));
            }
            const double mag = diag(rng);
            mx.upper(c, c) = static_cast<T>(g(rng) < 0.0 ? -mag : mag);
        }
        std::shuffle(mx.perm.begin(), mx.perm.end(), rng);
    }
}

/// Batch reconstruction loss: sqrt(mean over columns of |x_i - xhat_i|^2).
template <typename T>
T loss_lx(const Mat<T>& x, const Mat<T>& pred) {
    if (x.rows() != pred.rows() || x.cols() != pred.cols()) throw ShapeMismatch("loss operands differ in shape");
    require(x.cols() >= 1, "loss needs at least one sample");
    return std::sqrt((x - pred).squaredNorm() / static_cast<T>(x.cols()));
}

/// d loss_lx / d pred; zero when the loss is zero.
template <typename T>
Mat<T> loss_lx_grad(const Mat<T>& x, const Mat<T>& pred, T loss) {
    if (loss == T(0)) return Mat<T>::Zero(pred.rows(), pred.cols());
    return (pred - x) / (static_cast<T>(x.cols()) * loss);
}

/// Loss and parameter gradients for one batch with fixed latents.
template <typename T>
T loss_and_gradient(const Model<T>& model, const Mat<T>& x, const Mat<T>& yz, Model<T>& grad) {
    typename Model<T>::Cache cache;
    const Mat<T> pred = model.inverse_map(yz, &cache);
    const T loss = loss_lx(x, pred);
    model.backward(cache, loss_lx_grad(x, pred, loss), grad);
    return loss;
}

struct GradientCheckResult {
    double max_relative_error = 0.0;
    double max_abs_analytic = 0.0;
    std::size_t parameters = 0;
};

/// Compares analytic gradients of loss_lx with central differences (float64).
/// Relative error is |a - n| / max(|a|, |n|, floor) with floor = 1e-6 so that
/// vanishing gradients compare on an absolute scale. The step balances
/// truncation (h^2) against cancellation (eps / h) on gradients near the floor.
inline GradientCheckResult gradient_check(const Model<double>& model, const Mat<double>& x, const Mat<double>& yz,
                                          double step = 1e-4, double floor = 1e-6) {
    require(model.n() <= 16, "gradient check is meant for small models (N <= 16)");
    Model<double> grad = model.zeros_like();
    loss_and_gradient(model, x, yz, grad);
    Model<double> probe = model;
    auto params = probe.tensors();
    const auto grads = grad.tensors();
    GradientCheckResult res;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].size(); ++i) {
            const double saved = params[t][i];
            params[t][i] = saved + step;
            const double up = loss_lx(x, probe.inverse_map(yz));
            params[t][i] = saved - step;
            const double down = loss_lx(x, probe.inverse_map(yz));
            params[t][i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = grads[t][i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            res.max_relative_error = std::max(res.max_relative_error, std::abs(analytic - numeric) / denom);
            res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(analytic));
            ++res.parameters;
        }
    }
    return res;
}

}  // namespace bubbletomo::inn
