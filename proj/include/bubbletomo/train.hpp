#pragma once

// Adam training of the x-direction with the batch reconstruction loss,
// fresh Gaussian latents per step, fixed validation latents, early stopping,
// and the BINN checkpoint format.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bubbletomo/binary_io.hpp"
#include "bubbletomo/errors.hpp"
#include "bubbletomo/inn.hpp"
#include "bubbletomo/rng.hpp"

namespace bubbletomo::inn {

struct TrainConfig {
    std::size_t batch_size = 100;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.8;
    double adam_beta2 = 0.9;
    double adam_eps = 1e-8;
    std::size_t max_epochs = 500;
    std::size_t patience = 10;
    std::uint64_t seed = 0;

    void validate() const {
        require(batch_size >= 1, "batch_size must be positive");
        require(learning_rate >= 0.0, "learning_rate must be non-negative");
        require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in (0, 1)");
        require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in (0, 1)");
        require(adam_eps > 0.0, "adam_eps must be positive");
        require(max_epochs >= 1, "max_epochs must be positive");
        require(patience >= 1, "patience must be positive");
    }

    nlohmann::json to_json() const {
        return {{"batch_size", batch_size},     {"learning_rate", learning_rate}, {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},     {"adam_eps", adam_eps},           {"max_epochs", max_epochs},
                {"patience", patience},         {"seed", seed}};
    }
};

template <typename T>
class Adam {
public:
    Adam(const Model<T>& model, const TrainConfig& cfg)
        : cfg_(cfg), m_(model.zeros_like()), v_(model.zeros_like()) {}

    void step(Model<T>& model, Model<T>& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
        const T lr = static_cast<T>(cfg_.learning_rate * std::sqrt(bc2) / bc1);
        const T b1 = static_cast<T>(cfg_.adam_beta1);
        const T b2 = static_cast<T>(cfg_.adam_beta2);
        const T eps = static_cast<T>(cfg_.adam_eps * std::sqrt(bc2));
        auto p = model.tensors();
        auto g = grad.tensors();
        auto m = m_.tensors();
        auto v = v_.tensors();
        for (std::size_t t = 0; t < p.size(); ++t) {
            for (std::size_t i = 0; i < p[t].size(); ++i) {
                const T gi = g[t][i];
                m[t][i] = b1 * m[t][i] + (T(1) - b1) * gi;
                v[t][i] = b2 * v[t][i] + (T(1) - b2) * gi * gi;
                p[t][i] -= lr * m[t][i] / (std::sqrt(v[t][i]) + eps);
            }
        }
    }

private:
    TrainConfig cfg_;
    Model<T> m_, v_;
    std::uint64_t t_ = 0;
};

struct EpochLoss {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochLoss> curve;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
    bool diverged = false;
    std::size_t clamp_events = 0;
    double seconds = 0.0;
};

/// Standardized training data with one sample per column.
template <typename T>
struct TrainData {
    Mat<T> x_train, y_train, x_val, y_val;
};

template <typename T>
Mat<T> gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Mat<T> out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<T>(g(rng));
    return out;
}

template <typename T>
Mat<T> stack(const Mat<T>& top, const Mat<T>& bottom) {
    Mat<T> out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

/// Evaluates loss_lx over all columns in chunks (same value as one batch).
template <typename T>
double evaluate_loss(const Model<T>& model, const Mat<T>& x, const Mat<T>& y, const Mat<T>& z,
                     Eigen::Index chunk = 256) {
    double sq = 0.0;
    for (Eigen::Index c0 = 0; c0 < x.cols(); c0 += chunk) {
        const Eigen::Index w = std::min(chunk, x.cols() - c0);
        const Mat<T> pred = model.inverse_map(stack<T>(y.middleCols(c0, w), z.middleCols(c0, w)));
        sq += static_cast<double>((x.middleCols(c0, w) - pred).squaredNorm());
    }
    return std::sqrt(sq / static_cast<double>(x.cols()));
}

/// Trains `model` in place and restores the parameters of the best validation
/// epoch. `on_epoch` (optional) observes each epoch as it completes.
template <typename T>
TrainResult train(Model<T>& model, const TrainData<T>& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLoss&)>& on_epoch = {}) {
    cfg.validate();
    const auto n = static_cast<Eigen::Index>(model.n());
    const auto m = static_cast<Eigen::Index>(model.m());
    const auto d = static_cast<Eigen::Index>(model.d());
    if (data.x_train.rows() != n || data.y_train.rows() != m || data.x_val.rows() != n || data.y_val.rows() != m) {
        throw ShapeMismatch("training data (N=" + std::to_string(data.x_train.rows()) +
                            ", M=" + std::to_string(data.y_train.rows()) + ") does not match model (N=" +
                            std::to_string(n) + ", M=" + std::to_string(m) + ")");
    }
    require(data.x_train.cols() >= 1, "training split is empty");
    const auto start = std::chrono::steady_clock::now();

    Rng rng(derive_seed(cfg.seed, {0x7241494EULL}));
    Rng val_rng(derive_seed(cfg.seed, {0x56414CULL}));
    const Mat<T> z_val = gaussian<T>(d, data.x_val.cols(), val_rng);
    const bool has_val = data.x_val.cols() > 0;

    Adam<T> adam(model, cfg);
    Model<T> grad = model.zeros_like();
    Model<T> best = model;
    TrainResult res;
    std::size_t since_best = 0;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.x_train.cols()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch = static_cast<Eigen::Index>(cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum_loss = 0.0;
        std::size_t batches = 0;
        bool finite = true;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const Eigen::Index w = std::min<Eigen::Index>(batch, static_cast<Eigen::Index>(order.size() - b0));
            Mat<T> xb(n, w), yzb(n, w);
            for (Eigen::Index c = 0; c < w; ++c) {
                const Eigen::Index src = order[b0 + static_cast<std::size_t>(c)];
                xb.col(c) = data.x_train.col(src);
                yzb.col(c).head(m) = data.y_train.col(src);
            }
            yzb.bottomRows(d) = gaussian<T>(d, w, rng);
            grad.set_zero();
            T loss{};
            try {
                loss = loss_and_gradient(model, xb, yzb, grad);
            } catch (const NumericalFailure&) {
                finite = false;
                break;
            }
            if (!std::isfinite(static_cast<double>(loss))) {
                finite = false;
                break;
            }
            adam.step(model, grad);
            res.clamp_events += model.clamp_mixers();
            sum_loss += static_cast<double>(loss);
            ++batches;
        }
        double val_loss = 0.0;
        if (finite) {
            try {
                val_loss = has_val ? evaluate_loss(model, data.x_val, data.y_val, z_val)
                                   : sum_loss / static_cast<double>(batches);
            } catch (const NumericalFailure&) {
                finite = false;
            }
        }
        if (!finite || !std::isfinite(val_loss) || !model.all_finite()) {
            res.diverged = true;
            break;
        }
        const EpochLoss e{epoch, sum_loss / static_cast<double>(batches), val_loss};
        res.curve.push_back(e);
        if (on_epoch) on_epoch(e);
        if (val_loss < res.best_val_loss) {
            res.best_val_loss = val_loss;
            res.best_epoch = epoch;
            best = model;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    model = std::move(best);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

/// Posterior-mean reconstruction over `n_z` latent draws per column.
template <typename T>
Mat<T> reconstruct(const Model<T>& model, const Mat<T>& y, std::size_t n_z, std::uint64_t seed) {
    require(n_z >= 1, "n_z must be at least 1");
    if (static_cast<std::size_t>(y.rows()) != model.m()) {
        throw ShapeMismatch("model expects " + std::to_string(model.m()) + " sensor features, got " +
                            std::to_string(y.rows()));
    }
    Rng rng(derive_seed(seed, {0x5245434FULL}));
    Mat<T> acc = Mat<T>::Zero(static_cast<Eigen::Index>(model.n()), y.cols());
    for (std::size_t s = 0; s < n_z; ++s) {
        const Mat<T> z = gaussian<T>(static_cast<Eigen::Index>(model.d()), y.cols(), rng);
        acc += model.inverse_map(stack<T>(y, z));
    }
    return acc / static_cast<T>(n_z);
}

inline void write_loss_curve(const std::vector<EpochLoss>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "epoch,train_loss,val_loss\n";
    for (const auto& e : curve) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// BINN layout: magic, u32 version, u64 N, M, D, k, hidden, f64 s_clamp,
/// k x N u64 mixer permutations, f64 parameters in Model::for_each_tensor
/// order, JSON training fingerprint.
template <typename T>
void write_checkpoint(const Model<T>& model, const nlohmann::json& fingerprint, const std::string& path) {
    io::Writer w(path);
    w.magic("BINN");
    w.scalar<std::uint32_t>(kCheckpointVersion);
    w.scalar<std::uint64_t>(model.n());
    w.scalar<std::uint64_t>(model.m());
    w.scalar<std::uint64_t>(model.d());
    w.scalar<std::uint64_t>(model.shape.k);
    w.scalar<std::uint64_t>(model.shape.hidden);
    w.scalar<double>(model.shape.s_clamp);
    for (const auto& mx : model.mixers) {
        for (std::size_t p : mx.perm) w.scalar<std::uint64_t>(p);
    }
    auto* self = const_cast<Model<T>*>(&model);
    self->for_each_tensor([&](std::span<T> s) {
        std::vector<double> buf(s.begin(), s.end());
        w.array<double>(buf);
    });
    w.json(fingerprint);
    w.close();
}

template <typename T>
Model<T> read_checkpoint(const std::string& path, nlohmann::json* fingerprint = nullptr) {
    io::Reader r(path);
    r.expect_magic("BINN");
    r.expect_version(kCheckpointVersion);
    ModelShape shape;
    shape.n = r.scalar<std::uint64_t>();
    shape.m = r.scalar<std::uint64_t>();
    const auto d = r.scalar<std::uint64_t>();
    shape.k = r.scalar<std::uint64_t>();
    shape.hidden = r.scalar<std::uint64_t>();
    shape.s_clamp = r.scalar<double>();
    if (shape.m + d != shape.n) throw ConfigError("'" + path + "': inconsistent dimensions (M + D != N)");
    Model<T> model(shape);
    for (auto& mx : model.mixers) {
        for (std::size_t& p : mx.perm) p = r.scalar<std::uint64_t>();
        std::vector<std::size_t> sorted = mx.perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != i) throw ConfigError("'" + path + "': mixer permutation is not a permutation");
        }
    }
    model.for_each_tensor([&](std::span<T> s) {
        const auto buf = r.array<double>(s.size());
        std::transform(buf.begin(), buf.end(), s.begin(), [](double v) { return static_cast<T>(v); });
    });
    const auto fp = r.json();
    if (fingerprint != nullptr) *fingerprint = fp;
    return model;
}

}  // namespace bubbletomo::inn
