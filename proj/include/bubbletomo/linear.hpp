#pragma once

// Linear reconstruction baselines x = W y + b fitted on standardized rows:
// ridge (Tikhonov) in closed form and ElasticNet by coordinate descent, both
// with k-fold cross-validated regularization.
//
// Both minimise, per output column,
//   1/2 |x - Y w|^2 + lambda * l1_ratio * |w|_1 + lambda * (1 - l1_ratio) / 2 * |w|^2
// on fold-centred data, so l1_ratio = 0 reproduces the ridge normal equations
// (Y^T Y + lambda I) w = Y^T x exactly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bubbletomo/binary_io.hpp"
#include "bubbletomo/dataset.hpp"
#include "bubbletomo/errors.hpp"
#include "bubbletomo/rng.hpp"

namespace bubbletomo {

enum class LinearKind : std::uint32_t { Tikhonov = 0, ElasticNet = 1 };

inline std::string to_string(LinearKind k) { return k == LinearKind::Tikhonov ? "tikhonov" : "elasticnet"; }

struct LinearModel {
    Eigen::MatrixXd weights;  // N x M
    Eigen::VectorXd bias;     // N
    LinearKind kind = LinearKind::Tikhonov;
    double lambda = 0.0;
    double l1_ratio = 0.0;
    nlohmann::json cv_report = nlohmann::json::object();

    double lambda_l1() const { return lambda * l1_ratio; }
    double lambda_l2() const { return lambda * (1.0 - l1_ratio); }
    std::size_t n_x() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t n_y() const { return static_cast<std::size_t>(weights.cols()); }
};

struct LinearOptions {
    std::vector<double> lambda_grid;
    std::vector<double> l1_ratio_grid{0.1, 0.5, 0.9};
    std::size_t folds = 5;
    std::uint64_t seed = 0;
    double tol = 1e-6;
    std::size_t max_iter = 1000;  // coordinate-descent sweeps

    static std::vector<double> log_grid(double lo, double hi, std::size_t n) {
        std::vector<double> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
            g[i] = std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo)));
        }
        return g;
    }

    LinearOptions() : lambda_grid(log_grid(1e-4, 1e2, 13)) {}
};

namespace detail {

struct Centered {
    Eigen::MatrixXd x, y;
    Eigen::RowVectorXd mean_x, mean_y;
};

inline Centered center(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Centered c;
    c.mean_x = x.colwise().mean();
    c.mean_y = y.colwise().mean();
    c.x = x.rowwise() - c.mean_x;
    c.y = y.rowwise() - c.mean_y;
    return c;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
    return out;
}

inline double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

/// Seeded fold id per row: a random permutation dealt round-robin.
inline std::vector<std::size_t> fold_ids(std::size_t n_rows, std::size_t folds, std::uint64_t seed) {
    std::vector<std::size_t> perm(n_rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0xF01D5ULL}));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> id(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) id[perm[i]] = i % folds;
    return id;
}

struct Fold {
    Eigen::MatrixXd x_train, y_train, x_held, y_held;
};

inline std::vector<Fold> make_folds(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t folds,
                                    std::uint64_t seed) {
    const auto ids = fold_ids(static_cast<std::size_t>(x.rows()), folds, seed);
    std::vector<Fold> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> tr, ho;
        for (std::size_t i = 0; i < ids.size(); ++i) (ids[i] == f ? ho : tr).push_back(i);
        out[f] = {take_rows(x, tr), take_rows(y, tr), take_rows(x, ho), take_rows(y, ho)};
    }
    return out;
}

inline void check_training_shapes(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LinearOptions& opt) {
    if (x.rows() != y.rows()) throw ShapeMismatch("x and y row counts differ");
    require(opt.folds >= 2, "cross-validation needs at least 2 folds");
    require(static_cast<std::size_t>(x.rows()) >= opt.folds, "fewer training rows than folds");
    require(!opt.lambda_grid.empty(), "lambda grid is empty");
    for (double l : opt.lambda_grid) require(l > 0.0, "lambda grid entries must be positive");
}

}  // namespace detail

/// Closed-form ridge on centred rows; returns (weights N x M, bias N).
inline void ridge_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda, Eigen::MatrixXd& weights,
                        Eigen::VectorXd& bias) {
    const auto c = detail::center(x, y);
    Eigen::MatrixXd gram = c.y.transpose() * c.y;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalFailure("ridge normal equations are singular");
    weights = llt.solve(c.y.transpose() * c.x).transpose();
    bias = (c.mean_x - c.mean_y * weights.transpose()).transpose();
}

/// Result of one coordinate-descent solve for all outputs.
struct ElasticNetFit {
    Eigen::MatrixXd weights;  // N x M
    Eigen::VectorXd bias;
    std::size_t unconverged_outputs = 0;
    std::size_t max_sweeps = 0;
};

/// Covariance-update coordinate descent. `warm` (N x M) seeds the iterate and
/// may be empty.
inline ElasticNetFit elasticnet_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda,
                                      double l1_ratio, double tol, std::size_t max_iter,
                                      const Eigen::MatrixXd& warm = {}) {
    require(l1_ratio >= 0.0 && l1_ratio <= 1.0, "l1_ratio must lie in [0, 1]");
    const auto c = detail::center(x, y);
    const Eigen::MatrixXd gram = c.y.transpose() * c.y;
    const Eigen::MatrixXd cross = c.y.transpose() * c.x;  // M x N
    const Eigen::Index m = gram.rows();
    const Eigen::Index n = cross.cols();
    const double l1 = lambda * l1_ratio;
    const double l2 = lambda * (1.0 - l1_ratio);

    ElasticNetFit fit;
    fit.weights = warm.size() == 0 ? Eigen::MatrixXd::Zero(n, m) : warm;
    Eigen::VectorXd w(m), q(m);
    for (Eigen::Index j = 0; j < n; ++j) {
        w = fit.weights.row(j).transpose();
        q = gram * w;
        std::size_t sweep = 0;
        bool converged = false;
        while (sweep < max_iter) {
            ++sweep;
            double max_change = 0.0;
            for (Eigen::Index k = 0; k < m; ++k) {
                const double gkk = gram(k, k);
                const double rho = cross(k, j) - q[k] + gkk * w[k];
                const double denom = gkk + l2;
                double w_new = 0.0;
                if (denom > 0.0) {
                    const double mag = std::abs(rho) - l1;
                    w_new = mag > 0.0 ? std::copysign(mag, rho) / denom : 0.0;
                }
                const double delta = w_new - w[k];
                if (delta != 0.0) {
                    q += gram.col(k) * delta;
                    w[k] = w_new;
                    max_change = std::max(max_change, std::abs(delta));
                }
            }
            if (max_change < tol) {
                converged = true;
                break;
            }
        }
        if (!converged) ++fit.unconverged_outputs;
        fit.max_sweeps = std::max(fit.max_sweeps, sweep);
        fit.weights.row(j) = w.transpose();
    }
    fit.bias = (c.mean_x - c.mean_y * fit.weights.transpose()).transpose();
    return fit;
}

/// Penalised objective summed over outputs (on centred data); used to check
/// monotone descent.
inline double elasticnet_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& weights,
                                   double lambda, double l1_ratio) {
    const auto c = detail::center(x, y);
    const Eigen::MatrixXd r = c.x - c.y * weights.transpose();
    return 0.5 * r.squaredNorm() + lambda * l1_ratio * weights.cwiseAbs().sum() +
           0.5 * lambda * (1.0 - l1_ratio) * weights.squaredNorm();
}

/// Selects lambda by lowest mean held-out RMSE (ties go to the larger lambda)
/// and refits on all rows. Rows must already be standardized.
inline LinearModel fit_tikhonov(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LinearOptions& opt = {}) {
    detail::check_training_shapes(x, y, opt);
    std::vector<double> grid = opt.lambda_grid;
    std::sort(grid.begin(), grid.end());
    const auto folds = detail::make_folds(x, y, opt.folds, opt.seed);

    nlohmann::json candidates = nlohmann::json::array();
    double best_score = std::numeric_limits<double>::infinity();
    double best_lambda = grid.front();
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    for (double lambda : grid) {
        double score = 0.0;
        for (const auto& f : folds) {
            ridge_solve(f.x_train, f.y_train, lambda, w, b);
            const Eigen::MatrixXd pred = (f.y_held * w.transpose()).rowwise() + b.transpose();
            score += detail::rmse(pred, f.x_held);
        }
        score /= static_cast<double>(folds.size());
        candidates.push_back({{"lambda", lambda}, {"l1_ratio", 0.0}, {"mean_rmse", score}});
        if (score <= best_score) {
            best_score = score;
            best_lambda = lambda;
        }
    }

    LinearModel model;
    model.kind = LinearKind::Tikhonov;
    model.lambda = best_lambda;
    model.l1_ratio = 0.0;
    ridge_solve(x, y, best_lambda, model.weights, model.bias);
    model.cv_report = {{"folds", opt.folds},
                       {"seed", opt.seed},
                       {"candidates", candidates},
                       {"selected", {{"lambda", best_lambda}, {"l1_ratio", 0.0}, {"mean_rmse", best_score}}}};
    return model;
}

/// Grid search over (lambda, l1_ratio). Each fold walks the lambda path from
/// large to small with warm starts.
inline LinearModel fit_elasticnet(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LinearOptions& opt = {}) {
    detail::check_training_shapes(x, y, opt);
    require(!opt.l1_ratio_grid.empty(), "l1_ratio grid is empty");
    for (double r : opt.l1_ratio_grid) require(r >= 0.0 && r <= 1.0, "l1_ratio entries must lie in [0, 1]");
    std::vector<double> grid = opt.lambda_grid;
    std::sort(grid.begin(), grid.end(), std::greater<>());
    const auto folds = detail::make_folds(x, y, opt.folds, opt.seed);

    struct Cell {
        double lambda, ratio, score = 0.0;
        std::size_t unconverged = 0;
    };
    std::vector<Cell> cells;
    for (double ratio : opt.l1_ratio_grid) {
        for (double lambda : grid) cells.push_back({lambda, ratio});
    }
    for (const auto& f : folds) {
        std::size_t cell = 0;
        for (std::size_t ri = 0; ri < opt.l1_ratio_grid.size(); ++ri) {
            Eigen::MatrixXd warm;
            for (std::size_t li = 0; li < grid.size(); ++li, ++cell) {
                auto fit = elasticnet_solve(f.x_train, f.y_train, grid[li], opt.l1_ratio_grid[ri], opt.tol,
                                            opt.max_iter, warm);
                const Eigen::MatrixXd pred = (f.y_held * fit.weights.transpose()).rowwise() + fit.bias.transpose();
                cells[cell].score += detail::rmse(pred, f.x_held) / static_cast<double>(folds.size());
                cells[cell].unconverged += fit.unconverged_outputs;
                warm = std::move(fit.weights);
            }
        }
    }

    nlohmann::json candidates = nlohmann::json::array();
    const Cell* best = nullptr;
    for (const Cell& c : cells) {
        candidates.push_back({{"lambda", c.lambda},
                              {"l1_ratio", c.ratio},
                              {"mean_rmse", c.score},
                              {"unconverged_outputs", c.unconverged}});
        if (best == nullptr || c.score < best->score || (c.score == best->score && c.lambda > best->lambda)) {
            best = &c;
        }
    }

    LinearModel model;
    model.kind = LinearKind::ElasticNet;
    model.lambda = best->lambda;
    model.l1_ratio = best->ratio;
    // Refit along the same descending path so the final solve is warm-started.
    Eigen::MatrixXd warm;
    ElasticNetFit fit;
    for (double lambda : grid) {
        fit = elasticnet_solve(x, y, lambda, best->ratio, opt.tol, opt.max_iter, warm);
        warm = fit.weights;
        if (lambda == best->lambda) break;
    }
    model.weights = fit.weights;
    model.bias = fit.bias;
    model.cv_report = {{"folds", opt.folds},
                       {"seed", opt.seed},
                       {"tol", opt.tol},
                       {"max_iter", opt.max_iter},
                       {"candidates", candidates},
                       {"selected",
                        {{"lambda", best->lambda},
                         {"l1_ratio", best->ratio},
                         {"mean_rmse", best->score},
                         {"unconverged_outputs", fit.unconverged_outputs}}}};
    return model;
}

/// x = W y + b on standardized readings; returns standardized maps.
inline Eigen::MatrixXd predict_standardized(const LinearModel& model, const Eigen::MatrixXd& y_std) {
    if (static_cast<std::size_t>(y_std.cols()) != model.n_y()) {
        throw ShapeMismatch("linear model expects " + std::to_string(model.n_y()) + " sensor features, got " +
                            std::to_string(y_std.cols()));
    }
    return (y_std * model.weights.transpose()).rowwise() + model.bias.transpose();
}

/// Predicted maps in original units; optionally clipped to [0, 1].
inline Eigen::MatrixXd predict(const LinearModel& model, const Standardizer& st, const Eigen::MatrixXd& y_std,
                               bool clip = false) {
    if (st.n_x() != model.n_x()) throw ShapeMismatch("standardizer and linear model disagree on N");
    Eigen::MatrixXd out = st.invert_x(predict_standardized(model, y_std));
    if (clip) out = out.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

inline constexpr std::uint32_t kLinearVersion = 1;

inline void write_linear(const LinearModel& model, const std::string& path) {
    io::Writer w(path);
    w.magic("BLIN");
    w.scalar<std::uint32_t>(kLinearVersion);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(model.kind));
    w.scalar<std::uint64_t>(model.n_x());
    w.scalar<std::uint64_t>(model.n_y());
    w.scalar<double>(model.lambda);
    w.scalar<double>(model.l1_ratio);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = model.weights;
    w.array<double>(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
    w.array<double>(std::span<const double>(model.bias.data(), static_cast<std::size_t>(model.bias.size())));
    w.json(model.cv_report);
    w.close();
}

inline LinearModel read_linear(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("BLIN");
    r.expect_version(kLinearVersion);
    LinearModel model;
    const auto kind = r.scalar<std::uint32_t>();
    if (kind > 1) throw ConfigError("'" + path + "': unknown linear model kind");
    model.kind = static_cast<LinearKind>(kind);
    const auto n = r.scalar<std::uint64_t>();
    const auto m = r.scalar<std::uint64_t>();
    model.lambda = r.scalar<double>();
    model.l1_ratio = r.scalar<double>();
    const auto wv = r.array<double>(n * m);
    model.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        wv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    const auto bv = r.array<double>(n);
    model.bias = Eigen::Map<const Eigen::VectorXd>(bv.data(), static_cast<Eigen::Index>(n));
    model.cv_report = r.json();
    return model;
}

}  // namespace bubbletomo
