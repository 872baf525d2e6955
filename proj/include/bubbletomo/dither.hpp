#pragma once

// Random error diffusion: Floyd-Steinberg with per-pixel Dirichlet-drawn
// neighbour fractions, ensembles of binary maps, a pixelwise Bernoulli
// density with add-pseudo-count smoothing, and the groundtruth log-likelihood
// score.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bubbletomo/errors.hpp"
#include "bubbletomo/rng.hpp"

namespace bubbletomo {

/// Shares of the quantization error sent to (right, below-left, below,
/// below-right).
using Fractions = std::array<double, 4>;

inline constexpr Fractions kFloydSteinberg{7.0 / 16.0, 3.0 / 16.0, 5.0 / 16.0, 1.0 / 16.0};

enum class FractionGranularity { PerPixel, PerMember };

struct DitherConfig {
    std::size_t ensemble_size = 100;
    std::array<double, 4> dirichlet_alpha{1.0, 1.0, 1.0, 1.0};
    std::uint64_t seed = 0;
    double epsilon = 0.0;  // 0 selects the default 1 / (ensemble_size + 2)
    FractionGranularity granularity = FractionGranularity::PerPixel;

    double smoothing_epsilon() const {
        return epsilon > 0.0 ? epsilon : 1.0 / (static_cast<double>(ensemble_size) + 2.0);
    }

    void validate() const {
        require(ensemble_size >= 1, "ensemble_size must be at least 1");
        for (double a : dirichlet_alpha) require(a > 0.0, "dirichlet_alpha entries must be positive");
        const double e = smoothing_epsilon();
        require(e > 0.0 && e < 0.5, "smoothing epsilon must lie in (0, 0.5)");
    }
};

/// Dirichlet(alpha) via normalised Gamma(alpha_i, 1) draws.
class DirichletSampler {
public:
    explicit DirichletSampler(std::array<double, 4> alpha)
        : g_{std::gamma_distribution<double>(alpha[0]), std::gamma_distribution<double>(alpha[1]),
             std::gamma_distribution<double>(alpha[2]), std::gamma_distribution<double>(alpha[3])} {}

    Fractions operator()(Rng& rng) {
        Fractions f{};
        double sum = 0.0;
        do {
            sum = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                f[i] = g_[i](rng);
                sum += f[i];
            }
        } while (!(sum > 0.0));
        for (double& v : f) v /= sum;
        return f;
    }

private:
    std::array<std::gamma_distribution<double>, 4> g_;
};

/// Error diffusion over an nx x ny grid (row-major, rows along y). Inputs are
/// clamped to [0, 1]; each pixel is thresholded at 0.5 and its error spread
/// with `next_fractions()`; shares falling outside the grid are dropped.
inline std::vector<double> dither_once(std::span<const double> map, std::size_t nx, std::size_t ny,
                                       const std::function<Fractions()>& next_fractions) {
    if (map.size() != nx * ny) throw ShapeMismatch("map size does not match the grid");
    std::vector<double> work(map.size());
    std::transform(map.begin(), map.end(), work.begin(), [](double v) { return std::clamp(v, 0.0, 1.0); });
    std::vector<double> out(map.size(), 0.0);
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const std::size_t c = iy * nx + ix;
            const double old = work[c];
            const double q = old >= 0.5 ? 1.0 : 0.0;
            out[c] = q;
            const double err = old - q;
            if (err == 0.0) continue;
            const Fractions f = next_fractions();
            if (ix + 1 < nx) work[c + 1] += err * f[0];
            if (iy + 1 < ny) {
                if (ix > 0) work[c + nx - 1] += err * f[1];
                work[c + nx] += err * f[2];
                if (ix + 1 < nx) work[c + nx + 1] += err * f[3];
            }
        }
    }
    return out;
}

/// Randomized dither of one member with its own stream.
inline std::vector<double> dither_random(std::span<const double> map, std::size_t nx, std::size_t ny,
                                         const DitherConfig& cfg, std::uint64_t member_seed) {
    Rng rng(member_seed);
    DirichletSampler sampler(cfg.dirichlet_alpha);
    if (cfg.granularity == FractionGranularity::PerMember) {
        const Fractions fixed = sampler(rng);
        return dither_once(map, nx, ny, [&] { return fixed; });
    }
    return dither_once(map, nx, ny, [&] { return sampler(rng); });
}

struct DitherEnsemble {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<std::vector<double>> members;
    std::vector<double> pixel_freq;  // fraction of members with a 1
    std::vector<double> density;     // smoothed Bernoulli parameter q in (0, 1)
};

/// q_p = (ones_p + a) / (E + 2 a) with pseudo-count a chosen so that a pixel
/// that is never 1 gets q = epsilon; the default epsilon 1 / (E + 2) gives
/// Laplace smoothing (a = 1).
inline DitherEnsemble build_ensemble(std::span<const double> map, std::size_t nx, std::size_t ny,
                                     const DitherConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DitherEnsemble ens;
    ens.nx = nx;
    ens.ny = ny;
    const auto e = static_cast<double>(cfg.ensemble_size);
    std::vector<double> ones(nx * ny, 0.0);
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) {
        auto member = dither_random(map, nx, ny, cfg, derive_seed(seed, {k}));
        for (std::size_t p = 0; p < ones.size(); ++p) ones[p] += member[p];
        ens.members.push_back(std::move(member));
    }
    const double eps = cfg.smoothing_epsilon();
    const double pseudo = eps * e / (1.0 - 2.0 * eps);
    ens.pixel_freq.resize(ones.size());
    ens.density.resize(ones.size());
    for (std::size_t p = 0; p < ones.size(); ++p) {
        ens.pixel_freq[p] = ones[p] / e;
        ens.density[p] = (ones[p] + pseudo) / (e + 2.0 * pseudo);
    }
    return ens;
}

/// Sum over pixels of x log q + (1 - x) log(1 - q).
inline double log_likelihood(std::span<const double> groundtruth, const DitherEnsemble& ens) {
    if (groundtruth.size() != ens.density.size()) throw ShapeMismatch("groundtruth and ensemble differ in size");
    double ll = 0.0;
    for (std::size_t p = 0; p < groundtruth.size(); ++p) {
        const double x = groundtruth[p];
        require(x == 0.0 || x == 1.0, "groundtruth must be binary");
        ll += x == 1.0 ? std::log(ens.density[p]) : std::log1p(-ens.density[p]);
    }
    return ll;
}

struct ModelScores {
    std::string model;
    std::vector<std::size_t> sample_ids;
    std::vector<double> loglik;

    double mean() const {
        double s = 0.0;
        for (double v : loglik) s += v;
        return loglik.empty() ? 0.0 : s / static_cast<double>(loglik.size());
    }

    /// Sample standard deviation (n - 1); 0 for fewer than two samples.
    double stddev() const {
        if (loglik.size() < 2) return 0.0;
        const double mu = mean();
        double s = 0.0;
        for (double v : loglik) s += (v - mu) * (v - mu);
        return std::sqrt(s / static_cast<double>(loglik.size() - 1));
    }
};

/// Scores aligned rows of continuous predictions against binary groundtruths.
/// Sample i uses ensemble seed derive_seed(cfg.seed, {sample_ids[i]}), so
/// different models see identical dither randomness per sample.
inline ModelScores evaluate_model(const std::string& name, const std::vector<std::vector<double>>& predictions,
                                  const std::vector<std::vector<double>>& groundtruths,
                                  const std::vector<std::size_t>& sample_ids, std::size_t nx, std::size_t ny,
                                  const DitherConfig& cfg) {
    if (predictions.size() != groundtruths.size() || predictions.size() != sample_ids.size()) {
        throw ShapeMismatch("predictions (" + std::to_string(predictions.size()) + " rows) and groundtruths (" +
                            std::to_string(groundtruths.size()) + " rows) are not aligned");
    }
    ModelScores scores;
    scores.model = name;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].size() != nx * ny || groundtruths[i].size() != nx * ny) {
            throw ShapeMismatch("row " + std::to_string(i) + " has " + std::to_string(predictions[i].size()) +
                                " values, expected " + std::to_string(nx * ny));
        }
        const auto ens = build_ensemble(predictions[i], nx, ny, cfg, derive_seed(cfg.seed, {sample_ids[i]}));
        scores.sample_ids.push_back(sample_ids[i]);
        scores.loglik.push_back(log_likelihood(groundtruths[i], ens));
    }
    return scores;
}

inline void write_scores_csv(const std::vector<ModelScores>& all, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "sample_id,model,loglik\n";
    for (const auto& s : all) {
        for (std::size_t i = 0; i < s.loglik.size(); ++i) out << s.sample_ids[i] << ',' << s.model << ',' << s.loglik[i] << '\n';
    }
}

inline void write_summary_csv(const std::vector<ModelScores>& all, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "model,mean_loglik,std_loglik,n\n";
    for (const auto& s : all) out << s.model << ',' << s.mean() << ',' << s.stddev() << ',' << s.loglik.size() << '\n';
}

}  // namespace bubbletomo
