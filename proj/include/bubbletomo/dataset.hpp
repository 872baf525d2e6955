#pragma once

// Paired (binary conductivity map, sensor reading) datasets: generation,
// train/validation split, train-only standardization and the BTOM / BSTD
// file formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bubbletomo/binary_io.hpp"
#include "bubbletomo/errors.hpp"
#include "bubbletomo/physics.hpp"
#include "bubbletomo/rng.hpp"
#include "bubbletomo/scene.hpp"

namespace bubbletomo {

enum class Split : std::uint8_t { Train = 0, Validation = 1 };

struct GenerationConfig {
    ChannelSpec channel;
    DiskConfig disks;
    std::size_t subsample = 8;
    double binarize_threshold = 0.25;
    SensorArray sensors;
    double applied_current = 1.0;
    SolverOptions solver;
    bool forward_on_binary = false;
    double train_fraction = 0.8;
    std::size_t max_resamples = 100;

    void validate() const {
        channel.validate();
        disks.validate();
        sensors.validate();
        require(subsample >= 1, "subsample must be at least 1");
        require(binarize_threshold > 0.0 && binarize_threshold <= 1.0, "binarize_threshold must lie in (0, 1]");
        require(applied_current > 0.0, "applied_current_a must be positive");
        require(train_fraction > 0.0 && train_fraction <= 1.0, "train fraction must lie in (0, 1]");
        require(channel.cells() > sensors.size(), "conductivity map must have more cells than there are sensors");
    }

    nlohmann::json to_json() const {
        return {
            {"channel",
             {{"length_x", channel.length_x},
              {"length_y", channel.length_y},
              {"thickness", channel.thickness},
              {"grid_nx", channel.grid_nx},
              {"grid_ny", channel.grid_ny},
              {"sigma_ref", channel.sigma_ref}}},
            {"disks",
             {{"min_disks", disks.min_disks},
              {"max_disks", disks.max_disks},
              {"r_min", disks.r_min},
              {"r_max", disks.r_max}}},
            {"subsample", subsample},
            {"binarize_threshold", binarize_threshold},
            {"sensors",
             {{"rows", sensors.rows},
              {"cols", sensors.cols},
              {"d_sensor", sensors.d_sensor},
              {"component", to_string(sensors.component)},
              {"selection", sensors.selection}}},
            {"applied_current", applied_current},
            {"sigma_floor", solver.sigma_floor},
            {"forward_on_binary", forward_on_binary},
            {"train_fraction", train_fraction},
        };
    }
};

struct Dataset {
    std::size_t n_rows = 0;
    std::size_t n_x = 0;  // N
    std::size_t n_y = 0;  // M
    std::vector<float> x;  // n_rows x n_x, row-major
    std::vector<float> y;  // n_rows x n_y, row-major
    std::vector<std::uint8_t> split;
    nlohmann::json meta = nlohmann::json::object();

    std::span<const float> x_row(std::size_t i) const { return {x.data() + i * n_x, n_x}; }
    std::span<const float> y_row(std::size_t i) const { return {y.data() + i * n_y, n_y}; }

    std::vector<std::size_t> rows(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < n_rows; ++i) {
            if (split[i] == static_cast<std::uint8_t>(s)) out.push_back(i);
        }
        return out;
    }

    /// Selected rows as a dense (rows x N) matrix.
    Eigen::MatrixXd x_matrix(const std::vector<std::size_t>& idx) const { return gather(x, n_x, idx); }
    Eigen::MatrixXd y_matrix(const std::vector<std::size_t>& idx) const { return gather(y, n_y, idx); }

    std::size_t grid_nx() const { return meta.value(nlohmann::json::json_pointer("/generation/channel/grid_nx"), n_x); }
    std::size_t grid_ny() const { return meta.value(nlohmann::json::json_pointer("/generation/channel/grid_ny"), std::size_t{1}); }

private:
    static Eigen::MatrixXd gather(const std::vector<float>& src, std::size_t width, const std::vector<std::size_t>& idx) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(width));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = src[idx[r] * width + c];
            }
        }
        return m;
    }
};

inline std::size_t validation_count(std::size_t n_rows, double train_fraction) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n_rows) * (1.0 - train_fraction) + 1e-9));
}

struct GeneratedScene {
    ConductivityMap continuous;
    ConductivityMap binary;
    std::vector<double> reading;
    std::size_t resamples = 0;
};

/// One scene with its readings; blocked channels are redrawn with fresh
/// sub-seeds up to `max_resamples` times.
inline GeneratedScene generate_scene(const GenerationConfig& cfg, std::uint64_t seed, std::size_t index) {
    GeneratedScene out;
    for (std::size_t attempt = 0;; ++attempt) {
        const std::uint64_t s = derive_seed(seed, {index, attempt});
        try {
            const DiskSet disks = sample_scene(cfg.channel, cfg.disks, s);
            out.continuous = rasterize(cfg.channel, disks, cfg.subsample);
            out.binary = binarize(out.continuous, cfg.binarize_threshold);
            out.reading = forward(cfg.forward_on_binary ? out.binary : out.continuous, cfg.channel, cfg.sensors,
                                  cfg.applied_current, cfg.solver);
            out.resamples = attempt;
            return out;
        } catch (const InfeasibleScene&) {
            if (attempt >= cfg.max_resamples) throw;
        }
    }
}

/// Generates `n_scenes` rows, shuffles them with the dataset seed and tags the
/// first ceil(train_fraction * T) rows as train (validation count is floored).
inline Dataset generate(const GenerationConfig& cfg, std::size_t n_scenes, std::uint64_t seed) {
    cfg.validate();
    require(n_scenes >= 1, "number of scenes must be at least 1");
    const std::size_t n = cfg.channel.cells();
    const std::size_t m = cfg.sensors.size();

    std::vector<std::size_t> order(n_scenes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, {0x5348554646ULL}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Dataset ds;
    ds.n_rows = n_scenes;
    ds.n_x = n;
    ds.n_y = m;
    ds.x.resize(n_scenes * n);
    ds.y.resize(n_scenes * m);
    ds.split.assign(n_scenes, static_cast<std::uint8_t>(Split::Train));
    std::size_t resamples = 0;
    for (std::size_t row = 0; row < n_scenes; ++row) {
        const GeneratedScene sc = generate_scene(cfg, seed, order[row]);
        resamples += sc.resamples;
        for (std::size_t c = 0; c < n; ++c) ds.x[row * n + c] = static_cast<float>(sc.binary.values[c]);
        for (std::size_t c = 0; c < m; ++c) {
            if (!std::isfinite(sc.reading[c])) throw NumericalFailure("non-finite sensor reading");
            ds.y[row * m + c] = static_cast<float>(sc.reading[c]);
        }
    }
    const std::size_t n_val = validation_count(n_scenes, cfg.train_fraction);
    for (std::size_t row = n_scenes - n_val; row < n_scenes; ++row) {
        ds.split[row] = static_cast<std::uint8_t>(Split::Validation);
    }
    ds.meta = {{"generation", cfg.to_json()},
               {"seed", seed},
               {"n_scenes", n_scenes},
               {"resamples", resamples},
               {"scene_order", order}};
    return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const Dataset& ds, const std::string& path) {
    io::Writer w(path);
    w.magic("BTOM");
    w.scalar<std::uint32_t>(kDatasetVersion);
    w.scalar<std::uint64_t>(ds.n_rows);
    w.scalar<std::uint64_t>(ds.n_x);
    w.scalar<std::uint64_t>(ds.n_y);
    w.array<float>(ds.x);
    w.array<float>(ds.y);
    w.array<std::uint8_t>(ds.split);
    w.json(ds.meta);
    w.close();
}

inline Dataset read_dataset(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("BTOM");
    r.expect_version(kDatasetVersion);
    Dataset ds;
    ds.n_rows = r.scalar<std::uint64_t>();
    ds.n_x = r.scalar<std::uint64_t>();
    ds.n_y = r.scalar<std::uint64_t>();
    ds.x = r.array<float>(ds.n_rows * ds.n_x);
    ds.y = r.array<float>(ds.n_rows * ds.n_y);
    ds.split = r.array<std::uint8_t>(ds.n_rows);
    ds.meta = r.json();
    return ds;
}

/// Per-feature (v - mean) / std with train-only moments; std is the population
/// standard deviation. Features whose std falls below epsilon (constant over
/// the train split) get unit scale, so they map to 0 and a held-out row that
/// differs stays O(1) instead of blowing up by 1/epsilon.
struct Standardizer {
    Eigen::VectorXd mean_x, std_x, mean_y, std_y;
    double epsilon = 1e-8;

    static void moments(const Eigen::MatrixXd& rows, double eps, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
        const double n = static_cast<double>(rows.rows());
        mean = rows.colwise().mean().transpose();
        sd.resize(rows.cols());
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            const double var = (rows.col(c).array() - mean[c]).square().sum() / n;
            const double s = std::sqrt(var);
            sd[c] = s < eps ? 1.0 : s;
        }
    }

    Eigen::MatrixXd apply_x(const Eigen::MatrixXd& rows) const { return apply(rows, mean_x, std_x); }
    Eigen::MatrixXd apply_y(const Eigen::MatrixXd& rows) const { return apply(rows, mean_y, std_y); }
    Eigen::MatrixXd invert_x(const Eigen::MatrixXd& rows) const { return invert(rows, mean_x, std_x); }
    Eigen::MatrixXd invert_y(const Eigen::MatrixXd& rows) const { return invert(rows, mean_y, std_y); }

    std::size_t n_x() const { return static_cast<std::size_t>(mean_x.size()); }
    std::size_t n_y() const { return static_cast<std::size_t>(mean_y.size()); }

private:
    static void check(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean) {
        if (rows.cols() != mean.size()) {
            throw ShapeMismatch("standardizer expects " + std::to_string(mean.size()) + " features, got " +
                                std::to_string(rows.cols()));
        }
    }
    static Eigen::MatrixXd apply(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
        check(rows, mean);
        return (rows.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
    }
    static Eigen::MatrixXd invert(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
        check(rows, mean);
        Eigen::MatrixXd out = rows.array().rowwise() * sd.transpose().array();
        return out.rowwise() + mean.transpose();
    }
};

inline Standardizer fit_standardizer(const Dataset& ds, double epsilon = 1e-8) {
    const auto train = ds.rows(Split::Train);
    require(!train.empty(), "train split is empty");
    Standardizer st;
    st.epsilon = epsilon;
    Standardizer::moments(ds.x_matrix(train), epsilon, st.mean_x, st.std_x);
    Standardizer::moments(ds.y_matrix(train), epsilon, st.mean_y, st.std_y);
    return st;
}

inline void write_standardizer(const Standardizer& st, const std::string& path) {
    io::Writer w(path);
    w.magic("BSTD");
    w.scalar<std::uint32_t>(1);
    w.scalar<std::uint64_t>(st.n_x());
    w.scalar<std::uint64_t>(st.n_y());
    w.scalar<double>(st.epsilon);
    for (const Eigen::VectorXd* v : {&st.mean_x, &st.std_x, &st.mean_y, &st.std_y}) {
        w.array<double>(std::span<const double>(v->data(), static_cast<std::size_t>(v->size())));
    }
    w.json(nlohmann::json::object());
    w.close();
}

inline Standardizer read_standardizer(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("BSTD");
    r.expect_version(1);
    const auto n = r.scalar<std::uint64_t>();
    const auto m = r.scalar<std::uint64_t>();
    Standardizer st;
    st.epsilon = r.scalar<double>();
    auto load = [&](Eigen::VectorXd& v, std::size_t len) {
        const auto raw = r.array<double>(len);
        v = Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(len));
    };
    load(st.mean_x, n);
    load(st.std_x, n);
    load(st.mean_y, m);
    load(st.std_y, m);
    r.json();
    return st;
}

}  // namespace bubbletomo
