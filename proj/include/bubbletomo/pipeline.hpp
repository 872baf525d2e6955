#pragma once

// End-to-end commands shared by the CLI and the integration tests: generate,
// train, fit-linear, reconstruct, evaluate, ablate and selftest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bubbletomo/binary_io.hpp"
#include "bubbletomo/config.hpp"
#include "bubbletomo/dataset.hpp"
#include "bubbletomo/dither.hpp"
#include "bubbletomo/inn.hpp"
#include "bubbletomo/linear.hpp"
#include "bubbletomo/physics.hpp"
#include "bubbletomo/train.hpp"

namespace bubbletomo::pipeline {

namespace fs = std::filesystem;

/// Continuous maps for a subset of dataset rows (BPRD container).
struct Predictions {
    std::string model;
    std::string split;
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<std::size_t> rows;
    std::vector<std::vector<double>> values;
};

inline void write_predictions(const Predictions& p, const std::string& path) {
    io::Writer w(path);
    w.magic("BPRD");
    w.scalar<std::uint32_t>(1);
    w.scalar<std::uint64_t>(p.rows.size());
    w.scalar<std::uint64_t>(p.nx * p.ny);
    w.scalar<std::uint64_t>(p.nx);
    w.scalar<std::uint64_t>(p.ny);
    for (std::size_t r : p.rows) w.scalar<std::uint64_t>(r);
    for (const auto& v : p.values) w.array<double>(v);
    w.json({{"model", p.model}, {"split", p.split}});
    w.close();
}

inline Predictions read_predictions(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("BPRD");
    r.expect_version(1);
    Predictions p;
    const auto rows = r.scalar<std::uint64_t>();
    const auto n = r.scalar<std::uint64_t>();
    p.nx = r.scalar<std::uint64_t>();
    p.ny = r.scalar<std::uint64_t>();
    if (p.nx * p.ny != n) throw ConfigError("'" + path + "': grid shape does not match row length");
    for (std::uint64_t i = 0; i < rows; ++i) p.rows.push_back(r.scalar<std::uint64_t>());
    for (std::uint64_t i = 0; i < rows; ++i) p.values.push_back(r.array<double>(n));
    const auto meta = r.json();
    p.model = meta.value("model", std::string("unknown"));
    p.split = meta.value("split", std::string("validation"));
    return p;
}

inline std::string file_magic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::string m(4, '\0');
    in.read(m.data(), 4);
    return m;
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val" || s == "validation") return Split::Validation;
    throw ConfigError("unknown split '" + s + "' (expected train or val)");
}

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "val"; }

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// generate

inline Dataset generate_dataset(const RunConfig& cfg, std::size_t n_scenes, std::uint64_t seed) {
    Dataset ds = generate(cfg.generation, n_scenes, seed);
    ds.meta["sensor_layout"] = cfg.sensor_layout;
    return ds;
}

// ---------------------------------------------------------------------------
// train

struct InnRun {
    inn::TrainResult result;
    Standardizer standardizer;
    inn::Model<double> model;  // trained parameters, widened to float64
};

template <typename T>
inn::TrainData<T> standardized_data(const Dataset& ds, const Standardizer& st) {
    const auto tr = ds.rows(Split::Train);
    const auto va = ds.rows(Split::Validation);
    inn::TrainData<T> d;
    d.x_train = st.apply_x(ds.x_matrix(tr)).transpose().cast<T>();
    d.y_train = st.apply_y(ds.y_matrix(tr)).transpose().cast<T>();
    d.x_val = st.apply_x(ds.x_matrix(va)).transpose().cast<T>();
    d.y_val = st.apply_y(ds.y_matrix(va)).transpose().cast<T>();
    return d;
}

template <typename T>
InnRun train_inn_as(const RunConfig& cfg, const Dataset& ds,
                    const std::function<void(const inn::EpochLoss&)>& on_epoch) {
    InnRun run;
    run.standardizer = fit_standardizer(ds);
    inn::ModelShape shape{ds.n_x, ds.n_y, cfg.k, cfg.hidden, cfg.s_clamp};
    shape.validate();
    auto model = inn::make_model<T>(shape, cfg.train.seed);
    run.result = inn::train(model, standardized_data<T>(ds, run.standardizer), cfg.train, on_epoch);
    run.model = model.template cast<double>();
    return run;
}

inline InnRun train_inn(const RunConfig& cfg, const Dataset& ds,
                        const std::function<void(const inn::EpochLoss&)>& on_epoch = {}) {
    return cfg.precision == Precision::Float32 ? train_inn_as<float>(cfg, ds, on_epoch)
                                               : train_inn_as<double>(cfg, ds, on_epoch);
}

inline nlohmann::json training_fingerprint(const RunConfig& cfg, const Dataset& ds, const inn::TrainResult& res) {
    return {{"config", cfg.to_json()},
            {"dataset", {{"seed", ds.meta.value("seed", std::uint64_t{0})}, {"rows", ds.n_rows}}},
            {"best_epoch", res.best_epoch},
            {"best_val_loss", res.best_val_loss},
            {"epochs_run", res.curve.size()},
            {"early_stopped", res.early_stopped},
            {"diverged", res.diverged},
            {"clamp_events", res.clamp_events}};
}

// ---------------------------------------------------------------------------
// fit-linear

struct LinearRun {
    Standardizer standardizer;
    LinearModel tikhonov;
    LinearModel elasticnet;
    double tikhonov_seconds = 0.0;
    double elasticnet_seconds = 0.0;
};

inline LinearRun fit_linear(const RunConfig& cfg, const Dataset& ds, bool with_elasticnet = true) {
    LinearRun run;
    run.standardizer = fit_standardizer(ds);
    const auto tr = ds.rows(Split::Train);
    const Eigen::MatrixXd x = run.standardizer.apply_x(ds.x_matrix(tr));
    const Eigen::MatrixXd y = run.standardizer.apply_y(ds.y_matrix(tr));
    auto t0 = std::chrono::steady_clock::now();
    run.tikhonov = fit_tikhonov(x, y, cfg.linear);
    auto t1 = std::chrono::steady_clock::now();
    run.tikhonov_seconds = std::chrono::duration<double>(t1 - t0).count();
    if (with_elasticnet) {
        run.elasticnet = fit_elasticnet(x, y, cfg.linear);
        run.elasticnet_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    }
    return run;
}

// ---------------------------------------------------------------------------
// reconstruct

inline void check_model_dims(std::size_t model_n, std::size_t model_m, const Dataset& ds) {
    if (model_n != ds.n_x || model_m != ds.n_y) {
        throw ShapeMismatch("model shape (N=" + std::to_string(model_n) + ", M=" + std::to_string(model_m) +
                            ") does not match dataset shape (N=" + std::to_string(ds.n_x) +
                            ", M=" + std::to_string(ds.n_y) + ")");
    }
}

inline Predictions make_predictions(const std::string& name, Split split, const Dataset& ds,
                                    const std::vector<std::size_t>& rows, const Eigen::MatrixXd& maps) {
    Predictions p;
    p.model = name;
    p.split = to_string(split);
    p.nx = ds.grid_nx();
    p.ny = ds.grid_ny();
    p.rows = rows;
    for (Eigen::Index r = 0; r < maps.rows(); ++r) {
        const Eigen::RowVectorXd row = maps.row(r);
        p.values.emplace_back(row.data(), row.data() + row.size());
    }
    return p;
}

inline Predictions reconstruct_inn(const RunConfig& cfg, const inn::Model<double>& model, const Standardizer& st,
                                   const Dataset& ds, Split split, const std::string& name = "inn") {
    check_model_dims(model.n(), model.m(), ds);
    const auto rows = ds.rows(split);
    const Eigen::MatrixXd y = st.apply_y(ds.y_matrix(rows)).transpose();
    const Eigen::MatrixXd x_std = inn::reconstruct<double>(model, y, cfg.n_z, cfg.train.seed).transpose();
    return make_predictions(name, split, ds, rows, st.invert_x(x_std));
}

inline Predictions reconstruct_linear(const RunConfig& cfg, const LinearModel& model, const Standardizer& st,
                                      const Dataset& ds, Split split) {
    check_model_dims(model.n_x(), model.n_y(), ds);
    const auto rows = ds.rows(split);
    const Eigen::MatrixXd maps = predict(model, st, st.apply_y(ds.y_matrix(rows)), cfg.clip_linear);
    return make_predictions(to_string(model.kind), split, ds, rows, maps);
}

/// Dispatches on the model file magic (BINN or BLIN).
inline Predictions reconstruct_file(const RunConfig& cfg, const std::string& model_path, const Dataset& ds,
                                    Split split, const std::string& standardizer_path = {}) {
    const std::string magic = file_magic(model_path);
    auto load_standardizer = [&] {
        Standardizer st = standardizer_path.empty() ? fit_standardizer(ds) : read_standardizer(standardizer_path);
        if (st.n_x() != ds.n_x || st.n_y() != ds.n_y) {
            throw ShapeMismatch("standardizer shape (N=" + std::to_string(st.n_x()) + ", M=" +
                                std::to_string(st.n_y()) + ") does not match dataset shape (N=" +
                                std::to_string(ds.n_x) + ", M=" + std::to_string(ds.n_y) + ")");
        }
        return st;
    };
    if (magic == "BINN") {
        const auto model = inn::read_checkpoint<double>(model_path);
        check_model_dims(model.n(), model.m(), ds);
        return reconstruct_inn(cfg, model, load_standardizer(), ds, split);
    }
    if (magic == "BLIN") {
        const auto model = read_linear(model_path);
        check_model_dims(model.n_x(), model.n_y(), ds);
        return reconstruct_linear(cfg, model, load_standardizer(), ds, split);
    }
    throw ConfigError("'" + model_path + "' is neither a BINN checkpoint nor a BLIN model");
}

// ---------------------------------------------------------------------------
// evaluate

inline ModelScores evaluate_predictions(const RunConfig& cfg, const Dataset& ds, const Predictions& p) {
    if (p.nx * p.ny != ds.n_x) {
        throw ShapeMismatch("predictions have " + std::to_string(p.nx * p.ny) + " values per row, dataset has " +
                            std::to_string(ds.n_x));
    }
    std::vector<std::vector<double>> truth;
    for (std::size_t r : p.rows) {
        if (r >= ds.n_rows) throw ShapeMismatch("prediction row " + std::to_string(r) + " is outside the dataset");
        const auto xr = ds.x_row(r);
        truth.emplace_back(xr.begin(), xr.end());
    }
    return evaluate_model(p.model, p.values, truth, p.rows, p.nx, p.ny, cfg.eval);
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    double d_sensor_mm = 0.0;
    std::size_t n_sensors = 0;
    std::size_t k = 0;
    double val_loss = 0.0;
    double mean_loglik = 0.0;
    std::uint64_t seed = 0;
    std::string status = "ok";
};

inline std::vector<AblationRow> ablate(const RunConfig& base, std::ostream* log = nullptr) {
    const auto& ab = base.ablation;
    require(!ab.d_sensor_mm.empty(), "ablation.d_sensor_mm is empty");
    require(!ab.n_sensors.empty(), "ablation.n_sensors is empty");
    require(!ab.k.empty(), "ablation.k is empty");
    for (std::size_t k : ab.k) require(k >= 1, "ablation.k entries must be positive");

    std::vector<AblationRow> out;
    for (double d : ab.d_sensor_mm) {
        for (std::size_t ns : ab.n_sensors) {
            RunConfig cfg = base;
            Dataset ds;
            std::string setup_error;
            try {
                cfg.generation.sensors.d_sensor = d * 1e-3;
                cfg.sensor_layout = layout_for_count(cfg.generation.sensors, ns);
                apply_sensor_layout(cfg.generation.sensors, cfg.sensor_layout);
                cfg.validate();
                // Same scene seeds for every cell: maps are shared, readings differ.
                ds = generate_dataset(cfg, cfg.n_scenes, cfg.dataset_seed);
            } catch (const std::exception& e) {
                setup_error = e.what();
            }
            for (std::size_t k : ab.k) {
                AblationRow row{d, ns, k, 0.0, 0.0, cfg.train.seed, "ok"};
                if (!setup_error.empty()) {
                    row.status = "error: " + setup_error;
                    out.push_back(row);
                    continue;
                }
                try {
                    cfg.k = k;
                    const InnRun run = train_inn(cfg, ds);
                    row.val_loss = run.result.best_val_loss;
                    const auto preds = reconstruct_inn(cfg, run.model, run.standardizer, ds, Split::Validation);
                    row.mean_loglik = evaluate_predictions(cfg, ds, preds).mean();
                    if (run.result.diverged) row.status = "diverged";
                } catch (const std::exception& e) {
                    row.status = std::string("error: ") + e.what();
                }
                if (log != nullptr) {
                    *log << "ablate d_sensor=" << d << "mm sensors=" << ns << " k=" << k << " val_loss=" << row.val_loss
                         << " mean_loglik=" << row.mean_loglik << " status=" << row.status << '\n';
                }
                out.push_back(row);
            }
        }
    }
    return out;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "d_sensor_mm,n_sensors,k,val_loss,mean_loglik,seed,status\n";
    for (const auto& r : rows) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        out << r.d_sensor_mm << ',' << r.n_sensors << ',' << r.k << ',' << r.val_loss << ',' << r.mean_loglik << ','
            << r.seed << ',' << status << '\n';
    }
}

// ---------------------------------------------------------------------------
// selftest

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Straight line of cells carrying current I along +x compared with the
/// analytic finite-segment field at the perpendicular bisector.
inline CheckResult selftest_wire(double distance_cells = 3.0) {
    ChannelSpec spec;
    spec.length_x = 0.1;
    spec.length_y = 0.003;
    spec.thickness = 0.001;
    spec.grid_nx = 100;
    spec.grid_ny = 3;
    const double current = 2.0;
    CurrentField f;
    f.nx = spec.grid_nx;
    f.ny = spec.grid_ny;
    f.jx.assign(f.nx * f.ny, 0.0);
    f.jy.assign(f.nx * f.ny, 0.0);
    for (std::size_t ix = 0; ix < f.nx; ++ix) f.jx[1 * f.nx + ix] = current / (spec.dy() * spec.thickness);
    const double d = distance_cells * spec.dx();
    const Vec3 b = biot_savart_field(f, spec, {0.05, 0.0015, -d});
    const double half = 0.05;
    const double sin_end = half / std::sqrt(half * half + d * d);
    const double analytic = kMu0 * current / (4.0 * std::numbers::pi * d) * (2.0 * sin_end);
    const double rel = std::abs(b.y - analytic) / analytic;
    std::ostringstream os;
    os << "B_y=" << b.y << " analytic=" << analytic << " rel_err=" << rel;
    return {"wire_field", rel < 0.01, os.str()};
}

inline CheckResult selftest_gradient(std::uint64_t seed = 11) {
    inn::ModelShape shape{8, 3, 2, 6, 2.0};
    auto model = inn::make_model<double>(shape, seed);
    inn::randomize(model, seed + 1);
    Rng rng(seed + 2);
    const auto x = inn::gaussian<double>(8, 5, rng);
    const auto yz = inn::gaussian<double>(8, 5, rng);
    const auto res = inn::gradient_check(model, x, yz);
    std::ostringstream os;
    os << "max_rel_err=" << res.max_relative_error << " over " << res.parameters << " parameters";
    return {"gradient_check", res.max_relative_error < 1e-4, os.str()};
}

/// Textbook Floyd-Steinberg on a 2-D array.
inline std::vector<std::vector<double>> textbook_floyd_steinberg(std::vector<std::vector<double>> img) {
    const std::size_t h = img.size();
    const std::size_t w = h ? img[0].size() : 0;
    std::vector<std::vector<double>> out(h, std::vector<double>(w, 0.0));
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double oldpixel = img[y][x];
            const double newpixel = oldpixel < 0.5 ? 0.0 : 1.0;
            out[y][x] = newpixel;
            const double quant_error = oldpixel - newpixel;
            if (x + 1 < w) img[y][x + 1] += quant_error * 7 / 16;
            if (y + 1 < h && x > 0) img[y + 1][x - 1] += quant_error * 3 / 16;
            if (y + 1 < h) img[y + 1][x] += quant_error * 5 / 16;
            if (y + 1 < h && x + 1 < w) img[y + 1][x + 1] += quant_error * 1 / 16;
        }
    }
    return out;
}

inline CheckResult selftest_dither(std::size_t trials = 50, std::uint64_t seed = 5) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t mismatches = 0;
    const std::size_t nx = 32, ny = 32;
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<double> flat(nx * ny);
        std::vector<std::vector<double>> img(ny, std::vector<double>(nx));
        for (std::size_t iy = 0; iy < ny; ++iy) {
            for (std::size_t ix = 0; ix < nx; ++ix) img[iy][ix] = flat[iy * nx + ix] = u(rng);
        }
        const auto ours = dither_once(flat, nx, ny, [] { return kFloydSteinberg; });
        const auto ref = textbook_floyd_steinberg(img);
        for (std::size_t iy = 0; iy < ny; ++iy) {
            for (std::size_t ix = 0; ix < nx; ++ix) mismatches += ours[iy * nx + ix] != ref[iy][ix];
        }
    }
    DirichletSampler sampler({1.0, 1.0, 1.0, 1.0});
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const auto f = sampler(rng);
        worst = std::max(worst, std::abs(f[0] + f[1] + f[2] + f[3] - 1.0));
    }
    std::ostringstream os;
    os << "pixel mismatches=" << mismatches << " max |sum(fractions)-1|=" << worst;
    return {"dither_degenerate_limit", mismatches == 0 && worst < 1e-12, os.str()};
}

inline std::vector<CheckResult> selftest() { return {selftest_wire(), selftest_gradient(), selftest_dither()}; }

}  // namespace bubbletomo::pipeline
