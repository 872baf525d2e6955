// Acceptance run: one PASS/FAIL line per criterion. Criteria listed in
// --known-fail still print FAIL but do not fail the exit status.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>

#include "bubbletomo/pipeline.hpp"

using namespace bubbletomo;
namespace pl = bubbletomo::pipeline;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kWireRelTol = 0.01;
constexpr double kCurrentRelTol = 1e-8;
constexpr double kPhysicsSeconds = 10.0;
constexpr double kInverseAbsTol = 1e-10;
constexpr double kMixerSolveTol = 1e-10;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kFractionSumTol = 1e-12;
constexpr double kBenchmarkSeconds = 2.0 * 3600.0;

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1. physics oracle

Outcome criterion_physics() {
    const auto t0 = std::chrono::steady_clock::now();
    ChannelSpec line;
    line.length_x = 0.12;
    line.length_y = 0.003;
    line.thickness = 0.001;
    line.grid_nx = 120;
    line.grid_ny = 3;
    const double current = 1.5;
    CurrentField f;
    f.nx = line.grid_nx;
    f.ny = line.grid_ny;
    f.jx.assign(f.nx * f.ny, 0.0);
    f.jy.assign(f.nx * f.ny, 0.0);
    for (std::size_t ix = 0; ix < f.nx; ++ix) f.jx[f.nx + ix] = current / (line.dy() * line.thickness);
    double worst_wire = 0.0;
    for (double cells : {3.0, 4.0, 6.0, 10.0, 20.0}) {
        const double d = cells * line.dx();
        for (double along : {0.03, 0.06, 0.09}) {
            const Vec3 b = biot_savart_field(f, line, {along, 0.0015, -d});
            // finite straight segment from x = 0 to x = L
            const double s1 = -along / std::hypot(along, d);
            const double s2 = (line.length_x - along) / std::hypot(line.length_x - along, d);
            const double exact = 4e-7 * std::numbers::pi * current / (4.0 * std::numbers::pi * d) * (s2 - s1);
            worst_wire = std::max(worst_wire, std::abs(b.y - exact) / exact);
        }
    }
    ChannelSpec spec;
    const auto uniform = solve_current(ConductivityMap(spec.grid_nx, spec.grid_ny, 1.0), spec, 1.0);
    const double jx = 1.0 / (spec.length_y * spec.thickness);
    double worst_j = 0.0, worst_i = 0.0;
    for (std::size_t c = 0; c < uniform.jx.size(); ++c) {
        worst_j = std::max({worst_j, std::abs(uniform.jx[c] - jx) / jx, std::abs(uniform.jy[c]) / jx});
    }
    for (std::size_t i = 0; i <= spec.grid_nx; ++i) {
        worst_i = std::max(worst_i, std::abs(uniform.cross_section_current(spec, i) - 1.0));
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "wire max rel err " << worst_wire << " (tol " << kWireRelTol << "), uniform jx rel dev " << worst_j
       << ", cross-section current rel err " << worst_i << " (tol " << kCurrentRelTol << "), " << secs << " s";
    return {worst_wire < kWireRelTol && worst_j < kCurrentRelTol && worst_i < kCurrentRelTol && secs < kPhysicsSeconds,
            os.str()};
}

// ---- 2. invertibility

Outcome criterion_invertibility() {
    double worst = 0.0, worst_mixer = 0.0;
    for (std::size_t k = 1; k <= 6; ++k) {
        auto model = inn::make_model<double>({510, 100, k, 32, 2.0}, 1000 + k);
        inn::randomize(model, 2000 + k);
        Rng rng(3000 + k);
        const auto yz = inn::gaussian<double>(510, 1000, rng);
        worst = std::max(worst, (model.forward_map(model.inverse_map(yz)) - yz).cwiseAbs().maxCoeff());
        for (const auto& mx : model.mixers) {
            const auto out = inn::gaussian<double>(510, 20, rng);
            const inn::Mat<double> dense = mx.matrix().partialPivLu().solve(out);
            worst_mixer = std::max(worst_mixer, (mx.inverse(out) - dense).cwiseAbs().maxCoeff());
        }
    }
    std::ostringstream os;
    os << "forward(inverse) max abs err " << worst << " over k=1..6 x 1000 vectors (tol " << kInverseAbsTol
       << "), mixer vs dense solve " << worst_mixer << " (tol " << kMixerSolveTol << ")";
    return {worst < kInverseAbsTol && worst_mixer < kMixerSolveTol, os.str()};
}

// ---- 3. gradients

Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t params = 0;
    const inn::ModelShape shapes[] = {{16, 6, 3, 8, 2.0}, {12, 4, 2, 6, 2.0}, {8, 3, 1, 5, 2.0}, {16, 10, 4, 4, 2.0}};
    std::uint64_t seed = 40;
    for (const auto& shape : shapes) {
        auto model = inn::make_model<double>(shape, ++seed);
        inn::randomize(model, ++seed);
        Rng rng(++seed);
        const auto x = inn::gaussian<double>(shape.n, 8, rng);
        const auto yz = inn::gaussian<double>(shape.n, 8, rng);
        const auto res = inn::gradient_check(model, x, yz);
        worst = std::max(worst, res.max_relative_error);
        params += res.parameters;
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "max rel err " << worst << " over " << params << " parameters (tol " << kGradRelTol << "), " << secs << " s";
    return {worst < kGradRelTol && secs < kGradSeconds, os.str()};
}

// ---- 4. dither degenerate limit

std::vector<std::vector<double>> textbook(std::vector<std::vector<double>> img) {
    const std::size_t h = img.size(), w = img[0].size();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double old = img[y][x];
            const double q = old < 0.5 ? 0.0 : 1.0;
            img[y][x] = q;
            const double e = old - q;
            if (x + 1 < w) img[y][x + 1] += e * 7.0 / 16.0;
            if (y + 1 < h && x > 0) img[y + 1][x - 1] += e * 3.0 / 16.0;
            if (y + 1 < h) img[y + 1][x] += e * 5.0 / 16.0;
            if (y + 1 < h && x + 1 < w) img[y + 1][x + 1] += e * 1.0 / 16.0;
        }
    }
    return img;
}

Outcome criterion_dither() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t mismatches = 0;
    for (int t = 0; t < 50; ++t) {
        std::vector<std::vector<double>> img(32, std::vector<double>(32));
        std::vector<double> flat;
        for (auto& row : img) {
            for (double& v : row) flat.push_back(v = u(rng));
        }
        const auto ours = dither_once(flat, 32, 32, [] { return kFloydSteinberg; });
        const auto ref = textbook(img);
        for (std::size_t y = 0; y < 32; ++y) {
            for (std::size_t x = 0; x < 32; ++x) mismatches += ours[y * 32 + x] != ref[y][x];
        }
    }
    DirichletSampler sampler({1.0, 1.0, 1.0, 1.0});
    Rng r(7);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const auto f = sampler(r);
        worst = std::max(worst, std::abs(f[0] + f[1] + f[2] + f[3] - 1.0));
    }
    std::ostringstream os;
    os << mismatches << " pixel mismatches over 50 random 32x32 inputs, max |sum(fractions) - 1| " << worst
       << " (tol " << kFractionSumTol << ")";
    return {mismatches == 0 && worst < kFractionSumTol, os.str()};
}

// ---- 5, 6, 7. desk-scale benchmark

struct Benchmark {
    double inn = 0.0, elasticnet = 0.0, tikhonov = 0.0;
    double inn_seconds = 0.0, elasticnet_seconds = 0.0, tikhonov_seconds = 0.0;
    double total_seconds = 0.0;
    std::size_t best_epoch = 0;
    double inn_val_loss = 0.0;
};

Benchmark run_benchmark(const RunConfig& cfg, const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    Benchmark b;
    const Dataset ds = pl::generate_dataset(cfg, cfg.n_scenes, cfg.dataset_seed);
    write_dataset(ds, (work / "dataset.btom").string());
    const auto inn_run = pl::train_inn(cfg, ds);
    inn::write_loss_curve(inn_run.result.curve, (work / "inn_loss.csv").string());
    b.inn_seconds = inn_run.result.seconds;
    b.best_epoch = inn_run.result.best_epoch;
    b.inn_val_loss = inn_run.result.best_val_loss;
    const auto lin = pl::fit_linear(cfg, ds);
    b.tikhonov_seconds = lin.tikhonov_seconds;
    b.elasticnet_seconds = lin.elasticnet_seconds;
    std::vector<ModelScores> scores;
    scores.push_back(pl::evaluate_predictions(
        cfg, ds, pl::reconstruct_inn(cfg, inn_run.model, inn_run.standardizer, ds, Split::Validation)));
    scores.push_back(pl::evaluate_predictions(
        cfg, ds, pl::reconstruct_linear(cfg, lin.tikhonov, lin.standardizer, ds, Split::Validation)));
    scores.push_back(pl::evaluate_predictions(
        cfg, ds, pl::reconstruct_linear(cfg, lin.elasticnet, lin.standardizer, ds, Split::Validation)));
    write_scores_csv(scores, (work / "scores.csv").string());
    write_summary_csv(scores, (work / "summary.csv").string());
    b.inn = scores[0].mean();
    b.tikhonov = scores[1].mean();
    b.elasticnet = scores[2].mean();
    b.total_seconds = seconds_since(t0);
    return b;
}

Outcome criterion_benchmark(const Benchmark& b) {
    std::ostringstream os;
    os << "mean loglik INN " << b.inn << ", ElasticNet " << b.elasticnet << ", Tikhonov " << b.tikhonov
       << " (EN - Tik gap " << b.elasticnet - b.tikhonov << "); INN best epoch " << b.best_epoch << " val L_x "
       << b.inn_val_loss << "; " << b.total_seconds << " s";
    return {b.inn > b.elasticnet && b.elasticnet >= b.tikhonov && b.total_seconds < kBenchmarkSeconds, os.str()};
}

Outcome criterion_ablation(const RunConfig& base, const fs::path& work) {
    RunConfig cfg = base;
    cfg.ablation.d_sensor_mm = {5.0, 25.0};
    cfg.ablation.n_sensors = {100, 50};
    cfg.ablation.k = {1, 3};
    const auto rows = pl::ablate(cfg, &std::cerr);
    pl::write_ablation_csv(rows, (work / "ablation.csv").string());
    auto loss = [&](double d, std::size_t n, std::size_t k) {
        for (const auto& r : rows) {
            if (r.d_sensor_mm == d && r.n_sensors == n && r.k == k && r.status == "ok") return r.val_loss;
        }
        return std::nan("");
    };
    const double far = loss(25, 100, 3), near = loss(5, 100, 3), far_half = loss(25, 50, 3), shallow = loss(5, 100, 1);
    std::ostringstream os;
    os << "val L_x (25mm,100)=" << far << " (5mm,100)=" << near << " (25mm,50)=" << far_half << "; k=1 " << shallow
       << " vs k=3 " << near;
    return {far > near && far_half >= far && shallow > near, os.str()};
}

Outcome criterion_speed(const Benchmark& b) {
    std::ostringstream os;
    os << "INN training to early stop " << b.inn_seconds << " s, ElasticNet CV grid " << b.elasticnet_seconds
       << " s (Tikhonov CV " << b.tikhonov_seconds << " s)";
    return {b.inn_seconds < b.elasticnet_seconds, os.str()};
}

// ---- 8. determinism through the CLI

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism(const std::string& cli, const std::string& config, const fs::path& work) {
    std::vector<fs::path> dirs{work / "det_a", work / "det_b"};
    for (const auto& d : dirs) {
        fs::remove_all(d);
        fs::create_directories(d);
        const std::string common = " --config " + config + " --seed 5 --deterministic --out " + d.string();
        const std::string quiet = " > " + (d / "log.txt").string() + " 2>&1";
        const std::vector<std::string> steps{"generate", "train", "reconstruct --model " + (d / "inn.binn").string(),
                                             "evaluate --pred " + (d / "pred_inn_val.bprd").string()};
        for (const auto& step : steps) {
            const int code = shell(cli + " " + step + common + quiet);
            if (code != 0) return {false, "'" + step + "' exited with " + std::to_string(code)};
        }
    }
    std::vector<std::string> differing;
    for (const char* f : {"dataset.btom", "inn.binn", "standardizer.bstd", "inn_loss.csv", "pred_inn_val.bprd",
                          "scores.csv", "summary.csv"}) {
        const auto a = slurp(dirs[0] / f), b = slurp(dirs[1] / f);
        if (a.empty() || a != b) differing.push_back(f);
    }
    std::ostringstream os;
    os << "generate+train+reconstruct+evaluate twice: ";
    if (differing.empty()) {
        os << "all artifacts byte-identical";
    } else {
        for (const auto& f : differing) os << f << " differs; ";
    }
    return {differing.empty(), os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string cli = BUBBLETOMO_CLI;
    std::string configs = BUBBLETOMO_CONFIGS;
    std::string work = (fs::temp_directory_path() / "bubbletomo_acceptance").string();
    std::vector<int> only, known_fail;
    app.add_option("--cli", cli, "bubbletomo binary");
    app.add_option("--configs", configs, "configuration directory");
    app.add_option("--work", work, "scratch directory for benchmark artifacts");
    app.add_option("--only", only, "run only these criteria");
    app.add_option("--known-fail", known_fail, "criteria whose FAIL does not fail the run");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::set<int> selected(only.begin(), only.end());
    const std::set<int> tolerated(known_fail.begin(), known_fail.end());
    auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

    int hard_failures = 0;
    std::ofstream log(fs::path(work) / "acceptance_report.txt");
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        if (!wanted(id)) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::ostringstream line;
        line << (o.passed ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail;
        if (!o.passed && tolerated.count(id) > 0) line << " [known failure]";
        std::cout << line.str() << std::endl;
        log << line.str() << std::endl;
        if (!o.passed && tolerated.count(id) == 0) ++hard_failures;
    };

    report(1, "physics oracle", criterion_physics);
    report(2, "invertibility", criterion_invertibility);
    report(3, "gradients", criterion_gradients);
    report(4, "dither degenerate limit", criterion_dither);

    const std::string reference = configs + "/reference.ini";
    Benchmark bench;
    std::string bench_error;
    if (wanted(5) || wanted(7)) {
        try {
            bench = run_benchmark(load_config(reference), work);
        } catch (const std::exception& e) {
            bench_error = e.what();
        }
    }
    auto with_bench = [&](const std::function<Outcome(const Benchmark&)>& fn) {
        return [&, fn] {
            if (!bench_error.empty()) return Outcome{false, "benchmark failed: " + bench_error};
            return fn(bench);
        };
    };
    report(5, "desk-scale benchmark", with_bench(criterion_benchmark));
    report(6, "ablation directionality", [&] { return criterion_ablation(load_config(reference), work); });
    report(7, "speed sanity", with_bench(criterion_speed));
    report(8, "determinism", [&] { return criterion_determinism(cli, configs + "/tiny.ini", work); });
    return hard_failures == 0 ? 0 : 1;
}
