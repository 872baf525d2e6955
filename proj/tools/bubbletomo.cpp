// bubbletomo: generate datasets, train the INN and linear baselines,
// reconstruct, score with random dithering, and run ablations.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "bubbletomo/pipeline.hpp"

namespace bt = bubbletomo;
namespace pl = bubbletomo::pipeline;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kShape = 3, kNumerical = 4 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    bool deterministic = false;
};

bt::RunConfig load(const Globals& g) {
    bt::RunConfig cfg = g.config.empty() ? bt::RunConfig{} : bt::load_config(g.config);
    if (g.seed) {
        cfg.dataset_seed = *g.seed;
        cfg.train.seed = *g.seed;
        cfg.linear.seed = *g.seed;
        cfg.eval.seed = *g.seed;
    }
    return cfg;
}

std::string in_out(const Globals& g, const std::string& name) { return (fs::path(g.out) / name).string(); }

std::string or_default(const std::string& v, const std::string& fallback) { return v.empty() ? fallback : v; }

bt::Dataset load_dataset(const std::string& path) {
    if (!fs::exists(path)) throw bt::ConfigError("dataset not found: " + path);
    return bt::read_dataset(path);
}

int cmd_generate(const Globals& g, std::optional<long long> n, const std::string& data) {
    bt::RunConfig cfg = load(g);
    if (n) {
        bt::require(*n >= 1, "--n must be at least 1 (got " + std::to_string(*n) + ")");
        cfg.n_scenes = static_cast<std::size_t>(*n);
    }
    cfg.validate();
    pl::ensure_dir(g.out);
    const std::string path = or_default(data, in_out(g, cfg.dataset_path));
    const bt::Dataset ds = pl::generate_dataset(cfg, cfg.n_scenes, cfg.dataset_seed);
    bt::write_dataset(ds, path);
    std::cout << "scenes: " << ds.n_rows << " (N=" << ds.n_x << ", M=" << ds.n_y << ")\n"
              << "resamples: " << ds.meta.value("resamples", std::size_t{0}) << '\n'
              << "wrote " << path << '\n';
    return kOk;
}

int cmd_train(const Globals& g, const std::string& data) {
    bt::RunConfig cfg = load(g);
    cfg.validate();
    pl::ensure_dir(g.out);
    const bt::Dataset ds = load_dataset(or_default(data, in_out(g, cfg.dataset_path)));
    const auto run = pl::train_inn(cfg, ds, [](const bt::inn::EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << '\n';
    });
    bt::write_standardizer(run.standardizer, in_out(g, "standardizer.bstd"));
    bt::inn::write_checkpoint(run.model, pl::training_fingerprint(cfg, ds, run.result), in_out(g, "inn.binn"));
    bt::inn::write_loss_curve(run.result.curve, in_out(g, "inn_loss.csv"));
    std::cout << "best epoch " << run.result.best_epoch << " val_loss " << run.result.best_val_loss
              << (run.result.early_stopped ? " (early stop)" : "") << '\n'
              << "train seconds " << run.result.seconds << '\n'
              << "wrote " << in_out(g, "inn.binn") << '\n';
    if (run.result.diverged) {
        std::cerr << "error: training diverged; best parameters before divergence were saved\n";
        return kNumerical;
    }
    return kOk;
}

int cmd_fit_linear(const Globals& g, const std::string& data) {
    bt::RunConfig cfg = load(g);
    cfg.validate();
    pl::ensure_dir(g.out);
    const bt::Dataset ds = load_dataset(or_default(data, in_out(g, cfg.dataset_path)));
    const auto run = pl::fit_linear(cfg, ds);
    bt::write_standardizer(run.standardizer, in_out(g, "standardizer.bstd"));
    bt::write_linear(run.tikhonov, in_out(g, "tikhonov.blin"));
    bt::write_linear(run.elasticnet, in_out(g, "elasticnet.blin"));
    for (const auto* m : {&run.tikhonov, &run.elasticnet}) {
        std::ofstream(in_out(g, bt::to_string(m->kind) + "_cv.json")) << m->cv_report.dump(2) << '\n';
    }
    std::cout << "tikhonov lambda " << run.tikhonov.lambda << " cv seconds " << run.tikhonov_seconds << '\n'
              << "elasticnet lambda " << run.elasticnet.lambda << " l1_ratio " << run.elasticnet.l1_ratio
              << " cv seconds " << run.elasticnet_seconds << '\n';
    return kOk;
}

int cmd_reconstruct(const Globals& g, const std::string& data, const std::string& model, const std::string& split,
                    const std::string& standardizer, const std::string& pred) {
    bt::RunConfig cfg = load(g);
    cfg.validate();
    bt::require(!model.empty(), "--model is required");
    pl::ensure_dir(g.out);
    const bt::Dataset ds = load_dataset(or_default(data, in_out(g, cfg.dataset_path)));
    std::string st_path = standardizer;
    if (st_path.empty() && fs::exists(in_out(g, "standardizer.bstd"))) st_path = in_out(g, "standardizer.bstd");
    const auto s = pl::parse_split(split);
    const auto p = pl::reconstruct_file(cfg, model, ds, s, st_path);
    const std::string path = or_default(pred, in_out(g, "pred_" + p.model + "_" + pl::to_string(s) + ".bprd"));
    pl::write_predictions(p, path);
    std::cout << "reconstructed " << p.rows.size() << " rows with " << p.model << "\nwrote " << path << '\n';
    return kOk;
}

int cmd_evaluate(const Globals& g, const std::string& data, const std::vector<std::string>& preds) {
    bt::RunConfig cfg = load(g);
    cfg.validate();
    bt::require(!preds.empty(), "--pred needs at least one predictions file");
    pl::ensure_dir(g.out);
    const bt::Dataset ds = load_dataset(or_default(data, in_out(g, cfg.dataset_path)));
    std::vector<bt::ModelScores> all;
    for (const auto& path : preds) {
        if (!fs::exists(path)) throw bt::ConfigError("predictions not found: " + path);
        all.push_back(pl::evaluate_predictions(cfg, ds, pl::read_predictions(path)));
        std::cout << all.back().model << " mean_loglik " << all.back().mean() << " std " << all.back().stddev()
                  << " n " << all.back().loglik.size() << '\n';
    }
    bt::write_scores_csv(all, in_out(g, "scores.csv"));
    bt::write_summary_csv(all, in_out(g, "summary.csv"));
    return kOk;
}

int cmd_ablate(const Globals& g) {
    bt::RunConfig cfg = load(g);
    cfg.validate();
    pl::ensure_dir(g.out);
    const auto rows = pl::ablate(cfg, &std::cerr);
    pl::write_ablation_csv(rows, in_out(g, "ablation.csv"));
    std::cout << "wrote " << in_out(g, "ablation.csv") << " (" << rows.size() << " rows)\n";
    return kOk;
}

int cmd_selftest() {
    bool ok = true;
    for (const auto& c : pl::selftest()) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.passed;
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bubbletomo: magnetic flow tomography with invertible networks"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "INI run configuration");
    app.add_option("--seed", g.seed, "override every seed in the configuration");
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_flag("--deterministic", g.deterministic, "single-threaded, reproducible run");
    app.fallthrough();

    std::optional<long long> n;
    std::string data, model, split = "val", standardizer, pred;
    std::vector<std::string> preds;

    auto* gen = app.add_subcommand("generate", "sample scenes and write a BTOM dataset");
    gen->add_option("--n", n, "number of scenes (overrides dataset.n_scenes)");
    gen->add_option("--data", data, "output dataset path");

    auto* train = app.add_subcommand("train", "train the INN and write a BINN checkpoint");
    train->add_option("--data", data, "dataset path");

    auto* lin = app.add_subcommand("fit-linear", "fit Tikhonov and ElasticNet baselines with CV");
    lin->add_option("--data", data, "dataset path");

    auto* rec = app.add_subcommand("reconstruct", "write continuous predictions for one model and split");
    rec->add_option("--data", data, "dataset path");
    rec->add_option("--model", model, "BINN or BLIN model file");
    rec->add_option("--split", split, "train or val")->capture_default_str();
    rec->add_option("--standardizer", standardizer, "BSTD file (default: <out>/standardizer.bstd)");
    rec->add_option("--pred", pred, "output predictions path");

    auto* eval = app.add_subcommand("evaluate", "dither log-likelihood scores for prediction files");
    eval->add_option("--data", data, "dataset path");
    eval->add_option("--pred", preds, "BPRD prediction files")->expected(1, -1);

    auto* abl = app.add_subcommand("ablate", "sensor distance / count / depth ablation grid");
    auto* self = app.add_subcommand("selftest", "wire field, gradient check and dither oracles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    if (g.deterministic) Eigen::setNbThreads(1);

    try {
        if (*gen) return cmd_generate(g, n, data);
        if (*train) return cmd_train(g, data);
        if (*lin) return cmd_fit_linear(g, data);
        if (*rec) return cmd_reconstruct(g, data, model, split, standardizer, pred);
        if (*eval) return cmd_evaluate(g, data, preds);
        if (*abl) return cmd_ablate(g);
        if (*self) return cmd_selftest();
    } catch (const bt::ShapeMismatch& e) {
        std::cerr << "error: shape mismatch: " << e.what() << '\n';
        return kShape;
    } catch (const bt::NumericalFailure& e) {
        std::cerr << "error: numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const bt::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kOk;
}
