#pragma once

// Toolkit-wide run configuration, read from an INI file:
//
//   [scene]    grid_nx grid_ny min_disks max_disks diameter_min_mm
//              diameter_max_mm binarize_threshold subsample
//              (optional: length_x_mm length_y_mm thickness_mm sigma_ref max_attempts)
//   [physics]  d_sensor_mm sensor_rows sensor_cols component applied_current_a
//              sigma_floor solver_tol solver_max_iter
//              (optional: sensor_layout = full | checkerboard, sensor_indices)
//   [dataset]  n_scenes train_fraction seed path forward_on_binary max_resamples
//   [inn]      batch_size learning_rate adam_beta1 adam_beta2 adam_eps max_epochs
//              patience hidden s_clamp k seed n_z precision
//   [linear]   lambda_min lambda_max lambda_count lambda_grid l1_ratios folds
//              seed tol max_iter clip
//   [eval]     ensemble_size dirichlet_alpha seed epsilon granularity
//   [ablation] d_sensor_mm n_sensors k
//
// Lists are comma separated. Unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bubbletomo/dataset.hpp"
#include "bubbletomo/dither.hpp"
#include "bubbletomo/errors.hpp"
#include "bubbletomo/inn.hpp"
#include "bubbletomo/linear.hpp"
#include "bubbletomo/train.hpp"

namespace bubbletomo {

enum class Precision { Float32, Float64 };

struct AblationConfig {
    std::vector<double> d_sensor_mm{5.0, 25.0};
    std::vector<std::size_t> n_sensors{100, 50};
    std::vector<std::size_t> k{1, 3};
};

struct RunConfig {
    GenerationConfig generation;
    std::string sensor_layout = "full";

    std::size_t n_scenes = 1000;
    std::uint64_t dataset_seed = 0;
    std::string dataset_path = "dataset.btom";

    inn::TrainConfig train;
    std::size_t k = 3;
    std::size_t hidden = 256;
    double s_clamp = 2.0;
    std::size_t n_z = 1;
    Precision precision = Precision::Float32;

    LinearOptions linear;
    bool clip_linear = false;

    DitherConfig eval;
    AblationConfig ablation;

    inn::ModelShape model_shape() const {
        return {generation.channel.cells(), generation.sensors.size(), k, hidden, s_clamp};
    }

    void validate() const {
        generation.validate();
        train.validate();
        eval.validate();
        require(n_scenes >= 1, "dataset.n_scenes must be at least 1");
        require(n_z >= 1, "inn.n_z must be at least 1");
        model_shape().validate();
    }

    nlohmann::json to_json() const {
        return {{"generation", generation.to_json()},
                {"n_scenes", n_scenes},
                {"dataset_seed", dataset_seed},
                {"train", train.to_json()},
                {"k", k},
                {"hidden", hidden},
                {"s_clamp", s_clamp},
                {"n_z", n_z},
                {"precision", precision == Precision::Float32 ? "float32" : "float64"}};
    }
};

namespace config_detail {

template <typename T>
T parse_value(const std::string& key, const std::string& raw) {
    std::istringstream in(raw);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("invalid value '" + raw + "' for " + key);
    return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
    std::vector<T> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(parse_value<T>(key, item.substr(b, e - b + 1)));
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("invalid boolean '" + raw + "' for " + key);
}

}  // namespace config_detail

/// Applies the layout to the configured lattice: "full" keeps all sensors,
/// "checkerboard" keeps (r + c) even.
inline void apply_sensor_layout(SensorArray& sensors, const std::string& layout) {
    if (layout == "full") {
        sensors.selection.clear();
    } else if (layout == "checkerboard") {
        sensors.selection = checkerboard_selection(sensors.rows, sensors.cols);
    } else {
        throw ConfigError("unknown sensor_layout '" + layout + "' (expected full or checkerboard)");
    }
}

/// Sensor subset for a requested count: the full lattice or its checkerboard half.
inline std::string layout_for_count(const SensorArray& sensors, std::size_t n) {
    const std::size_t full = sensors.rows * sensors.cols;
    if (n == full) return "full";
    if (n == checkerboard_selection(sensors.rows, sensors.cols).size()) return "checkerboard";
    throw ConfigError("no sensor layout with " + std::to_string(n) + " of " + std::to_string(full) + " sensors");
}

inline RunConfig parse_config(const boost::property_tree::ptree& tree) {
    using namespace config_detail;
    RunConfig cfg;
    auto& g = cfg.generation;
    std::string sensor_indices;

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, std::map<std::string, Setter>> keys{
        {"scene",
         {{"grid_nx", [&](auto& k, auto& v) { g.channel.grid_nx = parse_value<std::size_t>(k, v); }},
          {"grid_ny", [&](auto& k, auto& v) { g.channel.grid_ny = parse_value<std::size_t>(k, v); }},
          {"min_disks", [&](auto& k, auto& v) { g.disks.min_disks = parse_value<std::size_t>(k, v); }},
          {"max_disks", [&](auto& k, auto& v) { g.disks.max_disks = parse_value<std::size_t>(k, v); }},
          {"diameter_min_mm", [&](auto& k, auto& v) { g.disks.r_min = parse_value<double>(k, v) * 0.5e-3; }},
          {"diameter_max_mm", [&](auto& k, auto& v) { g.disks.r_max = parse_value<double>(k, v) * 0.5e-3; }},
          {"binarize_threshold", [&](auto& k, auto& v) { g.binarize_threshold = parse_value<double>(k, v); }},
          {"subsample", [&](auto& k, auto& v) { g.subsample = parse_value<std::size_t>(k, v); }},
          {"length_x_mm", [&](auto& k, auto& v) { g.channel.length_x = parse_value<double>(k, v) * 1e-3; }},
          {"length_y_mm", [&](auto& k, auto& v) { g.channel.length_y = parse_value<double>(k, v) * 1e-3; }},
          {"thickness_mm", [&](auto& k, auto& v) { g.channel.thickness = parse_value<double>(k, v) * 1e-3; }},
          {"sigma_ref", [&](auto& k, auto& v) { g.channel.sigma_ref = parse_value<double>(k, v); }},
          {"max_attempts", [&](auto& k, auto& v) { g.disks.max_attempts = parse_value<std::size_t>(k, v); }}}},
        {"physics",
         {{"d_sensor_mm", [&](auto& k, auto& v) { g.sensors.d_sensor = parse_value<double>(k, v) * 1e-3; }},
          {"sensor_rows", [&](auto& k, auto& v) { g.sensors.rows = parse_value<std::size_t>(k, v); }},
          {"sensor_cols", [&](auto& k, auto& v) { g.sensors.cols = parse_value<std::size_t>(k, v); }},
          {"component", [&](auto&, auto& v) { g.sensors.component = parse_component(v); }},
          {"applied_current_a", [&](auto& k, auto& v) { g.applied_current = parse_value<double>(k, v); }},
          {"sigma_floor", [&](auto& k, auto& v) { g.solver.sigma_floor = parse_value<double>(k, v); }},
          {"solver_tol", [&](auto& k, auto& v) { g.solver.tol = parse_value<double>(k, v); }},
          {"solver_max_iter", [&](auto& k, auto& v) { g.solver.max_iter = parse_value<std::size_t>(k, v); }},
          {"sensor_layout", [&](auto&, auto& v) { cfg.sensor_layout = v; }},
          {"sensor_indices", [&](auto&, auto& v) { sensor_indices = v; }}}},
        {"dataset",
         {{"n_scenes", [&](auto& k, auto& v) { cfg.n_scenes = parse_value<std::size_t>(k, v); }},
          {"train_fraction", [&](auto& k, auto& v) { g.train_fraction = parse_value<double>(k, v); }},
          {"seed", [&](auto& k, auto& v) { cfg.dataset_seed = parse_value<std::uint64_t>(k, v); }},
          {"path", [&](auto&, auto& v) { cfg.dataset_path = v; }},
          {"forward_on_binary", [&](auto& k, auto& v) { g.forward_on_binary = parse_bool(k, v); }},
          {"max_resamples", [&](auto& k, auto& v) { g.max_resamples = parse_value<std::size_t>(k, v); }}}},
        {"inn",
         {{"batch_size", [&](auto& k, auto& v) { cfg.train.batch_size = parse_value<std::size_t>(k, v); }},
          {"learning_rate", [&](auto& k, auto& v) { cfg.train.learning_rate = parse_value<double>(k, v); }},
          {"adam_beta1", [&](auto& k, auto& v) { cfg.train.adam_beta1 = parse_value<double>(k, v); }},
          {"adam_beta2", [&](auto& k, auto& v) { cfg.train.adam_beta2 = parse_value<double>(k, v); }},
          {"adam_eps", [&](auto& k, auto& v) { cfg.train.adam_eps = parse_value<double>(k, v); }},
          {"max_epochs", [&](auto& k, auto& v) { cfg.train.max_epochs = parse_value<std::size_t>(k, v); }},
          {"patience", [&](auto& k, auto& v) { cfg.train.patience = parse_value<std::size_t>(k, v); }},
          {"hidden", [&](auto& k, auto& v) { cfg.hidden = parse_value<std::size_t>(k, v); }},
          {"s_clamp", [&](auto& k, auto& v) { cfg.s_clamp = parse_value<double>(k, v); }},
          {"k", [&](auto& k, auto& v) { cfg.k = parse_value<std::size_t>(k, v); }},
          {"seed", [&](auto& k, auto& v) { cfg.train.seed = parse_value<std::uint64_t>(k, v); }},
          {"n_z", [&](auto& k, auto& v) { cfg.n_z = parse_value<std::size_t>(k, v); }},
          {"precision",
           [&](auto& k, auto& v) {
               if (v == "float32") cfg.precision = Precision::Float32;
               else if (v == "float64") cfg.precision = Precision::Float64;
               else throw ConfigError("invalid value '" + v + "' for " + k + " (expected float32 or float64)");
           }}}},
        {"linear",
         {{"lambda_min", [&](auto&, auto&) {}},
          {"lambda_max", [&](auto&, auto&) {}},
          {"lambda_count", [&](auto&, auto&) {}},
          {"lambda_grid", [&](auto& k, auto& v) { cfg.linear.lambda_grid = parse_list<double>(k, v); }},
          {"l1_ratios", [&](auto& k, auto& v) { cfg.linear.l1_ratio_grid = parse_list<double>(k, v); }},
          {"folds", [&](auto& k, auto& v) { cfg.linear.folds = parse_value<std::size_t>(k, v); }},
          {"seed", [&](auto& k, auto& v) { cfg.linear.seed = parse_value<std::uint64_t>(k, v); }},
          {"tol", [&](auto& k, auto& v) { cfg.linear.tol = parse_value<double>(k, v); }},
          {"max_iter", [&](auto& k, auto& v) { cfg.linear.max_iter = parse_value<std::size_t>(k, v); }},
          {"clip", [&](auto& k, auto& v) { cfg.clip_linear = parse_bool(k, v); }}}},
        {"eval",
         {{"ensemble_size", [&](auto& k, auto& v) { cfg.eval.ensemble_size = parse_value<std::size_t>(k, v); }},
          {"dirichlet_alpha",
           [&](auto& k, auto& v) {
               const auto a = parse_list<double>(k, v);
               if (a.size() != 4) throw ConfigError(k + " needs exactly 4 values");
               std::copy(a.begin(), a.end(), cfg.eval.dirichlet_alpha.begin());
           }},
          {"seed", [&](auto& k, auto& v) { cfg.eval.seed = parse_value<std::uint64_t>(k, v); }},
          {"epsilon", [&](auto& k, auto& v) { cfg.eval.epsilon = parse_value<double>(k, v); }},
          {"granularity",
           [&](auto& k, auto& v) {
               if (v == "pixel") cfg.eval.granularity = FractionGranularity::PerPixel;
               else if (v == "member") cfg.eval.granularity = FractionGranularity::PerMember;
               else throw ConfigError("invalid value '" + v + "' for " + k + " (expected pixel or member)");
           }}}},
        {"ablation",
         {{"d_sensor_mm", [&](auto& k, auto& v) { cfg.ablation.d_sensor_mm = parse_list<double>(k, v); }},
          {"n_sensors", [&](auto& k, auto& v) { cfg.ablation.n_sensors = parse_list<std::size_t>(k, v); }},
          {"k", [&](auto& k, auto& v) { cfg.ablation.k = parse_list<std::size_t>(k, v); }}}},
    };

    for (const auto& [section, body] : tree) {
        const auto sec = keys.find(section);
        if (sec == keys.end()) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, node] : body) {
            const auto setter = sec->second.find(key);
            if (setter == sec->second.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            setter->second(section + "." + key, node.get_value<std::string>());
        }
    }

    // Lambda grid from (min, max, count) unless given explicitly.
    if (const auto lin = tree.get_child_optional("linear")) {
        if (!lin->get_optional<std::string>("lambda_grid")) {
            const double lo = parse_value<double>("linear.lambda_min", lin->get<std::string>("lambda_min", "1e-4"));
            const double hi = parse_value<double>("linear.lambda_max", lin->get<std::string>("lambda_max", "1e2"));
            const auto n = parse_value<std::size_t>("linear.lambda_count", lin->get<std::string>("lambda_count", "13"));
            require(lo > 0.0 && hi >= lo && n >= 1, "linear lambda range must satisfy 0 < lambda_min <= lambda_max");
            cfg.linear.lambda_grid = LinearOptions::log_grid(lo, hi, n);
        }
    }

    if (!sensor_indices.empty()) {
        g.sensors.selection = parse_list<std::size_t>("physics.sensor_indices", sensor_indices);
        cfg.sensor_layout = "custom";
    } else {
        apply_sensor_layout(g.sensors, cfg.sensor_layout);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("cannot parse config '" + path + "': " + e.what());
    }
    return parse_config(tree);
}

inline RunConfig parse_config_string(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    return parse_config(tree);
}

}  // namespace bubbletomo
