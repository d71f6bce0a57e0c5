#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "taper/layers.hpp"
#include "taper/objective.hpp"
#include "taper/pruner.hpp"
#include "taper/trainer.hpp"

// Flat key = value config file mirroring TrainConfig / ObjectiveConfig /
// PruneSchedule plus architecture and data selection; see docs/config.md.

namespace taper::cli {

struct DataConfig {
    std::string source = "synth";  // synth | cifar10:<dir> | idx:<images>,<labels>
    std::size_t synth_classes = 4;
    std::size_t synth_train_per_class = 500;
    std::size_t synth_test_per_class = 125;
    std::size_t synth_image_size = 16;
    std::size_t synth_channels = 3;
    double synth_snr = 1.0;
};

struct RunConfig {
    std::string precision = "f64";  // f64 | f32
    std::string backend = "auto";   // auto | scalar | avx2
    std::string arch;
    Shape input_shape;
    TaskKind task = TaskKind::classification;
    double gamma_init = -1.0;  // <0 keeps per-kind defaults
    bool trace = false;
    std::string out_dir = "out";
    DataConfig data;
    ObjectiveConfig objective;
    TrainConfig train;
    PruneSchedule schedule{0.0, 160, 0.0};
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

inline std::size_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size() || d < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(d);
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

// "0.5:0.1,0.75:0.1"
inline std::vector<std::pair<double, double>> parse_drops(const std::string& v) {
    std::vector<std::pair<double, double>> out;
    if (detail::trim(v).empty() || v == "none") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config: lr_drops entries are fraction:factor, got " + item);
        out.emplace_back(parse_real("lr_drops", trim(item.substr(0, colon))),
                         parse_real("lr_drops", trim(item.substr(colon + 1))));
    }
    return out;
}

// "3x16x16"
inline Shape parse_shape(const std::string& v) {
    Shape out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, 'x')) out.push_back(parse_uint("input", trim(item)));
    if (out.empty()) throw ConfigError("config: empty input shape");
    return out;
}

}  // namespace detail

// Layer DSL, comma-separated:
//   conv:FxK[xS[xP]][b]  convolution (b = with bias)
//   dense:K[n]           fully connected (n = no bias)
//   bn | scale | relu | flatten
//   pool:K[xS]           max pooling
// Example: conv:16x3x1x1,bn,relu,pool:2,flatten,dense:4
inline std::vector<LayerConfig> parse_arch(const std::string& arch) {
    std::vector<LayerConfig> layers;
    std::stringstream ss(arch);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const std::string name = item.substr(0, colon);
        std::string args = colon == std::string::npos ? "" : item.substr(colon + 1);
        if (name == "bn") {
            layers.push_back(LayerConfig::batchnorm_());
        } else if (name == "scale") {
            layers.push_back(LayerConfig::scaling_());
        } else if (name == "relu") {
            layers.push_back(LayerConfig::relu_());
        } else if (name == "flatten") {
            layers.push_back(LayerConfig::flatten_());
        } else if (name == "pool") {
            if (args.empty()) throw ConfigError("arch: pool needs a window, e.g. pool:2");
            const auto xs = detail::parse_shape(args);
            layers.push_back(LayerConfig::maxpool_(xs[0], xs.size() > 1 ? xs[1] : xs[0]));
        } else if (name == "dense") {
            bool bias = true;
            if (!args.empty() && args.back() == 'n') {
                bias = false;
                args.pop_back();
            }
            layers.push_back(LayerConfig::dense_(detail::parse_uint("dense", args), bias));
        } else if (name == "conv") {
            bool bias = false;
            if (!args.empty() && args.back() == 'b') {
                bias = true;
                args.pop_back();
            }
            const auto xs = detail::parse_shape(args);
            if (xs.size() < 2) throw ConfigError("arch: conv needs FxK, got " + item);
            layers.push_back(LayerConfig::conv_(xs[0], xs[1], xs.size() > 2 ? xs[2] : 1,
                                                xs.size() > 3 ? xs[3] : 0, bias));
        } else {
            throw ConfigError("arch: unknown layer '" + name + "'");
        }
    }
    if (layers.empty()) throw ConfigError("arch: no layers");
    return layers;
}

inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "precision") {
        if (value != "f64" && value != "f32")
            throw ConfigError("config: precision must be f64 or f32");
        cfg.precision = value;
    } else if (key == "backend") {
        if (value != "auto" && value != "scalar" && value != "avx2")
            throw ConfigError("config: backend must be auto, scalar or avx2");
        cfg.backend = value;
    } else if (key == "arch") {
        cfg.arch = value;
    } else if (key == "input") {
        cfg.input_shape = parse_shape(value);
    } else if (key == "task") {
        if (value == "classification")
            cfg.task = TaskKind::classification;
        else if (value == "reconstruction")
            cfg.task = TaskKind::reconstruction;
        else
            throw ConfigError("config: task must be classification or reconstruction");
    } else if (key == "gamma_init") {
        cfg.gamma_init = parse_real(key, value);
    } else if (key == "trace") {
        cfg.trace = parse_bool(key, value);
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "data") {
        cfg.data.source = value;
    } else if (key == "synth_classes") {
        cfg.data.synth_classes = parse_uint(key, value);
    } else if (key == "synth_train_per_class") {
        cfg.data.synth_train_per_class = parse_uint(key, value);
    } else if (key == "synth_test_per_class") {
        cfg.data.synth_test_per_class = parse_uint(key, value);
    } else if (key == "synth_image_size") {
        cfg.data.synth_image_size = parse_uint(key, value);
    } else if (key == "synth_channels") {
        cfg.data.synth_channels = parse_uint(key, value);
    } else if (key == "synth_snr") {
        cfg.data.synth_snr = parse_real(key, value);
    } else if (key == "lambda1") {
        cfg.objective.lambda1 = parse_real(key, value);
    } else if (key == "lambda2") {
        cfg.objective.lambda2 = parse_real(key, value);
    } else if (key == "lambda3") {
        cfg.objective.lambda3 = parse_real(key, value);
    } else if (key == "target_ratio") {
        cfg.schedule.target_ratio = parse_real(key, value);
    } else if (key == "start_ratio") {
        cfg.schedule.start_ratio = parse_real(key, value);
    } else if (key == "freeze_pruned") {
        cfg.train.freeze_pruned = parse_bool(key, value);
    } else if (key == "survivor_floor") {
        cfg.train.survivor_floor = parse_uint(key, value);
    } else if (key == "optimizer") {
        if (value == "sgd_nesterov")
            cfg.train.optimizer = OptimizerKind::sgd_nesterov;
        else if (value == "adam")
            cfg.train.optimizer = OptimizerKind::adam;
        else
            throw ConfigError("config: optimizer must be sgd_nesterov or adam");
    } else if (key == "lr") {
        cfg.train.lr = parse_real(key, value);
    } else if (key == "lr_drops") {
        cfg.train.lr_drops = parse_drops(value);
    } else if (key == "momentum") {
        cfg.train.momentum = parse_real(key, value);
    } else if (key == "weight_decay") {
        cfg.train.weight_decay = parse_real(key, value);
    } else if (key == "batch_size") {
        cfg.train.batch_size = parse_uint(key, value);
    } else if (key == "epochs") {
        cfg.train.epochs = parse_uint(key, value);
        cfg.schedule.epochs = cfg.train.epochs;
    } else if (key == "seed") {
        cfg.train.seed = parse_uint(key, value);
    } else if (key == "determinism") {
        cfg.train.determinism = parse_bool(key, value);
    } else if (key == "augment") {
        cfg.train.augment = parse_bool(key, value);
    } else if (key == "augment_pad") {
        cfg.train.augment_pad = parse_uint(key, value);
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        apply_key(cfg, key, value);
    }
}

inline NetworkSpec make_spec(const RunConfig& cfg) {
    if (cfg.arch.empty()) throw ConfigError("config: arch is required");
    if (cfg.input_shape.empty()) throw ConfigError("config: input is required");
    NetworkSpec spec;
    spec.layers = parse_arch(cfg.arch);
    spec.input_shape = cfg.input_shape;
    spec.task = cfg.task;
    if (cfg.gamma_init >= 0.0) {
        for (auto& lc : spec.layers) {
            if (is_host(lc.kind)) lc.gamma_init = cfg.gamma_init;
        }
    }
    validate(spec);
    return spec;
}

}  // namespace taper::cli
