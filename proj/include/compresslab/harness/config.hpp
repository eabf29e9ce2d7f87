#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/data/scene.hpp"

// Experiment configuration: the train/test treatment labels, the knobs that
// select a codec operating point, and the plain-text config files that
// describe a whole matrix run.
//
// A configuration label names how the segmenter's training images and the
// evaluation images are treated:
//
//   OO  originals both sides            CO  compressed train, original test
//   OC  original train, compressed test CC  compressed both sides
//   RO  restored train, original test   OR  original train, restored test
//   AO  like RO but the restorer was trained on the auxiliary domain
//   oO(f)     train only on the f-sized privileged original subset
//   rO(f)     RO with the restorer trained on the f-sized privileged subset
//             (RO is shorthand for rO(0.5))
//   o+cO(f)   hybrid: f privileged originals (up-weighted) + the remaining
//             compressed images
//   o+rO(f)   hybrid with the remainder restored instead; the restorer is
//             trained on the same privileged subset
//
// Fractions are restricted to {0.125, 0.25, 0.5} and name a prefix of the
// privileged original pool, so smaller budgets are nested inside larger
// ones.  Hybrid losses up-weight the privileged samples 5:1 by default.

namespace clab {

enum class ConfigKind { OO, CO, OC, CC, RO, OR, AO, oO, rO, OplusC, OplusR };

inline constexpr double kHybridWeightDefault = 5.0;

struct ConfigurationLabel {
    ConfigKind kind = ConfigKind::OO;
    double fraction = 0.0;  // privileged fraction for oO/rO/o+cO/o+rO
    double weight = kHybridWeightDefault;  // hybrid privileged loss weight

    friend bool operator==(const ConfigurationLabel&,
                           const ConfigurationLabel&) = default;
};

/// How a label treats each side of the experiment.
enum class Treatment { Original, Compressed, Restored };

/// Which image pool the label's restorer (if any) is trained on.
enum class RestorerSource { None, Privileged, Auxiliary };

/// The full story behind one label: what the segmenter trains on, what it
/// is evaluated on, and where any restorer gets its training pairs.
struct LabelSemantics {
    Treatment train = Treatment::Original;  // bulk training images
    Treatment test = Treatment::Original;
    RestorerSource restorer = RestorerSource::None;
    // Fraction of the privileged pool consumed: restorer training set for
    // r/R/OR labels, the segmenter's own training set for oO and hybrids.
    double privileged_fraction = 0.0;
    // Hybrids train on privileged originals (at `weight`) plus the treated
    // remainder of the training set.
    bool hybrid = false;
    bool uses_codec = true;  // false => the knob is irrelevant to the cell
};

inline bool valid_label_fraction(double f) {
    return f == 0.125 || f == 0.25 || f == 0.5;
}

/// Maps every label to its treatments.  Total by construction: unknown
/// enumerators cannot reach the end of the switch.
inline LabelSemantics label_semantics(const ConfigurationLabel& label) {
    LabelSemantics s;
    switch (label.kind) {
        case ConfigKind::OO:
            s.uses_codec = false;
            return s;
        case ConfigKind::CO:
            s.train = Treatment::Compressed;
            return s;
        case ConfigKind::OC:
            s.test = Treatment::Compressed;
            return s;
        case ConfigKind::CC:
            s.train = Treatment::Compressed;
            s.test = Treatment::Compressed;
            return s;
        case ConfigKind::RO:
            s.train = Treatment::Restored;
            s.restorer = RestorerSource::Privileged;
            s.privileged_fraction = 0.5;  // RO == rO(0.5)
            return s;
        case ConfigKind::OR:
            s.test = Treatment::Restored;
            s.restorer = RestorerSource::Privileged;
            s.privileged_fraction = 0.5;
            return s;
        case ConfigKind::AO:
            s.train = Treatment::Restored;
            s.restorer = RestorerSource::Auxiliary;
            return s;
        case ConfigKind::oO:
            s.privileged_fraction = label.fraction;
            s.uses_codec = false;
            return s;
        case ConfigKind::rO:
            s.train = Treatment::Restored;
            s.restorer = RestorerSource::Privileged;
            s.privileged_fraction = label.fraction;
            return s;
        case ConfigKind::OplusC:
            s.train = Treatment::Compressed;
            s.privileged_fraction = label.fraction;
            s.hybrid = true;
            return s;
        case ConfigKind::OplusR:
            s.train = Treatment::Restored;
            s.restorer = RestorerSource::Privileged;
            s.privileged_fraction = label.fraction;
            s.hybrid = true;
            return s;
    }
    throw UsageError("unhandled configuration label");
}

inline bool label_takes_fraction(ConfigKind k) {
    return k == ConfigKind::oO || k == ConfigKind::rO ||
           k == ConfigKind::OplusC || k == ConfigKind::OplusR;
}

namespace harness_detail {

inline std::string format_fraction(double f) {
    std::ostringstream out;
    out << f;  // 0.125 / 0.25 / 0.5 print exactly
    return out.str();
}

}  // namespace harness_detail

inline std::string format_label(const ConfigurationLabel& label) {
    std::string base;
    switch (label.kind) {
        case ConfigKind::OO: return "OO";
        case ConfigKind::CO: return "CO";
        case ConfigKind::OC: return "OC";
        case ConfigKind::CC: return "CC";
        case ConfigKind::RO: return "RO";
        case ConfigKind::OR: return "OR";
        case ConfigKind::AO: return "AO";
        case ConfigKind::oO: base = "oO"; break;
        case ConfigKind::rO: base = "rO"; break;
        case ConfigKind::OplusC: base = "o+cO"; break;
        case ConfigKind::OplusR: base = "o+rO"; break;
    }
    base += "(" + harness_detail::format_fraction(label.fraction);
    bool hybrid = label.kind == ConfigKind::OplusC || label.kind == ConfigKind::OplusR;
    if (hybrid && label.weight != kHybridWeightDefault) {
        std::ostringstream w;
        w << ",w=" << label.weight;
        base += w.str();
    }
    return base + ")";
}

/// Parses "CO", "oO(0.25)", "o+rO(0.125,w=3)" and the like; inverse of
/// format_label.
inline ConfigurationLabel parse_label(const std::string& text) {
    static const std::map<std::string, ConfigKind> kPlain = {
        {"OO", ConfigKind::OO}, {"CO", ConfigKind::CO}, {"OC", ConfigKind::OC},
        {"CC", ConfigKind::CC}, {"RO", ConfigKind::RO}, {"OR", ConfigKind::OR},
        {"AO", ConfigKind::AO}};
    auto plain = kPlain.find(text);
    if (plain != kPlain.end()) return {plain->second};

    static const std::map<std::string, ConfigKind> kParametric = {
        {"oO", ConfigKind::oO},
        {"rO", ConfigKind::rO},
        {"o+cO", ConfigKind::OplusC},
        {"o+rO", ConfigKind::OplusR}};
    size_t open = text.find('(');
    if (open == std::string::npos || text.back() != ')')
        throw UsageError("unknown configuration label '" + text + "'");
    auto param = kParametric.find(text.substr(0, open));
    if (param == kParametric.end())
        throw UsageError("unknown configuration label '" + text + "'");

    ConfigurationLabel label{param->second};
    std::string args = text.substr(open + 1, text.size() - open - 2);
    size_t comma = args.find(',');
    std::string frac = comma == std::string::npos ? args : args.substr(0, comma);
    try {
        size_t used = 0;
        label.fraction = std::stod(frac, &used);
        if (used != frac.size()) throw std::invalid_argument(frac);
    } catch (const std::exception&) {
        throw UsageError("label '" + text + "' has a malformed fraction");
    }
    if (!valid_label_fraction(label.fraction))
        throw UsageError("label '" + text +
                         "': fraction must be one of 0.125, 0.25, 0.5");
    if (comma != std::string::npos) {
        std::string w = args.substr(comma + 1);
        if (w.rfind("w=", 0) != 0)
            throw UsageError("label '" + text + "': expected w=<weight>");
        try {
            size_t used = 0;
            label.weight = std::stod(w.substr(2), &used);
            if (used != w.size() - 2) throw std::invalid_argument(w);
        } catch (const std::exception&) {
            throw UsageError("label '" + text + "' has a malformed weight");
        }
        if (!(label.weight > 0.0))
            throw UsageError("label '" + text + "': weight must be > 0");
        if (label.kind == ConfigKind::oO || label.kind == ConfigKind::rO)
            throw UsageError("label '" + text +
                             "': only hybrid labels take a weight");
    }
    return label;
}

/// Everything run_matrix needs: the dataset recipe, the codec and its
/// operating points, the labels, seeds, budgets, and the output directory.
struct ExperimentConfig {
    std::string spec_id = "urban";  // urban | drone
    int image_size = 0;             // >0 overrides the stock spec's size
    SplitSpec split{240, 40, 0, 0, 0.5};
    uint64_t data_seed = 1;

    std::string codec_id = "dct";  // dct | learned
    std::vector<double> knobs = {10};

    std::vector<ConfigurationLabel> labels = {{ConfigKind::OO}};
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "runs/out";

    // segmenter budget (per cell)
    long seg_steps = 800;
    int seg_width = 16;
    int seg_crop = 64;
    int seg_batch = 4;
    float seg_lr = 1e-3f;

    // restorer budget (per cached restorer)
    int gan_iters = 8000;
    int gan_crop = 64;

    // learned-codec budget (per cached knob; dct ignores these)
    long codec_steps = 3000;
    float codec_lr = 1e-4f;

    // optional per-cell analysis columns (shift, perceptual index, S-hat)
    bool analysis = false;
    long analysis_steps = 250;
    std::vector<int> semloss_cells = {5, 6, 9, 10};
};

inline SceneSpec scene_spec_for(const ExperimentConfig& cfg) {
    SceneSpec spec;
    if (cfg.spec_id == "urban")
        spec = urban_like_spec();
    else if (cfg.spec_id == "drone")
        spec = drone_like_spec();
    else
        throw UsageError("unknown scene spec '" + cfg.spec_id +
                         "' (expected urban or drone)");
    if (cfg.image_size > 0) spec.size = cfg.image_size;
    validate_scene_spec(spec);
    return spec;
}

/// Checks every cross-label invariant before any training starts.
inline void validate_experiment(const ExperimentConfig& cfg) {
    scene_spec_for(cfg);
    if (cfg.labels.empty()) throw UsageError("experiment needs >= 1 label");
    if (cfg.knobs.empty()) throw UsageError("experiment needs >= 1 knob");
    if (cfg.seeds.empty()) throw UsageError("experiment needs >= 1 seed");
    if (cfg.out_dir.empty()) throw UsageError("experiment needs an output dir");
    if (cfg.split.seg_train < 2 || cfg.split.seg_eval < 1)
        throw UsageError("experiment needs seg_train >= 2 and seg_eval >= 1");
    if (cfg.codec_id != "dct" && cfg.codec_id != "learned")
        throw UsageError("unknown codec '" + cfg.codec_id +
                         "' (expected dct or learned)");
    for (double k : cfg.knobs) {
        if (cfg.codec_id == "dct" &&
            (k < 1 || k > 100 || k != std::floor(k)))
            throw UsageError("dct knobs are integer qualities in [1, 100]");
        if (cfg.codec_id == "learned" && !(k > 0))
            throw UsageError("learned-codec knobs are lambdas > 0");
    }
    if (cfg.seg_steps < 1 || cfg.seg_batch < 1 || cfg.seg_width < 1 ||
        cfg.seg_crop < 16 || cfg.seg_crop % 16 != 0)
        throw UsageError("segmenter budget fields are out of range");
    if (cfg.gan_iters < 1) throw UsageError("gan_iters must be >= 1");
    if (cfg.codec_steps < 1) throw UsageError("codec_steps must be >= 1");

    for (const auto& label : cfg.labels) {
        LabelSemantics sem = label_semantics(label);
        if (label_takes_fraction(label.kind) &&
            !valid_label_fraction(label.fraction))
            throw UsageError("label " + format_label(label) +
                             ": fraction must be one of 0.125, 0.25, 0.5");
        if (!(label.weight > 0.0))
            throw UsageError("label " + format_label(label) +
                             ": weight must be > 0");
        if (sem.privileged_fraction > 0.0 &&
            sem.privileged_fraction > cfg.split.privileged_fraction + 1e-12)
            throw UsageError(
                "label " + format_label(label) +
                " needs privileged_fraction >= " +
                harness_detail::format_fraction(sem.privileged_fraction) +
                " in the split");
        if (sem.restorer == RestorerSource::Auxiliary &&
            cfg.split.auxiliary < 1)
            throw UsageError("label " + format_label(label) +
                             " needs an auxiliary split in the dataset");
    }
}

/// The cost of collecting a configuration's training data, as a fraction of
/// collecting the whole training set losslessly (the OO cost).  `bpp` is the
/// codec's measured rate at the cell's knob and `bpp_lossless` the measured
/// lossless reference rate.  Evaluation-side treatment costs nothing: test
/// images are captured on the device, not collected.
inline double cost_fraction(const ConfigurationLabel& label, double bpp,
                            double bpp_lossless) {
    if (!(bpp_lossless > 0.0)) throw UsageError("bpp_lossless must be > 0");
    LabelSemantics sem = label_semantics(label);
    double r = bpp / bpp_lossless;
    double cost;
    if (sem.hybrid) {
        // f lossless originals + the (1-f) remainder collected compressed;
        // an o+rO restorer reuses those same originals at no extra cost.
        cost = sem.privileged_fraction + (1.0 - sem.privileged_fraction) * r;
    } else if (label.kind == ConfigKind::oO) {
        cost = sem.privileged_fraction;  // only the privileged subset
    } else {
        cost = sem.train == Treatment::Original ? 1.0 : r;
        // A standalone restorer needs its own losslessly collected set.
        if (sem.restorer == RestorerSource::Privileged)
            cost += sem.privileged_fraction;
    }
    return cost;
}

namespace harness_detail {

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        if (a == std::string::npos) continue;
        out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        T cast = static_cast<T>(v);
        if (static_cast<double>(cast) != v)
            throw std::invalid_argument(value);  // reject 1.5 for int keys
        return cast;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' has a malformed value '" +
                         value + "'");
    }
}

template <>
inline double parse_number<double>(const std::string& key,
                                   const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' has a malformed value '" +
                         value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("config key '" + key + "' expects true or false, got '" +
                     value + "'");
}

}  // namespace harness_detail

/// Reads a plain-text `key = value` config file: one setting per line,
/// `#` starts a comment, list values are comma-separated.  See
/// docs/CONFIG.md for the key reference.
inline std::map<std::string, std::string> read_config_text(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(line_no) +
                             ": expected key = value");
        auto trim = [](std::string s) {
            size_t x = s.find_first_not_of(" \t\r");
            size_t y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string()
                                          : s.substr(x, y - x + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw UsageError(path + ":" + std::to_string(line_no) +
                             ": empty key");
        kv[key] = value;
    }
    return kv;
}

/// Applies one parsed `key = value` setting; unknown keys are usage errors
/// so typos surface instead of silently running defaults.
inline void apply_config_setting(ExperimentConfig& cfg, const std::string& key,
                                 const std::string& value) {
    using harness_detail::parse_bool;
    using harness_detail::parse_number;
    using harness_detail::split_list;
    if (key == "spec") {
        cfg.spec_id = value;
    } else if (key == "image_size") {
        cfg.image_size = parse_number<int>(key, value);
    } else if (key == "seg_train") {
        cfg.split.seg_train = parse_number<int>(key, value);
    } else if (key == "seg_eval") {
        cfg.split.seg_eval = parse_number<int>(key, value);
    } else if (key == "restore_train") {
        cfg.split.restore_train = parse_number<int>(key, value);
    } else if (key == "auxiliary") {
        cfg.split.auxiliary = parse_number<int>(key, value);
    } else if (key == "privileged_fraction") {
        cfg.split.privileged_fraction = parse_number<double>(key, value);
    } else if (key == "data_seed") {
        cfg.data_seed = parse_number<uint64_t>(key, value);
    } else if (key == "codec") {
        cfg.codec_id = value;
    } else if (key == "knobs") {
        cfg.knobs.clear();
        for (const auto& item : split_list(value))
            cfg.knobs.push_back(parse_number<double>(key, item));
    } else if (key == "labels") {
        cfg.labels.clear();
        for (const auto& item : split_list(value))
            cfg.labels.push_back(parse_label(item));
    } else if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& item : split_list(value))
            cfg.seeds.push_back(parse_number<uint64_t>(key, item));
    } else if (key == "out") {
        cfg.out_dir = value;
    } else if (key == "seg_steps") {
        cfg.seg_steps = parse_number<long>(key, value);
    } else if (key == "seg_width") {
        cfg.seg_width = parse_number<int>(key, value);
    } else if (key == "seg_crop") {
        cfg.seg_crop = parse_number<int>(key, value);
    } else if (key == "seg_batch") {
        cfg.seg_batch = parse_number<int>(key, value);
    } else if (key == "seg_lr") {
        cfg.seg_lr = static_cast<float>(parse_number<double>(key, value));
    } else if (key == "gan_iters") {
        cfg.gan_iters = parse_number<int>(key, value);
    } else if (key == "gan_crop") {
        cfg.gan_crop = parse_number<int>(key, value);
    } else if (key == "codec_steps") {
        cfg.codec_steps = parse_number<long>(key, value);
    } else if (key == "codec_lr") {
        cfg.codec_lr = static_cast<float>(parse_number<double>(key, value));
    } else if (key == "analysis") {
        cfg.analysis = parse_bool(key, value);
    } else if (key == "analysis_steps") {
        cfg.analysis_steps = parse_number<long>(key, value);
    } else if (key == "semloss_cells") {
        cfg.semloss_cells.clear();
        for (const auto& item : split_list(value))
            cfg.semloss_cells.push_back(parse_number<int>(key, item));
    } else {
        throw UsageError("unknown config key '" + key + "'");
    }
}

/// Loads an ExperimentConfig from a config file (defaults + file settings).
inline ExperimentConfig load_experiment_config(const std::string& path) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : read_config_text(path))
        apply_config_setting(cfg, key, value);
    return cfg;
}

}  // namespace clab
