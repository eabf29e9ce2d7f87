#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "compresslab/analysis/c2st.hpp"
#include "compresslab/analysis/semantic.hpp"
#include "compresslab/codec/dct_codec.hpp"
#include "compresslab/codec/learned_codec.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/harness/config.hpp"
#include "compresslab/metrics/ms_ssim.hpp"
#include "compresslab/metrics/psnr.hpp"
#include "compresslab/restore/train.hpp"
#include "compresslab/seg/train.hpp"

// The experiment matrix: configurations x rate knobs x seeds.
//
// Every cell stages its datasets (compressing, restoring, or slicing the
// privileged pool as its label demands), trains a segmenter, evaluates it,
// and emits one report row.  Expensive artifacts are cached on disk under
// <out>/cache, keyed by a hash of everything that produced them, so labels
// sharing a codec operating point reuse the same compressed bytes and a
// rerun over a completed output directory performs zero training.  Each
// completed cell leaves a row fragment under <out>/cells; the final
// report.json carries all rows plus per-(label, knob) medians.  Wall-clock
// timings go to a timing.json sidecar so the report itself stays
// byte-deterministic for a fixed seed.

namespace clab {

struct ExperimentRow {
    std::string label;
    double knob = 0.0;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;

    double bpp = 0.0;        // measured train-set rate; 0 when the codec is unused
    double psnr_db = NAN;    // codec distortion on the training images
    double msssim_db = NAN;
    double miou = 0.0;
    std::vector<double> per_class_iou;  // NaN where the class never occurs
    double small_group_iou = NAN;       // mean over the small-object classes
    double large_group_iou = NAN;       // mean over the other object classes
    double cost_fraction = 0.0;

    // analysis columns, NaN unless ExperimentConfig::analysis is set
    double shift_proxy = NAN;
    double perceptual_index = NAN;
    double s_hat = NAN;
};

inline void to_json(nlohmann::json& j, const ExperimentRow& r) {
    j = {{"label", r.label},
         {"knob", r.knob},
         {"seed", r.seed},
         {"failed", r.failed},
         {"error", r.error},
         {"bpp", r.bpp},
         {"psnr_db", r.psnr_db},
         {"msssim_db", r.msssim_db},
         {"miou", r.miou},
         {"per_class_iou", r.per_class_iou},
         {"small_group_iou", r.small_group_iou},
         {"large_group_iou", r.large_group_iou},
         {"cost_fraction", r.cost_fraction},
         {"shift_proxy", r.shift_proxy},
         {"perceptual_index", r.perceptual_index},
         {"s_hat", r.s_hat}};
}

inline void from_json(const nlohmann::json& j, ExperimentRow& r) {
    auto num = [&j](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? NAN : v.get<double>();
    };
    r.label = j.at("label").get<std::string>();
    r.knob = j.at("knob").get<double>();
    r.seed = j.at("seed").get<uint64_t>();
    r.failed = j.at("failed").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.bpp = j.at("bpp").get<double>();
    r.psnr_db = num("psnr_db");
    r.msssim_db = num("msssim_db");
    r.miou = j.at("miou").get<double>();
    r.per_class_iou.clear();
    for (const auto& v : j.at("per_class_iou"))
        r.per_class_iou.push_back(v.is_null() ? NAN : v.get<double>());
    r.small_group_iou = num("small_group_iou");
    r.large_group_iou = num("large_group_iou");
    r.cost_fraction = j.at("cost_fraction").get<double>();
    r.shift_proxy = num("shift_proxy");
    r.perceptual_index = num("perceptual_index");
    r.s_hat = num("s_hat");
}

/// Seed-aggregated view of one (label, knob) cell group.
struct MedianRow {
    std::string label;
    double knob = 0.0;
    int n_ok = 0;  // rows that completed
    double miou = NAN;
    double small_group_iou = NAN;
    double large_group_iou = NAN;
    double bpp = 0.0;
    double cost_fraction = 0.0;
};

inline void to_json(nlohmann::json& j, const MedianRow& m) {
    j = {{"label", m.label},
         {"knob", m.knob},
         {"n_ok", m.n_ok},
         {"miou", m.miou},
         {"small_group_iou", m.small_group_iou},
         {"large_group_iou", m.large_group_iou},
         {"bpp", m.bpp},
         {"cost_fraction", m.cost_fraction}};
}

struct ExperimentReport {
    nlohmann::json config;  // the resolved settings (output paths excluded)
    double bpp_lossless = 0.0;
    std::vector<ExperimentRow> rows;
    std::vector<MedianRow> medians;
};

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
    j = {{"schema", "clab-report-v1"},
         {"config", r.config},
         {"bpp_lossless", r.bpp_lossless},
         {"rows", r.rows},
         {"medians", r.medians}};
}

/// Per-cell wall-clock sidecar; excluded from report.json on purpose.
struct CellTiming {
    double data_s = 0.0;      // staging (codec + restoration + IO)
    double seg_train_s = 0.0;
    double eval_s = 0.0;
    double analysis_s = 0.0;
    // deployment-side cost per test image: (optional codec) + predict
    double infer_codec_ms = 0.0;
    double infer_predict_ms = 0.0;
    double infer_total_ms = 0.0;
};

inline void to_json(nlohmann::json& j, const CellTiming& t) {
    j = {{"data_s", t.data_s},
         {"seg_train_s", t.seg_train_s},
         {"eval_s", t.eval_s},
         {"analysis_s", t.analysis_s},
         {"infer_codec_ms", t.infer_codec_ms},
         {"infer_predict_ms", t.infer_predict_ms},
         {"infer_total_ms", t.infer_total_ms}};
}

namespace harness_detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string format_knob(double knob) {
    std::ostringstream out;
    out << knob;
    return out.str();
}

/// File-name-safe cell identifier, e.g. "o+cO(0.25)" q10 seed 1 ->
/// "o_cO_0.25_q10_s1".
inline std::string sanitize(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
            c == '-')
            out += c;
        else if (out.empty() || out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

/// A view of `ds` holding entries [start, start+count); no files move.
inline Dataset dataset_slice(const Dataset& ds, size_t start, size_t count) {
    if (start + count > ds.size())
        throw UsageError("dataset slice [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " +
                         std::to_string(ds.size()) + " entries");
    Dataset out = ds;
    out.entries.assign(ds.entries.begin() + static_cast<long>(start),
                       ds.entries.begin() + static_cast<long>(start + count));
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return NAN;
    std::sort(v.begin(), v.end());
    size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Mean of the per-class IoUs over `ids`, skipping classes absent from the
/// evaluation set (NaN entries).
inline double group_mean_iou(const std::vector<double>& per_class,
                             const std::vector<int>& ids) {
    double sum = 0.0;
    int counted = 0;
    for (int c : ids) {
        if (c < 0 || c >= static_cast<int>(per_class.size())) continue;
        if (std::isnan(per_class[static_cast<size_t>(c)])) continue;
        sum += per_class[static_cast<size_t>(c)];
        ++counted;
    }
    return counted > 0 ? sum / counted : NAN;
}

}  // namespace harness_detail

/// Runs experiment cells against a shared on-disk artifact cache.  One
/// runner instance owns one output directory; run_matrix / run_configuration
/// are the public entry points.
class MatrixRunner {
public:
    explicit MatrixRunner(const ExperimentConfig& cfg)
        : cfg_(cfg), spec_(scene_spec_for(cfg)) {
        validate_experiment(cfg_);
        std::filesystem::create_directories(cfg_.out_dir + "/cache");
        std::filesystem::create_directories(cfg_.out_dir + "/cells");
        std::filesystem::create_directories(cfg_.out_dir + "/models");
        ensure_bundle();
    }

    const DatasetBundle& bundle() const { return bundle_; }
    double bpp_lossless() const { return bpp_lossless_; }

    /// All seed rows of one (label, knob) cell group, cached cells included.
    std::vector<ExperimentRow> run_configuration(const ConfigurationLabel& label,
                                                 double knob) {
        std::vector<ExperimentRow> rows;
        for (uint64_t seed : cfg_.seeds) rows.push_back(run_cell(label, knob, seed));
        return rows;
    }

    /// The full labels x knobs x seeds cross product.  Failures are recorded
    /// on their row and the matrix keeps going.  Writes report.json and the
    /// timing.json sidecar under the output directory.
    ExperimentReport run_matrix() {
        ExperimentReport report;
        report.config = config_json();
        report.bpp_lossless = bpp_lossless_;
        for (const auto& label : cfg_.labels)
            for (double knob : cfg_.knobs)
                for (uint64_t seed : cfg_.seeds)
                    report.rows.push_back(run_cell(label, knob, seed));
        report.medians = aggregate_medians(report.rows);

        harness_detail::write_json_file(cfg_.out_dir + "/report.json", report);
        nlohmann::json timing;
        for (const auto& [key, t] : timings_) timing[key] = t;
        harness_detail::write_json_file(cfg_.out_dir + "/timing.json", timing);
        return report;
    }

    /// One cell; returns the cached row when its fragment already exists.
    ExperimentRow run_cell(const ConfigurationLabel& label, double knob,
                           uint64_t seed) {
        LabelSemantics sem = label_semantics(label);
        std::string key = cell_key(label, knob, seed);
        std::string fragment = cfg_.out_dir + "/cells/" + key + ".json";
        ExperimentRow row;
        if (std::filesystem::exists(fragment)) {
            from_json(harness_detail::read_json_file(fragment), row);
        } else {
            CellTiming timing;
            try {
                row = execute_cell(label, knob, seed, timing);
            } catch (const std::exception& e) {
                row = ExperimentRow{};
                row.label = format_label(label);
                row.seed = seed;
                row.failed = true;
                row.error = e.what();
            }
            // Fragments for codec-free labels are knob-agnostic (see
            // cell_key); store them with knob 0 and patch on read-back.
            row.knob = sem.uses_codec ? knob : 0.0;
            harness_detail::write_json_file(fragment, nlohmann::json(row));
            timings_[key] = timing;
            harness_detail::write_json_file(
                cfg_.out_dir + "/cells/" + key + ".timing.json",
                nlohmann::json(timing));
        }
        row.knob = knob;
        return row;
    }

    /// Stable fragment name; codec-free labels (OO, oO) share one fragment
    /// across knobs so reruns at new knobs cost nothing.
    std::string cell_key(const ConfigurationLabel& label, double knob,
                         uint64_t seed) const {
        LabelSemantics sem = label_semantics(label);
        std::string key = harness_detail::sanitize(format_label(label));
        if (sem.uses_codec)
            key += "_q" + harness_detail::sanitize(harness_detail::format_knob(knob));
        return key + "_s" + std::to_string(seed);
    }

private:
    // ---- dataset staging -------------------------------------------------

    void ensure_bundle() {
        std::string dir = cfg_.out_dir + "/bundle";
        if (std::filesystem::exists(dir + "/.done")) {
            bundle_.seg_train = load_manifest(dir + "/seg_train/manifest.json");
            bundle_.seg_eval = load_manifest(dir + "/seg_eval/manifest.json");
            if (cfg_.split.restore_train > 0)
                bundle_.restore_train =
                    load_manifest(dir + "/restore_train/manifest.json");
            bundle_.privileged = load_manifest(dir + "/privileged/manifest.json");
            if (cfg_.split.auxiliary > 0)
                bundle_.auxiliary = load_manifest(dir + "/auxiliary/manifest.json");
        } else {
            std::filesystem::remove_all(dir);
            bundle_ = make_dataset(spec_, cfg_.split, cfg_.data_seed, dir);
            harness_detail::write_text(dir + "/.done", "ok\n");
        }

        std::string ref = dir + "/bpp_lossless.json";
        if (std::filesystem::exists(ref)) {
            bpp_lossless_ = harness_detail::read_json_file(ref).at("bpp_lossless")
                                .get<double>();
        } else {
            double sum = 0.0;
            for (size_t i = 0; i < bundle_.seg_train.size(); ++i)
                sum += lossless_encode(bundle_.seg_train.load_image(i)).bpp();
            bpp_lossless_ = sum / static_cast<double>(bundle_.seg_train.size());
            harness_detail::write_json_file(
                ref, {{"bpp_lossless", bpp_lossless_},
                      {"images", bundle_.seg_train.size()}});
        }
    }

    /// Reserves a cache directory for `key`: returns (path, true) when the
    /// artifact is already built, (path, false) when the caller must build
    /// it and then call finish_cache.  Partially built leftovers are wiped.
    std::pair<std::string, bool> open_cache(const std::string& kind,
                                            const std::string& key) {
        std::string dir =
            cfg_.out_dir + "/cache/" + kind + "_" + hash_hex(fnv1a(key));
        if (std::filesystem::exists(dir + "/.done")) return {dir, true};
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        harness_detail::write_text(dir + "/key.txt", key + "\n");
        return {dir, false};
    }

    void finish_cache(const std::string& dir) {
        harness_detail::write_text(dir + "/.done", "ok\n");
    }

    std::string codec_key() const {
        std::string key = "codec=" + cfg_.codec_id;
        if (cfg_.codec_id == "learned")
            key += "|steps=" + std::to_string(cfg_.codec_steps) +
                   "|lr=" + std::to_string(cfg_.codec_lr) + "|spec=" +
                   hash_hex(bundle_.seg_train.spec_hash) +
                   "|data_seed=" + std::to_string(cfg_.data_seed);
        return key;
    }

    /// The learned codec at one lambda, trained once on the training-set
    /// originals with a fixed seed and shared by every cell.
    const LearnedCodecModel& learned_model(double knob) {
        auto hit = learned_models_.find(knob);
        if (hit != learned_models_.end()) return hit->second;

        std::string key = codec_key() + "|lambda=" +
                          harness_detail::format_knob(knob);
        auto [dir, done] = open_cache("codec", key);
        LearnedCodecModel model{CodecNet(AutoencoderConfig{}, 1),
                                static_cast<float>(knob)};
        if (done) {
            model.net.params().load(dir + "/codec.clt");
        } else {
            std::vector<Image8> images;
            images.reserve(bundle_.seg_train.size());
            for (size_t i = 0; i < bundle_.seg_train.size(); ++i)
                images.push_back(bundle_.seg_train.load_image(i));
            model = train_learned_codec(images, static_cast<float>(knob),
                                        cfg_.codec_steps, 1);
            model.net.params().save(dir + "/codec.clt");
            finish_cache(dir);
        }
        return learned_models_.emplace(knob, std::move(model)).first->second;
    }

    Image8 codec_roundtrip(const Image8& im, double knob, double* bits_pp) {
        if (cfg_.codec_id == "dct") {
            Bitstream bs = dct_encode(im, static_cast<int>(knob));
            if (bits_pp) *bits_pp = bs.bpp();
            return dct_decode(bs);
        }
        const LearnedCodecModel& model = learned_model(knob);
        Bitstream bs = learned_encode(model, im);
        if (bits_pp) *bits_pp = bs.bpp();
        return learned_decode(model, bs);
    }

    struct CodecStats {
        double bpp = 0.0;
        double psnr_db = 0.0;
        double msssim_db = 0.0;
    };

    /// Compressed copy of a whole dataset at one knob, cached with its
    /// measured rate/distortion stats.  Labels are byte-copied.
    const Dataset& compressed(const Dataset& src, const std::string& role,
                              double knob) {
        std::string key = "compressed|role=" + role + "|spec=" +
                          hash_hex(src.spec_hash) + "|data_seed=" +
                          std::to_string(cfg_.data_seed) + "|" + codec_key() +
                          "|knob=" + harness_detail::format_knob(knob);
        auto hit = compressed_sets_.find(key);
        if (hit != compressed_sets_.end()) return hit->second.first;

        auto [dir, done] = open_cache("c", key);
        Dataset out = src;
        out.root = dir;
        out.provenance = "compressed:" + cfg_.codec_id + ":" +
                         harness_detail::format_knob(knob);
        CodecStats stats;
        if (done) {
            out = load_manifest(dir + "/manifest.json");
            nlohmann::json j = harness_detail::read_json_file(dir + "/stats.json");
            stats = {j.at("bpp").get<double>(), j.at("psnr_db").get<double>(),
                     j.at("msssim_db").get<double>()};
        } else {
            for (size_t i = 0; i < src.size(); ++i) {
                Image8 im = src.load_image(i);
                double bits = 0.0;
                Image8 rt = codec_roundtrip(im, knob, &bits);
                stats.bpp += bits;
                stats.psnr_db += psnr_db(im, rt);
                stats.msssim_db += ms_ssim_db(ms_ssim(im, rt));
                write_png(out.image_path(i), rt);
                std::filesystem::copy_file(
                    src.label_path(i), out.label_path(i),
                    std::filesystem::copy_options::overwrite_existing);
            }
            stats.bpp /= static_cast<double>(src.size());
            stats.psnr_db /= static_cast<double>(src.size());
            stats.msssim_db /= static_cast<double>(src.size());
            save_manifest(out, dir + "/manifest.json");
            harness_detail::write_json_file(dir + "/stats.json",
                                            {{"bpp", stats.bpp},
                                             {"psnr_db", stats.psnr_db},
                                             {"msssim_db", stats.msssim_db}});
            finish_cache(dir);
        }
        return compressed_sets_.emplace(key, std::make_pair(std::move(out), stats))
            .first->second.first;
    }

    CodecStats compressed_stats(const Dataset& src, const std::string& role,
                                double knob) {
        compressed(src, role, knob);  // ensures the cache entry
        std::string key = "compressed|role=" + role + "|spec=" +
                          hash_hex(src.spec_hash) + "|data_seed=" +
                          std::to_string(cfg_.data_seed) + "|" + codec_key() +
                          "|knob=" + harness_detail::format_knob(knob);
        return compressed_sets_.at(key).second;
    }

    // ---- restorers ---------------------------------------------------------

    /// Frozen feature extractor for the GAN's distillation loss, trained
    /// once per source pool with a fixed seed.
    const ConvClassifier& feature_net(const Dataset& source,
                                      const std::string& role) {
        std::string key = "featnet|role=" + role + "|n=" +
                          std::to_string(source.size()) + "|spec=" +
                          hash_hex(source.spec_hash) + "|data_seed=" +
                          std::to_string(cfg_.data_seed);
        auto hit = feature_nets_.find(key);
        if (hit != feature_nets_.end()) return hit->second;

        auto [dir, done] = open_cache("fn", key);
        std::optional<ConvClassifier> net;
        if (done) {
            ClassifierConfig fcfg;  // mirrors train_feature_net's probe
            fcfg.blocks = 5;
            fcfg.num_classes = source.num_classes - 1;
            net.emplace(fcfg, 11);
            net->params().load(dir + "/featnet.clt");
        } else {
            net.emplace(train_feature_net(source));
            net->params().save(dir + "/featnet.clt");
            finish_cache(dir);
        }
        return feature_nets_.emplace(key, std::move(*net)).first->second;
    }

    std::string restorer_key(RestorerSource source, double fraction,
                             double knob, uint64_t seed) const {
        std::string src =
            source == RestorerSource::Auxiliary
                ? "auxiliary"
                : "privileged:" + harness_detail::format_fraction(fraction);
        return "restorer|source=" + src + "|" + codec_key() + "|knob=" +
               harness_detail::format_knob(knob) + "|iters=" +
               std::to_string(cfg_.gan_iters) + "|crop=" +
               std::to_string(cfg_.gan_crop) + "|seed=" + std::to_string(seed);
    }

    /// The restoration pool for a source: the f-prefix of the privileged
    /// originals (nested budgets) or the whole auxiliary set.
    Dataset restorer_pool(RestorerSource source, double fraction) const {
        if (source == RestorerSource::Auxiliary) return bundle_.auxiliary;
        size_t want = static_cast<size_t>(
            std::llround(fraction * static_cast<double>(bundle_.seg_train.size())));
        return harness_detail::dataset_slice(bundle_.privileged, 0, want);
    }

    /// Trains (or reloads) the adversarial restorer for one source/knob/seed.
    const ResidualGenerator& restorer(RestorerSource source, double fraction,
                                      double knob, uint64_t seed) {
        std::string key = restorer_key(source, fraction, knob, seed);
        auto hit = restorers_.find(key);
        if (hit != restorers_.end()) return hit->second;

        auto [dir, done] = open_cache("gan", key);
        RestoreTrainConfig rcfg;
        rcfg.iterations = cfg_.gan_iters;
        rcfg.crop = cfg_.gan_crop;
        rcfg.seed = seed;
        std::optional<ResidualGenerator> gen;
        if (done) {
            gen.emplace(rcfg.generator, seed);
            gen->params().load(dir + "/generator.clt");
        } else {
            Dataset pool = restorer_pool(source, fraction);
            std::string role =
                source == RestorerSource::Auxiliary ? "auxiliary" : "privileged";
            PairSet pairs;
            pairs.reserve(pool.size());
            for (size_t i = 0; i < pool.size(); ++i) {
                Image8 original = pool.load_image(i);
                pairs.push_back(
                    {codec_roundtrip(original, knob, nullptr), original});
            }
            ConvClassifier feat = feature_net(pool, role);  // trainable copy
            rcfg.feature_net = &feat;
            rcfg.out_dir = dir;
            gen.emplace(train_restorer(pairs, rcfg));
            finish_cache(dir);
        }
        return restorers_.emplace(key, std::move(*gen)).first->second;
    }

    /// Restored copy of a compressed dataset under one restorer.
    const Dataset& restored(const Dataset& compressed_src,
                            const std::string& role, RestorerSource source,
                            double fraction, double knob, uint64_t seed) {
        std::string key = "restored|role=" + role + "|" +
                          restorer_key(source, fraction, knob, seed);
        auto hit = restored_sets_.find(key);
        if (hit != restored_sets_.end()) return hit->second;

        auto [dir, done] = open_cache("r", key);
        Dataset out;
        if (done) {
            out = load_manifest(dir + "/manifest.json");
        } else {
            const ResidualGenerator& gen = restorer(source, fraction, knob, seed);
            out = restore_dataset(gen, compressed_src, dir);
            finish_cache(dir);
        }
        return restored_sets_.emplace(key, std::move(out)).first->second;
    }

    // ---- the cell ----------------------------------------------------------

    /// Bulk training images under the label's train treatment.
    const Dataset& treated_train(const LabelSemantics& sem, double knob,
                                 uint64_t seed) {
        switch (sem.train) {
            case Treatment::Original:
                return bundle_.seg_train;
            case Treatment::Compressed:
                return compressed(bundle_.seg_train, "seg_train", knob);
            case Treatment::Restored:
                return restored(compressed(bundle_.seg_train, "seg_train", knob),
                                "seg_train", sem.restorer,
                                sem.privileged_fraction, knob, seed);
        }
        throw UsageError("unhandled train treatment");
    }

    const Dataset& treated_eval(const LabelSemantics& sem, double knob,
                                uint64_t seed) {
        switch (sem.test) {
            case Treatment::Original:
                return bundle_.seg_eval;
            case Treatment::Compressed:
                return compressed(bundle_.seg_eval, "seg_eval", knob);
            case Treatment::Restored:
                return restored(compressed(bundle_.seg_eval, "seg_eval", knob),
                                "seg_eval", sem.restorer,
                                sem.privileged_fraction, knob, seed);
        }
        throw UsageError("unhandled test treatment");
    }

    WeightedTrainSet training_mix(const ConfigurationLabel& label,
                                  const LabelSemantics& sem, double knob,
                                  uint64_t seed) {
        size_t n = bundle_.seg_train.size();
        if (label.kind == ConfigKind::oO) {
            size_t want = static_cast<size_t>(std::llround(
                sem.privileged_fraction * static_cast<double>(n)));
            return {{harness_detail::dataset_slice(bundle_.privileged, 0, want),
                     1.0}};
        }
        if (sem.hybrid) {
            size_t priv = static_cast<size_t>(std::llround(
                sem.privileged_fraction * static_cast<double>(n)));
            WeightedTrainSet mix;
            mix.push_back(
                {harness_detail::dataset_slice(bundle_.privileged, 0, priv),
                 label.weight});
            // the remainder of the training images, treated
            const Dataset& bulk = treated_train(sem, knob, seed);
            mix.push_back(
                {harness_detail::dataset_slice(bulk, priv, n - priv), 1.0});
            return mix;
        }
        return {{treated_train(sem, knob, seed), 1.0}};
    }

    nlohmann::json config_json() const {
        std::vector<std::string> labels;
        for (const auto& l : cfg_.labels) labels.push_back(format_label(l));
        return {{"spec", cfg_.spec_id},
                {"image_size", spec_.size},
                {"seg_train", cfg_.split.seg_train},
                {"seg_eval", cfg_.split.seg_eval},
                {"restore_train", cfg_.split.restore_train},
                {"auxiliary", cfg_.split.auxiliary},
                {"privileged_fraction", cfg_.split.privileged_fraction},
                {"data_seed", cfg_.data_seed},
                {"codec", cfg_.codec_id},
                {"knobs", cfg_.knobs},
                {"labels", labels},
                {"seeds", cfg_.seeds},
                {"seg_steps", cfg_.seg_steps},
                {"seg_width", cfg_.seg_width},
                {"seg_crop", cfg_.seg_crop},
                {"seg_batch", cfg_.seg_batch},
                {"gan_iters", cfg_.gan_iters},
                {"gan_crop", cfg_.gan_crop},
                {"codec_steps", cfg_.codec_steps},
                {"analysis", cfg_.analysis}};
    }

    ExperimentRow execute_cell(const ConfigurationLabel& label, double knob,
                               uint64_t seed, CellTiming& timing) {
        namespace hd = harness_detail;
        LabelSemantics sem = label_semantics(label);
        ExperimentRow row;
        row.label = format_label(label);
        row.seed = seed;

        auto t0 = hd::Clock::now();
        WeightedTrainSet mix = training_mix(label, sem, knob, seed);
        const Dataset& eval_set = treated_eval(sem, knob, seed);
        if (sem.uses_codec) {
            CodecStats stats = compressed_stats(bundle_.seg_train, "seg_train", knob);
            row.bpp = stats.bpp;
            row.psnr_db = stats.psnr_db;
            row.msssim_db = stats.msssim_db;
        }
        row.cost_fraction = cost_fraction(label, row.bpp, bpp_lossless_);
        timing.data_s = hd::seconds_since(t0);

        t0 = hd::Clock::now();
        SegTrainConfig scfg;
        scfg.model.width = cfg_.seg_width;
        scfg.steps = cfg_.seg_steps;
        scfg.batch = cfg_.seg_batch;
        scfg.crop = cfg_.seg_crop;
        scfg.lr = cfg_.seg_lr;
        scfg.seed = seed;
        scfg.out_dir = cfg_.out_dir + "/models/" + cell_key(label, knob, seed);
        SegTrainResult trained = train_segmenter(mix, scfg);
        timing.seg_train_s = hd::seconds_since(t0);

        t0 = hd::Clock::now();
        IouReport iou = evaluate_segmenter(trained.model, eval_set);
        row.miou = iou.mean;
        row.per_class_iou.assign(iou.per_class.begin(), iou.per_class.end());
        for (size_t c = 0; c < row.per_class_iou.size(); ++c)
            if (!iou.present[c]) row.per_class_iou[c] = NAN;
        std::vector<int> small = small_class_ids(spec_);
        if (!small.empty()) {
            std::vector<int> large;
            for (int c = 1; c < spec_.num_classes; ++c)
                if (std::find(small.begin(), small.end(), c) == small.end())
                    large.push_back(c);
            row.small_group_iou = hd::group_mean_iou(row.per_class_iou, small);
            row.large_group_iou = hd::group_mean_iou(row.per_class_iou, large);
        }
        measure_inference(sem, knob, trained.model, timing);
        timing.eval_s = hd::seconds_since(t0);

        if (cfg_.analysis) {
            t0 = hd::Clock::now();
            analysis_columns(label, sem, knob, seed, row);
            timing.analysis_s = hd::seconds_since(t0);
        }
        return row;
    }

    /// Deployment-side cost of one test image: (optional codec) + predict,
    /// averaged over a fixed sample of the evaluation originals.
    void measure_inference(const LabelSemantics& sem, double knob,
                           const Unet& net, CellTiming& timing) {
        namespace hd = harness_detail;
        size_t n = std::min<size_t>(bundle_.seg_eval.size(), 20);
        double codec_s = 0.0, predict_s = 0.0;
        for (size_t i = 0; i < n; ++i) {
            Image8 im = bundle_.seg_eval.load_image(i);
            auto t0 = hd::Clock::now();
            if (sem.test == Treatment::Compressed)
                im = codec_roundtrip(im, knob, nullptr);
            auto t1 = hd::Clock::now();
            predict_map(net, im);
            codec_s += std::chrono::duration<double>(t1 - t0).count();
            predict_s += hd::seconds_since(t1);
        }
        timing.infer_codec_ms = 1e3 * codec_s / static_cast<double>(n);
        timing.infer_predict_ms = 1e3 * predict_s / static_cast<double>(n);
        timing.infer_total_ms = timing.infer_codec_ms + timing.infer_predict_ms;
    }

    /// Optional per-row analysis: covariate shift between the train and test
    /// treatments, perceptual index of the training images, and the semantic
    /// information loss of the train treatment.  Needs seg_train >= 200.
    void analysis_columns(const ConfigurationLabel& label,
                          const LabelSemantics& sem, double knob,
                          uint64_t seed, ExperimentRow& row) {
        if (bundle_.seg_train.size() < 200)
            throw UsageError(
                "analysis columns need seg_train >= 200 (two disjoint "
                "100-image halves)");
        const Dataset& train_side = treated_train(sem, knob, seed);
        // test treatment applied to held-aside *training* scenes, so both
        // C2ST sides come from the same underlying pool
        const Dataset* test_side = &bundle_.seg_train;
        if (sem.test == Treatment::Compressed)
            test_side = &compressed(bundle_.seg_train, "seg_train", knob);
        else if (sem.test == Treatment::Restored)
            test_side = &restored(compressed(bundle_.seg_train, "seg_train", knob),
                                  "seg_train", sem.restorer,
                                  sem.privileged_fraction, knob, seed);

        auto images = [](const Dataset& ds, size_t start, size_t count) {
            std::vector<Image8> v;
            v.reserve(count);
            for (size_t i = start; i < start + count; ++i)
                v.push_back(ds.load_image(i));
            return v;
        };
        C2stConfig ccfg;
        ccfg.steps = cfg_.analysis_steps;
        ccfg.seed = seed;
        row.shift_proxy =
            covariate_shift(images(train_side, 0, 100), images(*test_side, 100, 100),
                            ccfg)
                .divergence;
        row.perceptual_index =
            perceptual_index(images(train_side, 0, 100),
                             images(bundle_.seg_train, 100, 100), ccfg)
                .success_rate;

        SemLossConfig mcfg;
        mcfg.steps = cfg_.analysis_steps;
        row.s_hat = semantic_info_loss(
                        bundle_.seg_train, train_side,
                        cell_class_extractor(spec_.num_classes, cfg_.semloss_cell),
                        mcfg)
                        .s_hat;
        (void)label;
    }

    std::vector<MedianRow> aggregate_medians(
        const std::vector<ExperimentRow>& rows) const {
        namespace hd = harness_detail;
        std::vector<MedianRow> out;
        for (const auto& label : cfg_.labels)
            for (double knob : cfg_.knobs) {
                MedianRow m;
                m.label = format_label(label);
                m.knob = knob;
                std::vector<double> miou, small, large;
                for (const auto& r : rows) {
                    if (r.label != m.label || r.knob != knob || r.failed)
                        continue;
                    ++m.n_ok;
                    miou.push_back(r.miou);
                    if (!std::isnan(r.small_group_iou))
                        small.push_back(r.small_group_iou);
                    if (!std::isnan(r.large_group_iou))
                        large.push_back(r.large_group_iou);
                    m.bpp = r.bpp;
                    m.cost_fraction = r.cost_fraction;
                }
                m.miou = hd::median(miou);
                m.small_group_iou = hd::median(small);
                m.large_group_iou = hd::median(large);
                out.push_back(m);
            }
        return out;
    }

    ExperimentConfig cfg_;
    SceneSpec spec_;
    DatasetBundle bundle_;
    double bpp_lossless_ = 0.0;

    std::map<double, LearnedCodecModel> learned_models_;
    std::map<std::string, std::pair<Dataset, CodecStats>> compressed_sets_;
    std::map<std::string, ConvClassifier> feature_nets_;
    std::map<std::string, ResidualGenerator> restorers_;
    std::map<std::string, Dataset> restored_sets_;
    std::map<std::string, CellTiming> timings_;
};

/// Rows for every seed of one (label, knob) cell group.
inline std::vector<ExperimentRow> run_configuration(
    const ConfigurationLabel& label, double knob, const ExperimentConfig& cfg) {
    ExperimentConfig one = cfg;
    one.labels = {label};
    one.knobs = {knob};
    MatrixRunner runner(one);
    return runner.run_configuration(label, knob);
}

/// The full matrix; writes report.json + timing.json under cfg.out_dir.
inline ExperimentReport run_matrix(const ExperimentConfig& cfg) {
    MatrixRunner runner(cfg);
    return runner.run_matrix();
}

}  // namespace clab
