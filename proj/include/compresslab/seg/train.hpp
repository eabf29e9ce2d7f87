#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "compresslab/core/adam.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/metrics/miou.hpp"
#include "compresslab/nn/unet.hpp"

// Weighted-hybrid segmentation training.
//
// A training mix is a list of (dataset, loss_weight) pairs.  Samples are
// drawn uniformly over the union of all entries -- so each dataset
// contributes in proportion to its size -- and every sample's per-pixel
// cross-entropy is scaled by its dataset's weight.  This is how a small
// privileged set can be mixed into a larger degraded set at, say, 5:1
// emphasis without duplicating files on disk.
//
// The trainer logs, per step, the optimized weighted loss plus the
// unweighted cross-entropy of each mix component (NaN when a component
// contributed no sample to that batch), so hybrid runs expose how each
// source behaves.  Void label id K is excluded from the loss; any id >= K
// encountered in a label map is a data error naming the offending file.

namespace clab {

/// One training source: a dataset and the weight its per-sample loss carries.
struct WeightedSet {
    Dataset data;
    double weight = 1.0;
};

using WeightedTrainSet = std::vector<WeightedSet>;

struct SegTrainConfig {
    /// num_classes may be left 0 to adopt the datasets' class count.
    UnetConfig model{16, 0};
    long steps = 15000;
    int batch = 4;
    int crop = 64;  // square crop side; must be a multiple of 16
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    bool cosine_decay = true;
    uint64_t seed = 1;
    /// When set, receives seg_loss.csv and segmenter.clt.
    std::string out_dir;
    /// Optional per-step observer: (step, weighted total, per-source CE).
    std::function<void(long, double, const std::vector<double>&)> on_step;
};

struct SegStepLog {
    long step = 0;
    double lr = 0.0;     // learning rate applied at this step
    double total = 0.0;  // weighted loss actually optimized
    /// Unweighted mean cross-entropy per mix component; NaN when the
    /// component had no sample in this step's batch.
    std::vector<double> component;
};

struct SegTrainResult {
    Unet model;
    std::vector<SegStepLog> log;
};

namespace seg_detail {

struct LoadedSet {
    std::vector<Image8> images;
    std::vector<SegMap> labels;
    float weight = 1.0f;
};

/// Loads one source into memory, enforcing that every label map matches its
/// image and uses only ids < K.  Errors name the offending file.
inline LoadedSet load_set(const WeightedSet& ws, int crop) {
    LoadedSet out;
    out.weight = static_cast<float>(ws.weight);
    for (size_t i = 0; i < ws.data.size(); ++i) {
        Image8 im = ws.data.load_image(i);
        SegMap lab = ws.data.load_labels(i);
        const std::string name = ws.data.label_path(i);
        if (im.width != lab.width || im.height != lab.height)
            throw DataError("label dims do not match image for " + name);
        if (im.channels != 3)
            throw DataError("segmentation training expects RGB images, got " +
                            std::to_string(im.channels) + " channels for " +
                            ws.data.image_path(i));
        for (uint8_t id : lab.ids)
            if (id >= ws.data.num_classes)
                throw DataError("label id " + std::to_string(id) +
                                " is outside the " +
                                std::to_string(ws.data.num_classes) +
                                "-class range in " + name);
        if (im.width < crop || im.height < crop)
            throw UsageError("image " + ws.data.image_path(i) +
                             " is smaller than the training crop");
        out.images.push_back(std::move(im));
        out.labels.push_back(std::move(lab));
    }
    return out;
}

/// Copies a (possibly h-flipped) square window into a [3,s,s] plane block,
/// mapping bytes to [0, 1].
inline void copy_window(const Image8& im, int y0, int x0, int s, bool flip,
                        float* dst) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                int sx = flip ? x0 + s - 1 - x : x0 + x;
                dst[(static_cast<int64_t>(c) * s + y) * s + x] =
                    static_cast<float>(im.at(y0 + y, sx, c)) / 255.0f;
            }
}

inline void copy_labels(const SegMap& m, int y0, int x0, int s, bool flip,
                        int* dst) {
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            int sx = flip ? x0 + s - 1 - x : x0 + x;
            dst[static_cast<int64_t>(y) * s + x] =
                m.ids[static_cast<size_t>(y0 + y) * m.width + sx];
        }
}

inline void validate(const WeightedTrainSet& train, const SegTrainConfig& cfg) {
    if (train.empty())
        throw UsageError("training mix is empty");
    size_t total = 0;
    for (const auto& ws : train) {
        if (!(ws.weight > 0.0))
            throw UsageError("loss weights must be positive");
        if (ws.data.num_classes != train.front().data.num_classes)
            throw UsageError("training mix spans different class counts: " +
                             std::to_string(ws.data.num_classes) + " vs " +
                             std::to_string(train.front().data.num_classes));
        total += ws.data.size();
    }
    if (total == 0)
        throw UsageError("training mix has no samples");
    int K = train.front().data.num_classes;
    if (cfg.model.num_classes != 0 && cfg.model.num_classes != K)
        throw UsageError("model expects " +
                         std::to_string(cfg.model.num_classes) +
                         " classes but the data has " + std::to_string(K));
    if (cfg.steps < 1) throw UsageError("steps must be positive");
    if (cfg.batch < 1) throw UsageError("batch must be positive");
    if (cfg.crop < 16 || cfg.crop % 16 != 0)
        throw UsageError("crop must be a positive multiple of 16");
}

}  // namespace seg_detail

/// Trains a segmenter on a weighted dataset mix.  Sampling is uniform over
/// the union of entries (proportional to dataset sizes); each sample's
/// cross-entropy is scaled by its source's weight.  Returns the model and
/// the per-step loss log.
inline SegTrainResult train_segmenter(const WeightedTrainSet& train,
                                      const SegTrainConfig& cfg) {
    seg_detail::validate(train, cfg);
    int K = train.front().data.num_classes;
    int s = cfg.crop;

    std::vector<seg_detail::LoadedSet> sets;
    std::vector<std::pair<int, int>> flat;  // (source, entry)
    for (const auto& ws : train) {
        sets.push_back(seg_detail::load_set(ws, s));
        int si = static_cast<int>(sets.size()) - 1;
        for (size_t i = 0; i < ws.data.size(); ++i)
            flat.emplace_back(si, static_cast<int>(i));
    }
    int S = static_cast<int>(sets.size());

    UnetConfig mc = cfg.model;
    mc.num_classes = K;
    Unet net(mc, cfg.seed);
    Adam opt(net.params().tensors(),
             AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f, {}});
    Rng rng = Rng(cfg.seed).fork("seg-train");

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        csv.open(cfg.out_dir + "/seg_loss.csv");
        csv.precision(std::numeric_limits<double>::max_digits10);
        csv << "step,lr,total";
        for (int i = 0; i < S; ++i) csv << ",loss_" << i;
        csv << "\n";
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<SegStepLog> log;
    log.reserve(static_cast<size_t>(cfg.steps));

    for (long step = 1; step <= cfg.steps; ++step) {
        if (cfg.cosine_decay)
            opt.set_lr_scale(static_cast<float>(
                0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step - 1) /
                                      static_cast<double>(cfg.steps)))));
        double lr = opt.next_lr();

        Tensor x = Tensor::zeros({cfg.batch, 3, s, s});
        std::vector<int> labels(static_cast<size_t>(cfg.batch) * s * s);
        std::vector<float> weights(cfg.batch);
        std::vector<int> slot_source(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b) {
            auto [si, ei] = flat[rng.uniform_int(static_cast<int>(flat.size()))];
            const Image8& im = sets[si].images[ei];
            int y0 = rng.uniform_int(im.height - s + 1);
            int x0 = rng.uniform_int(im.width - s + 1);
            bool flip = rng.coin();
            seg_detail::copy_window(im, y0, x0, s, flip,
                                    x.data() + static_cast<int64_t>(b) * 3 * s * s);
            seg_detail::copy_labels(sets[si].labels[ei], y0, x0, s, flip,
                                    labels.data() + static_cast<int64_t>(b) * s * s);
            weights[b] = sets[si].weight;
            slot_source[b] = si;
        }

        Tape tape;
        Tensor logits = net.forward(&tape, x);
        Tensor loss = softmax_cross_entropy(&tape, logits, labels, K, weights);
        double total = loss.data()[0];
        if (!std::isfinite(total))
            throw TrainingError("segmentation training diverged", step);

        // Unweighted per-source cross-entropy over this batch, computed by
        // voiding every slot the source did not fill (forward only).
        std::vector<double> comp(static_cast<size_t>(S), nan);
        for (int i = 0; i < S; ++i) {
            bool drawn = false;
            for (int b = 0; b < cfg.batch; ++b)
                if (slot_source[b] == i) drawn = true;
            if (!drawn) continue;
            std::vector<int> only = labels;
            for (int b = 0; b < cfg.batch; ++b)
                if (slot_source[b] != i)
                    std::fill(only.begin() + static_cast<int64_t>(b) * s * s,
                              only.begin() + static_cast<int64_t>(b + 1) * s * s,
                              K);
            comp[i] = softmax_cross_entropy(nullptr, logits, only, K).data()[0];
        }

        opt.zero_grad();
        tape.backward(loss);
        opt.step();

        if (csv.is_open()) {
            csv << step << "," << lr << "," << total;
            for (double c : comp) {
                csv << ",";
                if (std::isfinite(c)) csv << c;
            }
            csv << "\n";
        }
        log.push_back({step, lr, total, comp});
        if (cfg.on_step) cfg.on_step(step, total, comp);
    }

    if (!cfg.out_dir.empty()) net.params().save(cfg.out_dir + "/segmenter.clt");
    return SegTrainResult{std::move(net), std::move(log)};
}

/// Per-pixel argmax segmentation of an RGB image of any size.  Inputs whose
/// sides are not multiples of 16 are reflection-padded for the forward pass
/// and the logits cropped back, so output dims always equal input dims.
/// Deterministic and side-effect free.
inline SegMap predict_map(const Unet& net, const Image8& im) {
    if (im.channels != 3)
        throw DimensionError("predict_map expects an RGB image, got " +
                             std::to_string(im.channels) + " channels");
    int H = im.height, W = im.width;
    int PH = std::max(16, (H + 15) / 16 * 16);
    int PW = std::max(16, (W + 15) / 16 * 16);
    Tensor x = image_to_tensor(im);
    if (PH != H || PW != W)
        x = reflection_pad2d_asym(nullptr, x, 0, PH - H, 0, PW - W);
    std::vector<int> ids = net.predict(x);
    SegMap out = SegMap::make(W, H, net.config().num_classes);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            out.ids[static_cast<size_t>(y) * W + xx] =
                static_cast<uint8_t>(ids[static_cast<size_t>(y) * PW + xx]);
    return out;
}

/// Runs the model over every image of a dataset and aggregates one global
/// confusion matrix (images are independent; the sequential reduction is
/// deterministic).  When csv_path is set, writes one per-class IoU row per
/// class plus a final mean row.
inline IouReport evaluate_segmenter(const Unet& net, const Dataset& ds,
                                    const std::string& csv_path = "") {
    if (ds.size() == 0) throw UsageError("evaluation dataset is empty");
    int K = net.config().num_classes;
    if (ds.num_classes != K)
        throw UsageError("model has " + std::to_string(K) +
                         " classes but the dataset has " +
                         std::to_string(ds.num_classes));
    ConfusionMatrix cm(K);
    for (size_t i = 0; i < ds.size(); ++i) {
        SegMap gt = ds.load_labels(i);
        SegMap pred = predict_map(net, ds.load_image(i));
        cm.add(gt, pred);
    }
    IouReport rep = cm.report();
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw DataError("cannot write " + csv_path);
        csv.precision(std::numeric_limits<double>::max_digits10);
        csv << "class,iou\n";
        for (int k = 0; k < K; ++k) {
            csv << k << ",";
            if (rep.present[k]) csv << rep.per_class[k];
            csv << "\n";
        }
        csv << "mean," << rep.mean << "\n";
    }
    return rep;
}

}  // namespace clab
