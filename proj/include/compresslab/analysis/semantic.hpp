#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "compresslab/core/adam.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/core/png_io.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/nn/classifier.hpp"

// Semantic information loss.
//
// For synthetic scenes the latent Y behind each image is known exactly, so
// the label information an encoding destroys can be estimated directly:
//   I(X; Y)  >=  H(Y) - CE(Y | probe(X))
// where the probe is a small fixed-capacity classifier trained on a disjoint
// split.  The loss of a degraded variant X-hat is then
//   S = I(X; Y) - I(X-hat; Y),
// non-negative in expectation by the data processing inequality.  The same
// probe capacity is used on both sides so the difference is comparable.
//
// The default task reads Y as "class of the object occupying a designated
// position cell, or `none` when background shows there"; occlusion is
// resolved the same way the scene itself resolves it, by consulting the
// rendered ground-truth label at the cell centre.  The probe sees a crop
// centred on the cell, and samples are pooled over a handful of designated
// cells per scene for statistical weight (scenes never straddle the
// train/held split).  Estimates are repeated over several seeds (splits +
// probe init) and reported with a confidence halfwidth, since single-seed
// differences at desk scale are noisy.

namespace clab {

/// Maps one dataset entry (by index, so label files can be resolved against
/// the dataset root) and one position cell to a finite semantic label.
struct YExtractor {
    int num_labels = 0;
    /// Every entry contributes one sample per designated 4x4 position cell,
    /// with the probe input cropped around that cell.  Empty = one sample
    /// per entry on the full image (label is called with cell -1).
    std::vector<int> cells;
    std::function<int(const Dataset&, size_t, int cell)> label;
};

/// Y = class id of the object visible at the centre of a position cell, or
/// 0 ("none") when background shows there; object classes 1..K-1 keep their
/// ids.  The ground-truth label map resolves occlusion exactly, so this is
/// the class an oracle would report for that position.  The default cells
/// are the four central ones, where objects actually land.
inline YExtractor cell_class_extractor(int num_classes,
                                       std::vector<int> cells = {5, 6, 9, 10}) {
    if (num_classes < 2) throw UsageError("extractor needs num_classes >= 2");
    if (cells.empty()) throw UsageError("extractor needs >= 1 position cell");
    for (int cell : cells)
        if (cell < 0 || cell >= kPositionCells)
            throw UsageError("position cell must be in [0, " +
                             std::to_string(kPositionCells) + ")");
    YExtractor y;
    y.num_labels = num_classes;
    y.cells = std::move(cells);
    y.label = [num_classes](const Dataset& ds, size_t i, int cell) {
        SegMap truth = read_label_png(ds.label_path(i), num_classes);
        int x = std::min((cell % 4 * 2 + 1) * truth.width / 8, truth.width - 1);
        int row = std::min((cell / 4 * 2 + 1) * truth.height / 8, truth.height - 1);
        return static_cast<int>(truth.ids[static_cast<size_t>(row) * truth.width + x]);
    };
    return y;
}

struct SemLossConfig {
    /// Fixed-capacity probe shared by both estimates.
    ClassifierConfig probe;
    long steps = 400;
    int batch = 16;
    float lr = 1e-3f;
    int crop = 32;  // probe input side when the extractor names a cell
    std::vector<uint64_t> seeds = {1, 2, 3};
};

struct SemanticLossReport {
    double h_y = 0.0;          // bits, empirical over the held-out labels
    double mi_original = 0.0;  // bits, clipped to [0, h_y]
    double mi_degraded = 0.0;
    double s_hat = 0.0;        // mi_original - mi_degraded
    double raw_mi_original = 0.0;  // unclipped H(Y) - CE readings
    double raw_mi_degraded = 0.0;
    double ci_halfwidth = 0.0;  // half the seed-to-seed range of s_hat
    std::vector<uint64_t> seeds;
    std::vector<int> cells;
    int n_eval = 0;  // held-out samples per seed (entries x cells / 2)
    std::string estimator = "hy-minus-ce-probe";
};

inline void to_json(nlohmann::json& j, const SemanticLossReport& r) {
    j = {{"h_y", r.h_y},
         {"mi_original", r.mi_original},
         {"mi_degraded", r.mi_degraded},
         {"s_hat", r.s_hat},
         {"raw_mi_original", r.raw_mi_original},
         {"raw_mi_degraded", r.raw_mi_degraded},
         {"ci_halfwidth", r.ci_halfwidth},
         {"seeds", r.seeds},
         {"cells", r.cells},
         {"n_eval", r.n_eval},
         {"estimator", r.estimator}};
}

namespace analysis_detail {

/// Probe input for one image: the cell-centred crop in [-1, 1], or the whole
/// image when no cell is designated.
inline Tensor probe_input(const Image8& im, int cell, int crop) {
    if (cell < 0) return image_to_signed(im);
    int col = cell % 4, row = cell / 4;
    double cx = (col + 0.5) * im.width / 4.0;
    double cy = (row + 0.5) * im.height / 4.0;
    int x0 = std::clamp(static_cast<int>(std::lround(cx - crop / 2.0)), 0,
                        im.width - crop);
    int y0 = std::clamp(static_cast<int>(std::lround(cy - crop / 2.0)), 0,
                        im.height - crop);
    return signed_crop(im, y0, x0, crop, false);
}

/// Trains a fresh probe on the train split and returns the held-out
/// cross-entropy in bits.
inline double probe_heldout_ce_bits(const std::vector<Tensor>& inputs,
                                    const std::vector<int>& labels,
                                    const std::vector<int>& train,
                                    const std::vector<int>& held,
                                    int num_labels, const SemLossConfig& cfg,
                                    uint64_t seed) {
    ClassifierConfig pc = cfg.probe;
    pc.num_classes = num_labels;
    ConvClassifier probe(pc, seed);
    Adam opt(probe.params().tensors(),
             AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f, {}});
    Rng rng = Rng(seed).fork("semloss-train");

    int side = inputs.front().dim(2);
    int64_t plane = static_cast<int64_t>(3) * side * side;
    for (long step = 0; step < cfg.steps; ++step) {
        Tensor x = Tensor::zeros({cfg.batch, 3, side, side});
        std::vector<int> y(cfg.batch);
        for (int i = 0; i < cfg.batch; ++i) {
            int pick = train[rng.uniform_int(static_cast<int>(train.size()))];
            std::memcpy(x.data() + i * plane, inputs[pick].data(),
                        sizeof(float) * plane);
            y[i] = labels[pick];
        }
        Tape tape;
        Tensor loss = softmax_cross_entropy(&tape, probe.forward(&tape, x), y,
                                            /*ignore_id=*/num_labels);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }

    double nats_sum = 0.0;
    for (size_t at = 0; at < held.size(); at += 32) {
        size_t n = std::min<size_t>(32, held.size() - at);
        Tensor x = Tensor::zeros({static_cast<int>(n), 3, side, side});
        std::vector<int> y(n);
        for (size_t i = 0; i < n; ++i) {
            std::memcpy(x.data() + static_cast<int64_t>(i) * plane,
                        inputs[held[at + i]].data(), sizeof(float) * plane);
            y[i] = labels[held[at + i]];
        }
        Tensor ce = softmax_cross_entropy(nullptr, probe.forward(nullptr, x), y,
                                          num_labels);
        nats_sum += static_cast<double>(ce.data()[0]) * static_cast<double>(n);
    }
    return nats_sum / static_cast<double>(held.size()) / std::log(2.0);
}

inline double entropy_bits(const std::vector<int>& labels,
                           const std::vector<int>& subset, int num_labels) {
    std::vector<long> freq(num_labels, 0);
    for (int i : subset) freq[labels[i]]++;
    double h = 0.0;
    for (long f : freq) {
        if (f == 0) continue;
        double p = static_cast<double>(f) / static_cast<double>(subset.size());
        h -= p * std::log2(p);
    }
    return h;
}

}  // namespace analysis_detail

/// Estimates how much label information a degraded dataset lost relative to
/// its paired originals.  Both datasets must carry latents and describe the
/// same underlying scenes (entry for entry).
inline SemanticLossReport semantic_info_loss(const Dataset& originals,
                                             const Dataset& degradeds,
                                             const YExtractor& y,
                                             const SemLossConfig& cfg = {}) {
    if (!originals.has_latent || !degradeds.has_latent)
        throw DataError("semantic information loss needs latent-bearing "
                        "(synthetic) datasets");
    if (originals.size() != degradeds.size())
        throw UsageError("datasets are not paired: " +
                         std::to_string(originals.size()) + " vs " +
                         std::to_string(degradeds.size()) + " entries");
    for (size_t i = 0; i < originals.size(); ++i)
        if (originals.entries[i].seed != degradeds.entries[i].seed)
            throw UsageError("datasets are not paired: scene seeds differ at "
                             "entry " + std::to_string(i));
    if (!y.label || y.num_labels < 2)
        throw UsageError("label extractor is not configured");
    if (originals.size() < 16)
        throw UsageError("need at least 16 paired images, got " +
                         std::to_string(originals.size()));
    if (cfg.seeds.empty()) throw UsageError("need at least one seed");
    int div = 1 << cfg.probe.blocks;
    if (!y.cells.empty() && (cfg.crop < div || cfg.crop % div != 0))
        throw UsageError("probe crop must be a positive multiple of " +
                         std::to_string(div));

    // One sample per (entry, designated cell); a whole-image extractor
    // contributes one sample per entry.  Scenes stay intact across the
    // train/held split so the probe never sees a held scene's siblings.
    std::vector<int> cells = y.cells.empty() ? std::vector<int>{-1} : y.cells;
    int n = static_cast<int>(originals.size());
    int per_entry = static_cast<int>(cells.size());
    std::vector<int> labels;
    std::vector<Tensor> in_orig, in_deg;
    labels.reserve(static_cast<size_t>(n) * per_entry);
    in_orig.reserve(labels.capacity());
    in_deg.reserve(labels.capacity());
    for (int i = 0; i < n; ++i) {
        Image8 orig = originals.load_image(static_cast<size_t>(i));
        Image8 deg = degradeds.load_image(static_cast<size_t>(i));
        for (int cell : cells) {
            int lab = y.label(originals, static_cast<size_t>(i), cell);
            if (lab < 0 || lab >= y.num_labels)
                throw UsageError("extractor produced label " +
                                 std::to_string(lab) + " outside [0, " +
                                 std::to_string(y.num_labels) + ")");
            labels.push_back(lab);
            in_orig.push_back(analysis_detail::probe_input(orig, cell, cfg.crop));
            in_deg.push_back(analysis_detail::probe_input(deg, cell, cfg.crop));
        }
    }

    SemanticLossReport rep;
    rep.seeds = cfg.seeds;
    rep.cells = y.cells;
    std::vector<double> s_per_seed;
    for (uint64_t seed : cfg.seeds) {
        Rng rng = Rng(seed).fork("semloss-split");
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = n - 1; i > 0; --i)
            std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
        std::vector<int> train, held;
        for (int at = 0; at < n; ++at)
            for (int c = 0; c < per_entry; ++c)
                (at < n / 2 ? train : held).push_back(idx[at] * per_entry + c);

        double h = analysis_detail::entropy_bits(labels, held, y.num_labels);
        double raw_o = h - analysis_detail::probe_heldout_ce_bits(
                               in_orig, labels, train, held, y.num_labels, cfg,
                               seed);
        double raw_d = h - analysis_detail::probe_heldout_ce_bits(
                               in_deg, labels, train, held, y.num_labels, cfg,
                               seed);
        double mi_o = std::clamp(raw_o, 0.0, h);
        double mi_d = std::clamp(raw_d, 0.0, h);
        rep.h_y += h;
        rep.raw_mi_original += raw_o;
        rep.raw_mi_degraded += raw_d;
        rep.mi_original += mi_o;
        rep.mi_degraded += mi_d;
        s_per_seed.push_back(mi_o - mi_d);
        rep.n_eval = static_cast<int>(held.size());
    }
    double ns = static_cast<double>(cfg.seeds.size());
    rep.h_y /= ns;
    rep.raw_mi_original /= ns;
    rep.raw_mi_degraded /= ns;
    rep.mi_original /= ns;
    rep.mi_degraded /= ns;
    auto [lo, hi] = std::minmax_element(s_per_seed.begin(), s_per_seed.end());
    rep.s_hat = std::accumulate(s_per_seed.begin(), s_per_seed.end(), 0.0) / ns;
    rep.ci_halfwidth = (*hi - *lo) / 2.0;
    return rep;
}

}  // namespace clab
