#pragma once

#include <algorithm>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "compresslab/core/adam.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/nn/classifier.hpp"

// Classifier two-sample test (C2ST).
//
// Distribution distance between two image sets is measured by how well a
// small conv classifier can tell them apart: each set is split in half, an
// A-vs-B classifier trains on the first halves, and the held-out accuracy is
// reported.  0.5 means the sets are indistinguishable at this capacity; 1.0
// means every held-out image is identified.  The same machinery serves two
// readings: covariate_shift() between a training and a test distribution,
// and perceptual_index() of a candidate set against real images, where the
// discriminator's success rate is the index.  A derived divergence proxy
// 2*accuracy - 1 (clipped to [0, 1]) is attached for convenience.

namespace clab {

struct C2stConfig {
    /// Two-logit classifier; depth 3 suffices for desk-scale scenes.
    ClassifierConfig classifier;
    long steps = 300;
    int batch = 16;  // even; half drawn from each set
    float lr = 1e-3f;
    uint64_t seed = 7;
};

struct ShiftReport {
    double accuracy = 0.0;    // held-out A-vs-B accuracy
    double divergence = 0.0;  // clip(2*accuracy - 1, 0, 1)
    int n_samples = 0;        // held-out images the accuracy was measured on
    uint64_t seed = 0;
    std::string method = "c2st";
};

struct PerceptualIndexReport {
    double success_rate = 0.0;  // discriminator accuracy, candidate vs. real
    int n_samples = 0;
    uint64_t seed = 0;
    std::string method = "c2st";
};

inline void to_json(nlohmann::json& j, const ShiftReport& r) {
    j = {{"accuracy", r.accuracy},
         {"divergence", r.divergence},
         {"n_samples", r.n_samples},
         {"seed", r.seed},
         {"method", r.method}};
}

inline void to_json(nlohmann::json& j, const PerceptualIndexReport& r) {
    j = {{"success_rate", r.success_rate},
         {"n_samples", r.n_samples},
         {"seed", r.seed},
         {"method", r.method}};
}

namespace analysis_detail {

inline void check_c2st_inputs(const std::vector<Image8>& a,
                              const std::vector<Image8>& b,
                              const C2stConfig& cfg) {
    if (a.size() < 100 || b.size() < 100)
        throw UsageError("two-sample test needs at least 100 images per set, "
                         "got " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    if (cfg.steps < 1) throw UsageError("steps must be positive");
    if (cfg.batch < 2 || cfg.batch % 2 != 0)
        throw UsageError("batch must be even so both sets are represented");
    int side = a.front().width;
    int div = 1 << cfg.classifier.blocks;
    if (side % div != 0)
        throw UsageError("image side must be divisible by " +
                         std::to_string(div) + " for a " +
                         std::to_string(cfg.classifier.blocks) +
                         "-block classifier, got " + std::to_string(side));
    for (const auto* set : {&a, &b})
        for (const auto& im : *set)
            if (im.width != side || im.height != side || im.channels != 3)
                throw UsageError("two-sample test needs same-size square RGB "
                                 "images across both sets");
}

/// Fills a [n,3,s,s] batch from pre-converted [1,3,s,s] tensors.
inline Tensor gather(const std::vector<Tensor>& pool,
                     const std::vector<int>& idx) {
    int s = pool.front().dim(2);
    int64_t plane = static_cast<int64_t>(3) * s * s;
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), 3, s, s});
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * plane,
                    pool[idx[i]].data(), sizeof(float) * plane);
    return out;
}

/// Core C2ST: trains an A-vs-B classifier on half of each set and returns
/// (held-out accuracy, held-out count).  Deterministic in cfg.seed.
inline std::pair<double, int> c2st_accuracy(const std::vector<Image8>& a,
                                            const std::vector<Image8>& b,
                                            const C2stConfig& cfg) {
    check_c2st_inputs(a, b, cfg);

    std::vector<Tensor> ta, tb;
    ta.reserve(a.size());
    tb.reserve(b.size());
    for (const auto& im : a) ta.push_back(image_to_signed(im));
    for (const auto& im : b) tb.push_back(image_to_signed(im));

    Rng rng = Rng(cfg.seed).fork("c2st");
    auto split = [&](size_t n) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (size_t i = n - 1; i > 0; --i)
            std::swap(idx[i], idx[rng.uniform_int(static_cast<int>(i) + 1)]);
        std::vector<int> train(idx.begin(), idx.begin() + n / 2);
        std::vector<int> held(idx.begin() + n / 2, idx.end());
        return std::make_pair(train, held);
    };
    auto [train_a, held_a] = split(a.size());
    auto [train_b, held_b] = split(b.size());

    ClassifierConfig cc = cfg.classifier;
    cc.num_classes = 2;
    ConvClassifier net(cc, cfg.seed);
    Adam opt(net.params().tensors(),
             AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f, {}});

    int half = cfg.batch / 2;
    int side = a.front().width;
    int64_t plane = static_cast<int64_t>(3) * side * side;
    std::vector<int> labels(cfg.batch);
    for (int i = 0; i < cfg.batch; ++i) labels[i] = i < half ? 0 : 1;
    for (long step = 0; step < cfg.steps; ++step) {
        Tensor x = Tensor::zeros({cfg.batch, 3, side, side});
        for (int i = 0; i < cfg.batch; ++i) {
            const auto& pool = i < half ? ta : tb;
            const auto& train = i < half ? train_a : train_b;
            int pick = train[rng.uniform_int(static_cast<int>(train.size()))];
            std::memcpy(x.data() + i * plane, pool[pick].data(),
                        sizeof(float) * plane);
        }
        Tape tape;
        Tensor loss = softmax_cross_entropy(&tape, net.forward(&tape, x),
                                            labels, /*ignore_id=*/2);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }

    long correct = 0, total = 0;
    auto score = [&](const std::vector<Tensor>& pool,
                     const std::vector<int>& held, int truth) {
        for (size_t at = 0; at < held.size(); at += 32) {
            size_t n = std::min<size_t>(32, held.size() - at);
            std::vector<int> chunk(held.begin() + at, held.begin() + at + n);
            for (int id : net.predict(gather(pool, chunk)))
                if (id == truth) ++correct;
            total += static_cast<long>(n);
        }
    };
    score(ta, held_a, 0);
    score(tb, held_b, 1);
    return {static_cast<double>(correct) / static_cast<double>(total),
            static_cast<int>(total)};
}

}  // namespace analysis_detail

/// Covariate-shift estimate between two image sets: the held-out accuracy of
/// an A-vs-B classifier, 0.5 meaning no detectable shift.
inline ShiftReport covariate_shift(const std::vector<Image8>& a,
                                   const std::vector<Image8>& b,
                                   const C2stConfig& cfg = {}) {
    auto [acc, n] = analysis_detail::c2st_accuracy(a, b, cfg);
    ShiftReport r;
    r.accuracy = acc;
    r.divergence = std::clamp(2.0 * acc - 1.0, 0.0, 1.0);
    r.n_samples = n;
    r.seed = cfg.seed;
    return r;
}

/// Perceptual index of a candidate set against real images: the success
/// rate of a discriminator told to separate them.  Chance (0.5) means the
/// candidates are perceptually indistinguishable from real at this capacity.
inline PerceptualIndexReport perceptual_index(const std::vector<Image8>& candidate,
                                              const std::vector<Image8>& real,
                                              const C2stConfig& cfg = {}) {
    auto [acc, n] = analysis_detail::c2st_accuracy(candidate, real, cfg);
    PerceptualIndexReport r;
    r.success_rate = acc;
    r.n_samples = n;
    r.seed = cfg.seed;
    return r;
}

}  // namespace clab
