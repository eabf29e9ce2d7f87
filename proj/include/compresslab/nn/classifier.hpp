#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// Compact convolutional classifier.  Each block is a 3x3 conv + ReLU
// followed by 2x2 average pooling; a global average pool and a 1x1
// projection produce the class logits.  The same net serves three roles at
// different depths:
//   - 3 blocks: two-sample tests (shift detection, perceptual index)
//   - 3 blocks: the semantic probe used to estimate label information
//   - 5 blocks: the frozen feature extractor distilled into the restorer,
//     where the per-block activations are the features being matched.

namespace clab {

struct ClassifierConfig {
    int in_ch = 3;
    int width = 16;       // first block's channels; doubles up to 4x width
    int blocks = 3;       // conv+pool stages
    int num_classes = 2;  // logit count
};

class ConvClassifier {
public:
    explicit ConvClassifier(ClassifierConfig cfg = {}, uint64_t seed = 5)
        : cfg_(cfg) {
        if (cfg.blocks < 1 || cfg.width < 1 || cfg.in_ch < 1)
            throw UsageError("classifier config values must be positive");
        if (cfg.num_classes < 2)
            throw UsageError("classifier needs num_classes >= 2");
        Rng rng(seed);
        int in_ch = cfg.in_ch;
        for (int i = 0; i < cfg.blocks; ++i) {
            int out_ch = cfg.width * std::min(1 << i, 4);
            conv_.emplace_back(ps_, "c.b" + std::to_string(i), in_ch, out_ch, 3,
                               1, 1, rng);
            in_ch = out_ch;
        }
        head_ = Conv2d(ps_, "c.head", in_ch, cfg.num_classes, 1, 1, 0, rng);
    }

    /// Logits [N, num_classes, 1, 1]; input [N,C,H,W] with H, W divisible
    /// by 2^blocks.
    Tensor forward(Tape* tape, const Tensor& x) const {
        return run(tape, x, nullptr);
    }

    /// Per-block post-ReLU activations (pre-pool), shallowest first.
    std::vector<Tensor> features(Tape* tape, const Tensor& x) const {
        std::vector<Tensor> taps;
        run(tape, x, &taps);
        return taps;
    }

    /// Argmax class per sample.
    std::vector<int> predict(const Tensor& x) const {
        Tensor logits = run(nullptr, x, nullptr);
        int N = logits.dim(0), K = logits.dim(1);
        std::vector<int> ids(N);
        const float* d = logits.data();
        for (int n = 0; n < N; ++n) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (d[static_cast<int64_t>(n) * K + k] >
                    d[static_cast<int64_t>(n) * K + best])
                    best = k;
            ids[n] = best;
        }
        return ids;
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const ClassifierConfig& config() const { return cfg_; }

private:
    Tensor run(Tape* tape, const Tensor& x, std::vector<Tensor>* taps) const {
        if (x.ndim() != 4 || x.dim(1) != cfg_.in_ch)
            throw DimensionError("classifier expects [N," +
                                 std::to_string(cfg_.in_ch) + ",H,W], got " +
                                 shape_str(x.shape()));
        int div = 1 << cfg_.blocks;
        if (x.dim(2) != x.dim(3) || x.dim(2) % div != 0)
            throw DimensionError("classifier with " + std::to_string(cfg_.blocks) +
                                 " blocks needs square H,W divisible by " +
                                 std::to_string(div) + ", got " +
                                 shape_str(x.shape()));
        Tensor h = x;
        for (const auto& conv : conv_) {
            h = relu(tape, conv.forward(tape, h));
            if (taps) taps->push_back(h);
            h = avg_pool2d(tape, h, 2, 2);
        }
        // global average pool to 1x1, then project to logits
        h = avg_pool2d(tape, h, h.dim(2), 1);
        return head_.forward(tape, h);
    }

    ClassifierConfig cfg_;
    ParamStore ps_;
    std::vector<Conv2d> conv_;
    Conv2d head_;
};

}  // namespace clab
