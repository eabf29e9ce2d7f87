#pragma once

#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// U-Net semantic segmenter.  Four stride-2 encoder stages with skip
// connections into a mirrored decoder; a 1x1 head emits per-class logits at
// input resolution.  forward_with_taps() additionally returns the first
// encoder stage's activations, which downstream analysis uses to compare
// early-layer statistics between differently trained segmenters.
//
// Layout (W = base width):
//   stem  3x3 conv 3 -> W, IN + ReLU                          (e0, full res)
//   enc1  3x3 stride-2 -> 2W, IN + ReLU                       (e1, 1/2)
//   enc2  3x3 stride-2 -> 4W, IN + ReLU                       (e2, 1/4)
//   enc3  3x3 stride-2 -> 8W, IN + ReLU                       (e3, 1/8)
//   enc4  3x3 stride-2 -> 8W, IN + ReLU                       (e4, 1/16)
//   dec3  up(e4) -> 4W, concat e3, 3x3 fuse -> 4W, IN + ReLU
//   dec2  up      -> 2W, concat e2, 3x3 fuse -> 2W, IN + ReLU
//   dec1  up      ->  W, concat e1, 3x3 fuse ->  W, IN + ReLU
//   dec0  up      ->  W, concat e0, 3x3 fuse ->  W, IN + ReLU
//   head  1x1 conv -> num_classes logits

namespace clab {

struct UnetConfig {
    int width = 16;
    int num_classes = 0;  // required; logit channels
};

class Unet {
public:
    explicit Unet(UnetConfig cfg, uint64_t seed = 4) : cfg_(cfg) {
        if (cfg.width < 1) throw UsageError("unet width must be positive");
        if (cfg.num_classes < 2)
            throw UsageError("unet needs num_classes >= 2, got " +
                             std::to_string(cfg.num_classes));
        Rng rng(seed);
        int w = cfg.width;
        stem_ = Conv2d(ps_, "u.stem", 3, w, 3, 1, 1, rng);
        stem_n_ = InstanceNorm2d(ps_, "u.stem_n", w);
        int enc_ch[4] = {2 * w, 4 * w, 8 * w, 8 * w};
        int in_ch = w;
        for (int i = 0; i < 4; ++i) {
            enc_[i] = Conv2d(ps_, "u.enc" + std::to_string(i + 1), in_ch,
                             enc_ch[i], 3, 2, 1, rng);
            enc_n_[i] = InstanceNorm2d(ps_, "u.enc" + std::to_string(i + 1) + "_n",
                                       enc_ch[i]);
            in_ch = enc_ch[i];
        }
        // decoder i consumes the stage-(i+1) output and the stage-i skip
        int up_out[4] = {4 * w, 2 * w, w, w};     // channels after upsampling
        int skip_ch[4] = {8 * w, 4 * w, 2 * w, w};  // e3, e2, e1, e0
        in_ch = enc_ch[3];
        for (int i = 0; i < 4; ++i) {
            up_[i] = ConvTranspose2d(ps_, "u.up" + std::to_string(3 - i), in_ch,
                                     up_out[i], 3, 2, 1, 1, rng);
            fuse_[i] = Conv2d(ps_, "u.fuse" + std::to_string(3 - i),
                              up_out[i] + skip_ch[i], up_out[i], 3, 1, 1, rng);
            fuse_n_[i] = InstanceNorm2d(ps_, "u.fuse" + std::to_string(3 - i) + "_n",
                                        up_out[i]);
            in_ch = up_out[i];
        }
        head_ = Conv2d(ps_, "u.head", w, cfg.num_classes, 1, 1, 0, rng);
    }

    /// Logits [N,K,H,W] for a [N,3,H,W] image in [0, 1] with H, W
    /// divisible by 16.
    Tensor forward(Tape* tape, const Tensor& x) const {
        return run(tape, x, nullptr);
    }

    /// Same as forward() but also yields the first encoder stage's
    /// post-activation features ([N,2W,H/2,W/2]) for representation probes.
    Tensor forward_with_taps(Tape* tape, const Tensor& x, Tensor* shallow) const {
        return run(tape, x, shallow);
    }

    /// Activations of one encoder stage (0 = stem at full resolution,
    /// 1..4 = the strided blocks) without running the decoder; the input
    /// contract matches forward().  Used by representation probes that
    /// compare early-layer statistics across datasets.
    Tensor encoder_stage(const Tensor& x, int stage) const {
        if (stage < 0 || stage > 4)
            throw UsageError("encoder stage must be in [0, 4], got " +
                             std::to_string(stage));
        check_input(x);
        Tensor h = relu(nullptr, stem_n_.forward(nullptr, stem_.forward(nullptr, x)));
        for (int i = 0; i < stage; ++i)
            h = relu(nullptr, enc_n_[i].forward(nullptr, enc_[i].forward(nullptr, h)));
        return h;
    }

    /// Per-pixel argmax over the class logits.
    std::vector<int> predict(const Tensor& x) const {
        Tensor logits = run(nullptr, x, nullptr);
        int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2),
            W = logits.dim(3);
        std::vector<int> ids(static_cast<size_t>(N) * H * W);
        const float* d = logits.data();
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    int best = 0;
                    float best_v = d[((static_cast<int64_t>(n) * K) * H + y) * W + xx];
                    for (int k = 1; k < K; ++k) {
                        float v =
                            d[((static_cast<int64_t>(n) * K + k) * H + y) * W + xx];
                        if (v > best_v) {
                            best_v = v;
                            best = k;
                        }
                    }
                    ids[(static_cast<size_t>(n) * H + y) * W + xx] = best;
                }
        return ids;
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const UnetConfig& config() const { return cfg_; }

private:
    static void check_input(const Tensor& x) {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw DimensionError("unet expects [N,3,H,W], got " +
                                 shape_str(x.shape()));
        if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0 || x.dim(2) < 16 ||
            x.dim(3) < 16)
            throw DimensionError("unet needs H,W divisible by 16, got " +
                                 shape_str(x.shape()));
    }

    Tensor run(Tape* tape, const Tensor& x, Tensor* shallow) const {
        check_input(x);
        Tensor e[5];
        e[0] = relu(tape, stem_n_.forward(tape, stem_.forward(tape, x)));
        for (int i = 0; i < 4; ++i)
            e[i + 1] = relu(
                tape, enc_n_[i].forward(tape, enc_[i].forward(tape, e[i])));
        if (shallow) *shallow = e[1];
        Tensor h = e[4];
        for (int i = 0; i < 4; ++i) {
            Tensor up = up_[i].forward(tape, h);
            Tensor cat = concat_channels(tape, up, e[3 - i]);
            h = relu(tape, fuse_n_[i].forward(tape, fuse_[i].forward(tape, cat)));
        }
        return head_.forward(tape, h);
    }

    UnetConfig cfg_;
    ParamStore ps_;
    Conv2d stem_, enc_[4], fuse_[4], head_;
    InstanceNorm2d stem_n_, enc_n_[4], fuse_n_[4];
    ConvTranspose2d up_[4];
};

}  // namespace clab
