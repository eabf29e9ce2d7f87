#pragma once

#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// Conditional patch discriminators.  Each scale scores 6-channel input
// (candidate image concatenated with the decoded conditioning image) with a
// stack of 4x4 convolutions and emits a patch logit map plus the four
// intermediate activations used for feature-matching distillation:
//
//   C_W   4x4 stride-2 -> W,  LeakyReLU(0.2)          (no norm on raw input)
//   C_2W  4x4 stride-2 -> 2W, IN + LeakyReLU(0.2)
//   C_4W  4x4 stride-2 -> 4W, IN + LeakyReLU(0.2)
//   C_8W  4x4 stride-1 -> 8W, IN + LeakyReLU(0.2)
//   O_1   4x4 stride-1 -> 1 channel of patch logits
//
// The multi-scale wrapper runs one copy at full resolution and an
// independent copy on a 4x-downsampled view, so one sees texture and the
// other layout.  Probabilities are left to the loss (sigmoid there), which
// keeps the tape graph free of saturated activations.

namespace clab {

struct DiscriminatorConfig {
    int width = 16;  // channels after the first convolution
};

/// Patch logits plus the distillation taps, shallowest first.
struct ScaleOutput {
    Tensor logits;
    std::vector<Tensor> features;
};

class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    PatchDiscriminator(ParamStore& ps, const std::string& name, int in_ch,
                       DiscriminatorConfig cfg, Rng& rng) {
        int w = cfg.width;
        c1_ = Conv2d(ps, name + ".c1", in_ch, w, 4, 2, 1, rng);
        c2_ = Conv2d(ps, name + ".c2", w, 2 * w, 4, 2, 1, rng);
        n2_ = InstanceNorm2d(ps, name + ".n2", 2 * w);
        c3_ = Conv2d(ps, name + ".c3", 2 * w, 4 * w, 4, 2, 1, rng);
        n3_ = InstanceNorm2d(ps, name + ".n3", 4 * w);
        c4_ = Conv2d(ps, name + ".c4", 4 * w, 8 * w, 4, 1, 2, rng);
        n4_ = InstanceNorm2d(ps, name + ".n4", 8 * w);
        head_ = Conv2d(ps, name + ".head", 8 * w, 1, 4, 1, 2, rng);
    }

    ScaleOutput forward(Tape* tape, const Tensor& x) const {
        ScaleOutput out;
        Tensor h = leaky_relu(tape, c1_.forward(tape, x));
        out.features.push_back(h);
        h = leaky_relu(tape, n2_.forward(tape, c2_.forward(tape, h)));
        out.features.push_back(h);
        h = leaky_relu(tape, n3_.forward(tape, c3_.forward(tape, h)));
        out.features.push_back(h);
        h = leaky_relu(tape, n4_.forward(tape, c4_.forward(tape, h)));
        out.features.push_back(h);
        out.logits = head_.forward(tape, h);
        return out;
    }

private:
    Conv2d c1_, c2_, c3_, c4_, head_;
    InstanceNorm2d n2_, n3_, n4_;
};

class MultiScaleDiscriminator {
public:
    explicit MultiScaleDiscriminator(DiscriminatorConfig cfg = {},
                                     uint64_t seed = 2) {
        if (cfg.width < 1) throw UsageError("discriminator width must be positive");
        Rng rng(seed);
        full_ = PatchDiscriminator(ps_, "d.full", 6, cfg, rng);
        quarter_ = PatchDiscriminator(ps_, "d.quarter", 6, cfg, rng);
    }

    /// Scores `candidate` conditioned on `decoded`; both [N,3,H,W] in
    /// [-1, 1].  Entry 0 is the full-resolution scale, entry 1 the 1/4 one.
    std::vector<ScaleOutput> forward(Tape* tape, const Tensor& candidate,
                                     const Tensor& decoded) const {
        if (!candidate.same_shape(decoded))
            throw DimensionError("discriminator inputs differ: " +
                                 shape_str(candidate.shape()) + " vs " +
                                 shape_str(decoded.shape()));
        if (candidate.ndim() != 4 || candidate.dim(1) != 3)
            throw DimensionError("discriminator expects [N,3,H,W], got " +
                                 shape_str(candidate.shape()));
        // Below 64 px the quarter scale's deepest feature map collapses to
        // 1x1, where instance norm passes no gradient (its output over a
        // single spatial sample is just beta), silently freezing that
        // branch.  Reject such sizes instead of training a dead tower.
        if (candidate.dim(2) < 64 || candidate.dim(3) < 64)
            throw DimensionError("discriminator needs H,W >= 64, got " +
                                 shape_str(candidate.shape()));
        Tensor x = concat_channels(tape, candidate, decoded);
        std::vector<ScaleOutput> out;
        out.push_back(full_.forward(tape, x));
        Tensor x4 = avg_pool2d(tape, avg_pool2d(tape, x, 2, 2), 2, 2);
        out.push_back(quarter_.forward(tape, x4));
        return out;
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    static constexpr int num_scales() { return 2; }
    static constexpr int features_per_scale() { return 4; }

private:
    ParamStore ps_;
    PatchDiscriminator full_, quarter_;
};

}  // namespace clab
