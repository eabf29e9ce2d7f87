#pragma once

#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// Residual dense network for distortion-oriented restoration.  Dense blocks
// concatenate every intermediate activation so each 3x3 conv sees all
// earlier features; 1x1 fusions bring the width back down, and residual
// connections at both the block and network level keep the mapping close to
// identity.  As with the adversarial generator, the final conv starts at
// zero so restore(x) == x before training.
//
// Layout (B = base width, G = growth):
//   sfe1, sfe2       3x3 convs, 3 -> B -> B
//   global_blocks x  dense block: local_layers 3x3 convs of width G on the
//                    running concat, 1x1 local fusion back to B, + input
//   gff              1x1 conv over the concat of all block outputs -> B,
//                    then a 3x3 conv, + sfe1 output (global residual)
//   out              3x3 conv -> 3 channels, zero-init

namespace clab {

struct RdnConfig {
    int base = 32;          // feature width between blocks
    int global_blocks = 4;  // number of residual dense blocks
    int local_layers = 3;   // dense 3x3 convs inside each block
    int growth = 16;        // channels added per dense conv
};

namespace nn_detail {

struct DenseBlock {
    std::vector<Conv2d> layers;
    Conv2d fuse;

    DenseBlock() = default;
    DenseBlock(ParamStore& ps, const std::string& name, const RdnConfig& cfg,
               Rng& rng) {
        int ch = cfg.base;
        for (int j = 0; j < cfg.local_layers; ++j) {
            layers.emplace_back(ps, name + ".l" + std::to_string(j), ch,
                                cfg.growth, 3, 1, 1, rng);
            ch += cfg.growth;
        }
        fuse = Conv2d(ps, name + ".fuse", ch, cfg.base, 1, 1, 0, rng);
    }

    Tensor forward(Tape* tape, const Tensor& x) const {
        Tensor cat = x;
        for (const auto& layer : layers) {
            Tensor h = relu(tape, layer.forward(tape, cat));
            cat = concat_channels(tape, cat, h);
        }
        return add(tape, x, fuse.forward(tape, cat));
    }
};

}  // namespace nn_detail

class Rdn {
public:
    explicit Rdn(RdnConfig cfg = {}, uint64_t seed = 3) : cfg_(cfg) {
        if (cfg.base < 1 || cfg.global_blocks < 1 || cfg.local_layers < 1 ||
            cfg.growth < 1)
            throw UsageError("rdn config values must be positive");
        Rng rng(seed);
        sfe1_ = Conv2d(ps_, "r.sfe1", 3, cfg.base, 3, 1, 1, rng);
        sfe2_ = Conv2d(ps_, "r.sfe2", cfg.base, cfg.base, 3, 1, 1, rng);
        blocks_.reserve(cfg.global_blocks);
        for (int i = 0; i < cfg.global_blocks; ++i)
            blocks_.emplace_back(ps_, "r.b" + std::to_string(i), cfg, rng);
        gff1_ = Conv2d(ps_, "r.gff1", cfg.base * cfg.global_blocks, cfg.base, 1,
                       1, 0, rng);
        gff2_ = Conv2d(ps_, "r.gff2", cfg.base, cfg.base, 3, 1, 1, rng);
        out_ = Conv2d(ps_, "r.out", cfg.base, 3, 3, 1, 1, rng, PadMode::Zero,
                      /*zero_init=*/true);
    }

    /// Correction term for a [N,3,H,W] image in [-1, 1]; any H, W >= 1.
    Tensor forward(Tape* tape, const Tensor& x) const {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw DimensionError("rdn expects [N,3,H,W], got " +
                                 shape_str(x.shape()));
        Tensor f0 = sfe1_.forward(tape, x);
        Tensor h = sfe2_.forward(tape, f0);
        Tensor cat;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i].forward(tape, h);
            cat = i == 0 ? h : concat_channels(tape, cat, h);
        }
        Tensor fused = gff2_.forward(tape, gff1_.forward(tape, cat));
        return out_.forward(tape, add(tape, f0, fused));
    }

    /// clamp(x + forward(x), [-1, 1]).
    Tensor restore(Tape* tape, const Tensor& x) const {
        return clamp_range(tape, add(tape, x, forward(tape, x)), -1.0f, 1.0f);
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const RdnConfig& config() const { return cfg_; }

private:
    RdnConfig cfg_;
    ParamStore ps_;
    Conv2d sfe1_, sfe2_, gff1_, gff2_, out_;
    std::vector<nn_detail::DenseBlock> blocks_;
};

}  // namespace clab
