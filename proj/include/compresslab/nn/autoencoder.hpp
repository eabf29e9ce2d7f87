#pragma once

#include <string>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// Autoencoder backbone of the learned codec.  Three stride-2 convolutions
// map a [0,1] RGB image to a 16-channel latent at 1/8 resolution; three
// transposed convolutions mirror the path back.  Each latent channel
// carries a learned Gaussian (mu_c, log_sigma_c) whose CDF drives both the
// training rate term and the entropy coder's frequency tables, so the
// entropy parameters live here next to the weights they were trained with.

namespace clab {

struct AutoencoderConfig {
    int width = 64;           // hidden channels in both halves
    int latent_channels = 16; // coded channels at 1/8 resolution
};

class CodecNet {
public:
    explicit CodecNet(AutoencoderConfig cfg = {}, uint64_t seed = 6)
        : cfg_(cfg) {
        if (cfg.width < 1 || cfg.latent_channels < 1)
            throw UsageError("autoencoder config values must be positive");
        Rng rng(seed);
        int w = cfg.width, lc = cfg.latent_channels;
        e1_ = Conv2d(ps_, "a.e1", 3, w, 3, 2, 1, rng);
        e2_ = Conv2d(ps_, "a.e2", w, w, 3, 2, 1, rng);
        e3_ = Conv2d(ps_, "a.e3", w, lc, 3, 2, 1, rng);
        d1_ = ConvTranspose2d(ps_, "a.d1", lc, w, 3, 2, 1, 1, rng);
        d2_ = ConvTranspose2d(ps_, "a.d2", w, w, 3, 2, 1, 1, rng);
        d3_ = ConvTranspose2d(ps_, "a.d3", w, 3, 3, 2, 1, 1, rng);
        mu_ = ps_.add("a.mu", Tensor::zeros({lc}));
        log_sigma_ = ps_.add("a.log_sigma", Tensor::zeros({lc}));
    }

    /// Latent [N,lc,H/8,W/8] for a [N,3,H,W] image in [0,1], H,W
    /// divisible by 8.  The last conv is linear so latents can be signed.
    Tensor encode(Tape* tape, const Tensor& x) const {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw DimensionError("codec encoder expects [N,3,H,W], got " +
                                 shape_str(x.shape()));
        if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0 || x.dim(2) < 8 || x.dim(3) < 8)
            throw DimensionError("codec encoder needs H,W divisible by 8, got " +
                                 shape_str(x.shape()));
        Tensor h = relu(tape, e1_.forward(tape, x));
        h = relu(tape, e2_.forward(tape, h));
        return e3_.forward(tape, h);
    }

    /// Reconstruction [N,3,8H,8W] from a latent; linear output, so callers
    /// clamp to [0,1] when materialising pixels.
    Tensor decode(Tape* tape, const Tensor& y) const {
        if (y.ndim() != 4 || y.dim(1) != cfg_.latent_channels)
            throw DimensionError("codec decoder expects [N," +
                                 std::to_string(cfg_.latent_channels) +
                                 ",h,w], got " + shape_str(y.shape()));
        Tensor h = relu(tape, d1_.forward(tape, y));
        h = relu(tape, d2_.forward(tape, h));
        return d3_.forward(tape, h);
    }

    const Tensor& mu() const { return mu_; }
    const Tensor& log_sigma() const { return log_sigma_; }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const AutoencoderConfig& config() const { return cfg_; }

private:
    AutoencoderConfig cfg_;
    ParamStore ps_;
    Conv2d e1_, e2_, e3_;
    ConvTranspose2d d1_, d2_, d3_;
    Tensor mu_, log_sigma_;
};

}  // namespace clab
