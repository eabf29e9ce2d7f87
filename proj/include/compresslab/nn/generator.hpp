#pragma once

#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/layers.hpp"

// Residual restoration generator.  The network predicts a correction to its
// input rather than a fresh image: restore(x) = clamp(x + G(x), [-1, 1]).
// The output convolution starts at zero so an untrained generator is an
// exact identity, which keeps early adversarial training anchored to the
// decoded image instead of hallucinating from noise.
//
// Layout (W = base width):
//   stem   7x7 conv, reflect padding, W channels, IN + ReLU
//   down   3x3 stride-2 conv -> 2W, IN + ReLU
//   down   3x3 stride-2 conv -> 4W, IN + ReLU
//   n_res  residual blocks at 4W (reflect-padded 3x3 convs, IN)
//   up     3x3 stride-2 transposed conv -> 2W, IN + ReLU
//   up     3x3 stride-2 transposed conv -> W, IN + ReLU
//   out    7x7 conv, reflect padding, 3 channels, tanh, zero-init

namespace clab {

struct GeneratorConfig {
    int width = 16;  // channels after the stem; doubles at each downsample
    int n_res = 4;   // residual blocks at the bottleneck resolution
};

namespace nn_detail {

// Two reflect-padded 3x3 convs with instance norm; identity skip.
struct ResidualBlock {
    Conv2d c1, c2;
    InstanceNorm2d n1, n2;

    ResidualBlock() = default;
    ResidualBlock(ParamStore& ps, const std::string& name, int ch, Rng& rng)
        : c1(ps, name + ".c1", ch, ch, 3, 1, 1, rng, PadMode::Reflect),
          c2(ps, name + ".c2", ch, ch, 3, 1, 1, rng, PadMode::Reflect),
          n1(ps, name + ".n1", ch),
          n2(ps, name + ".n2", ch) {}

    Tensor forward(Tape* tape, const Tensor& x) const {
        Tensor h = relu(tape, n1.forward(tape, c1.forward(tape, x)));
        h = n2.forward(tape, c2.forward(tape, h));
        return add(tape, x, h);
    }
};

}  // namespace nn_detail

class ResidualGenerator {
public:
    explicit ResidualGenerator(GeneratorConfig cfg = {}, uint64_t seed = 1)
        : cfg_(cfg) {
        if (cfg.width < 1 || cfg.n_res < 1)
            throw UsageError("generator width and n_res must be positive");
        Rng rng(seed);
        int w = cfg.width;
        stem_ = Conv2d(ps_, "g.stem", 3, w, 7, 1, 3, rng, PadMode::Reflect);
        stem_n_ = InstanceNorm2d(ps_, "g.stem_n", w);
        down1_ = Conv2d(ps_, "g.down1", w, 2 * w, 3, 2, 1, rng);
        down1_n_ = InstanceNorm2d(ps_, "g.down1_n", 2 * w);
        down2_ = Conv2d(ps_, "g.down2", 2 * w, 4 * w, 3, 2, 1, rng);
        down2_n_ = InstanceNorm2d(ps_, "g.down2_n", 4 * w);
        res_.reserve(cfg.n_res);
        for (int i = 0; i < cfg.n_res; ++i)
            res_.emplace_back(ps_, "g.res" + std::to_string(i), 4 * w, rng);
        up1_ = ConvTranspose2d(ps_, "g.up1", 4 * w, 2 * w, 3, 2, 1, 1, rng);
        up1_n_ = InstanceNorm2d(ps_, "g.up1_n", 2 * w);
        up2_ = ConvTranspose2d(ps_, "g.up2", 2 * w, w, 3, 2, 1, 1, rng);
        up2_n_ = InstanceNorm2d(ps_, "g.up2_n", w);
        out_ = Conv2d(ps_, "g.out", w, 3, 7, 1, 3, rng, PadMode::Reflect,
                      /*zero_init=*/true);
    }

    /// Correction term in (-1, 1); input is a [N,3,H,W] image in [-1, 1]
    /// with H and W divisible by 4.
    Tensor forward(Tape* tape, const Tensor& x) const {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw DimensionError("generator expects [N,3,H,W], got " +
                                 shape_str(x.shape()));
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
            throw DimensionError("generator needs H,W divisible by 4, got " +
                                 shape_str(x.shape()) +
                                 " (use restore() for arbitrary sizes)");
        Tensor h = relu(tape, stem_n_.forward(tape, stem_.forward(tape, x)));
        h = relu(tape, down1_n_.forward(tape, down1_.forward(tape, h)));
        h = relu(tape, down2_n_.forward(tape, down2_.forward(tape, h)));
        for (const auto& block : res_) h = block.forward(tape, h);
        h = relu(tape, up1_n_.forward(tape, up1_.forward(tape, h)));
        h = relu(tape, up2_n_.forward(tape, up2_.forward(tape, h)));
        return tanh_op(tape, out_.forward(tape, h));
    }

    /// clamp(x + G(x), [-1, 1]).  Inputs whose sides are not divisible by 4
    /// are reflect-padded on the bottom/right and the result is cropped back.
    Tensor restore(Tape* tape, const Tensor& x) const {
        if (x.ndim() != 4 || x.dim(1) != 3)
            throw DimensionError("generator expects [N,3,H,W], got " +
                                 shape_str(x.shape()));
        int h = x.dim(2), w = x.dim(3);
        int pb = (4 - h % 4) % 4, pr = (4 - w % 4) % 4;
        if (pb == 0 && pr == 0)
            return clamp_range(tape, add(tape, x, forward(tape, x)), -1.0f, 1.0f);
        Tensor padded = reflection_pad2d_asym(tape, x, 0, pb, 0, pr);
        Tensor corr = crop2d(tape, forward(tape, padded), 0, 0, h, w);
        return clamp_range(tape, add(tape, x, corr), -1.0f, 1.0f);
    }

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }
    const GeneratorConfig& config() const { return cfg_; }

private:
    GeneratorConfig cfg_;
    ParamStore ps_;
    Conv2d stem_, down1_, down2_, out_;
    InstanceNorm2d stem_n_, down1_n_, down2_n_, up1_n_, up2_n_;
    std::vector<nn_detail::ResidualBlock> res_;
    ConvTranspose2d up1_, up2_;
};

}  // namespace clab
