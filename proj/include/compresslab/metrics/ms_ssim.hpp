#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"

// Multi-scale SSIM built from tape ops, so it serves both as a metric and as
// a differentiable training objective. Inputs are [N,C,H,W] tensors in
// [0,1]. Standard construction: 11x11 Gaussian window (sigma 1.5), valid
// convolution, 2x average pooling between scales, per-level contrast terms
// and a luminance term at the coarsest level, combined as a weighted
// geometric mean.

namespace clab {

namespace msssim_detail {

inline const std::vector<float>& gaussian_window11() {
    static const std::vector<float> w = [] {
        std::vector<float> k(121);
        double sigma = 1.5, sum = 0.0;
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
                double dy = y - 5, dx = x - 5;
                double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                k[static_cast<size_t>(y * 11 + x)] = static_cast<float>(v);
                sum += v;
            }
        for (auto& v : k) v = static_cast<float>(v / sum);
        return k;
    }();
    return w;
}

/// Per-channel valid 11x11 Gaussian blur via a grouped-conv trick: fold
/// channels into the batch, convolve with one kernel, unfold.
inline Tensor blur(Tape* tape, const Tensor& x) {
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor kernel = Tensor::from_data({1, 1, 11, 11}, gaussian_window11());
    Tensor folded = reshape(tape, x, {N * C, 1, H, W});
    Tensor out = conv2d(tape, folded, kernel, 1, 0);
    return reshape(tape, out, {N, C, out.dim(2), out.dim(3)});
}

struct LevelTerms {
    Tensor luminance;  // mean of the l map
    Tensor contrast;   // mean of the cs map
};

inline LevelTerms ssim_terms(Tape* tape, const Tensor& x, const Tensor& y,
                             float c1, float c2) {
    Tensor mx = blur(tape, x);
    Tensor my = blur(tape, y);
    Tensor mxx = mul(tape, mx, mx);
    Tensor myy = mul(tape, my, my);
    Tensor mxy = mul(tape, mx, my);
    Tensor sxx = sub(tape, blur(tape, mul(tape, x, x)), mxx);
    Tensor syy = sub(tape, blur(tape, mul(tape, y, y)), myy);
    Tensor sxy = sub(tape, blur(tape, mul(tape, x, y)), mxy);

    Tensor l = div(tape, add_scalar(tape, mul_scalar(tape, mxy, 2.0f), c1),
                   add_scalar(tape, add(tape, mxx, myy), c1));
    Tensor cs = div(tape, add_scalar(tape, mul_scalar(tape, sxy, 2.0f), c2),
                    add_scalar(tape, add(tape, sxx, syy), c2));
    return {mean_all(tape, mul(tape, l, cs)), mean_all(tape, cs)};
}

inline const std::vector<double>& level_weights5() {
    static const std::vector<double> w = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    return w;
}

}  // namespace msssim_detail

inline int ms_ssim_max_levels(int height, int width) {
    int side = std::min(height, width);
    int levels = 0;
    while (side >= 11 && levels < 5) {
        ++levels;
        side /= 2;
    }
    return levels;
}

/// levels = 0 picks 5 when both sides are >= 176 px, otherwise 3 when both
/// sides are >= 64 px; smaller inputs are a usage error (window no longer
/// fits across scales).
inline Tensor ms_ssim(Tape* tape, const Tensor& x, const Tensor& y,
                      int levels = 0) {
    if (x.ndim() != 4 || !x.same_shape(y))
        throw DimensionError("ms_ssim: inputs must be matching NCHW tensors, got " +
                             shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    int H = x.dim(2), W = x.dim(3);
    if (levels == 0) {
        int side = std::min(H, W);
        if (side >= 176) levels = 5;
        else if (side >= 64) levels = 3;
        else
            throw UsageError("ms_ssim: image side " + std::to_string(side) +
                             " px is below the 64 px minimum");
    }
    if (levels < 1 || levels > 5)
        throw UsageError("ms_ssim: levels must be in [1,5]");
    if (std::min(H, W) < 11 * (1 << (levels - 1)))
        throw UsageError("ms_ssim: " + std::to_string(levels) +
                         " levels need >= " + std::to_string(11 * (1 << (levels - 1))) +
                         " px per side, got " + shape_str(x.shape()));

    const auto& w5 = msssim_detail::level_weights5();
    std::vector<double> weights(w5.begin(), w5.begin() + levels);
    double wsum = 0.0;
    for (double v : weights) wsum += v;
    for (auto& v : weights) v /= wsum;

    const float c1 = 0.01f * 0.01f, c2 = 0.03f * 0.03f;  // range [0,1]
    Tensor cur_x = x, cur_y = y;
    Tensor result = Tensor::scalar(1.0f);
    for (int lv = 0; lv < levels; ++lv) {
        auto terms = msssim_detail::ssim_terms(tape, cur_x, cur_y, c1, c2);
        Tensor term = (lv == levels - 1) ? terms.luminance : terms.contrast;
        term = clamp_min(tape, term, 1e-6f);  // guard pow against negative cs
        term = pow_scalar(tape, term, static_cast<float>(weights[static_cast<size_t>(lv)]));
        result = (lv == 0) ? term : mul(tape, result, term);
        if (lv + 1 < levels) {
            cur_x = avg_pool2d(tape, cur_x, 2, 2);
            cur_y = avg_pool2d(tape, cur_y, 2, 2);
        }
    }
    return result;
}

/// Distance form used in training objectives: 0 when images match.
inline Tensor ms_ssim_loss(Tape* tape, const Tensor& x, const Tensor& y,
                           int levels = 0) {
    return add_scalar(tape, neg(tape, ms_ssim(tape, x, y, levels)), 1.0f);
}

/// dB view of an MS-SSIM value, capped at 100 dB for identical inputs.
inline double ms_ssim_db(double v) {
    if (v >= 1.0) return 100.0;
    double db = -10.0 * std::log10(1.0 - v);
    return db > 100.0 ? 100.0 : db;
}

inline double ms_ssim(const Image8& a, const Image8& b, int levels = 0) {
    Tensor ta = image_to_tensor(a);
    Tensor tb = image_to_tensor(b);
    return static_cast<double>(ms_ssim(nullptr, ta, tb, levels).item());
}

}  // namespace clab
