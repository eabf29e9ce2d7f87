#pragma once

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "compresslab/core/tensor.hpp"

// Reverse-mode primitives. Every op validates shapes, computes the forward
// value, and (when a tape is live and an input is grad-tracked) records a
// closure that scatters the output gradient back into its inputs. Outputs of
// unused branches simply never receive a gradient; their closures no-op.

namespace clab {

enum class PadMode { Zero, Reflect };

namespace detail {

inline void sgemm_rm(bool ta, bool tb, int m, int n, int k, float alpha,
                     const float* a, int lda, const float* b, int ldb,
                     float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

// cols layout: [C*kh*kw, colH*colW], row (c,ky,kx), column (oy,ox).
inline void im2col(const float* img, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int colH, int colW, float* cols) {
    for (int c = 0; c < C; ++c) {
        const float* plane = img + static_cast<int64_t>(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                float* row = cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                        colH * colW;
                for (int oy = 0; oy < colH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::memset(row + static_cast<int64_t>(oy) * colW, 0,
                                    sizeof(float) * colW);
                        continue;
                    }
                    const float* src = plane + static_cast<int64_t>(iy) * W;
                    float* dst = row + static_cast<int64_t>(oy) * colW;
                    for (int ox = 0; ox < colW; ++ox) {
                        int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-add of a cols buffer back into an image; inverse of im2col.
inline void col2im_add(const float* cols, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int colH, int colW, float* img) {
    for (int c = 0; c < C; ++c) {
        float* plane = img + static_cast<int64_t>(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const float* row =
                    cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * colH * colW;
                for (int oy = 0; oy < colH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    float* dst = plane + static_cast<int64_t>(iy) * W;
                    const float* src = row + static_cast<int64_t>(oy) * colW;
                    for (int ox = 0; ox < colW; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(Tape* tape, const Tensor& x, Fwd f, Bwd dfdx_from_xy) {
    Tensor y = Tensor::zeros(x.shape());
    const float* xd = x.data();
    float* yd = y.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) yd[i] = f(xd[i]);
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc, dfdx_from_xy]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            auto& gx = xc.grad_vec();
            const float* xd = xc.data();
            const float* yd = yc.data();
            for (int64_t i = 0; i < xc.numel(); ++i)
                gx[i] += gy[i] * dfdx_from_xy(xd[i], yd[i]);
        });
    }
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor relu(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor leaky_relu(Tape* tape, const Tensor& x, float slope = 0.2f) {
    return detail::unary_elementwise(
        tape, x, [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

inline Tensor tanh_op(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return std::tanh(v); },
        [](float, float y) { return 1.0f - y * y; });
}

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
        [](float, float y) { return y * (1.0f - y); });
}

inline Tensor exp_op(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return std::exp(v); },
        [](float, float y) { return y; });
}

/// Natural log. Pre: x > 0 (callers clamp).
inline Tensor log_op(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return std::log(v); },
        [](float v, float) { return 1.0f / v; });
}

inline Tensor erf_op(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return std::erf(v); },
        [](float v, float) {
            return 1.1283791670955126f * std::exp(-v * v);  // 2/sqrt(pi)
        });
}

inline Tensor reciprocal(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return 1.0f / v; },
        [](float, float y) { return -y * y; });
}

inline Tensor abs_op(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

inline Tensor neg(Tape* tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, [](float v) { return -v; }, [](float, float) { return -1.0f; });
}

inline Tensor add_scalar(Tape* tape, const Tensor& x, float s) {
    return detail::unary_elementwise(
        tape, x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

inline Tensor mul_scalar(Tape* tape, const Tensor& x, float s) {
    return detail::unary_elementwise(
        tape, x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

/// x^p for x > 0.
inline Tensor pow_scalar(Tape* tape, const Tensor& x, float p) {
    return detail::unary_elementwise(
        tape, x, [p](float v) { return std::pow(v, p); },
        [p](float v, float y) { return v != 0.0f ? p * y / v : 0.0f; });
}

inline Tensor clamp_min(Tape* tape, const Tensor& x, float lo) {
    return detail::unary_elementwise(
        tape, x, [lo](float v) { return v < lo ? lo : v; },
        [lo](float v, float) { return v < lo ? 0.0f : 1.0f; });
}

inline Tensor clamp_range(Tape* tape, const Tensor& x, float lo, float hi) {
    return detail::unary_elementwise(
        tape, x, [lo, hi](float v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](float v, float) { return (v < lo || v > hi) ? 0.0f : 1.0f; });
}

namespace detail {

template <typename Fwd, typename DA, typename DB>
Tensor binary_elementwise(Tape* tape, const Tensor& a, const Tensor& b, Fwd f,
                          DA dfda, DB dfdb) {
    require(a.same_shape(b), "elementwise op shape mismatch " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
    Tensor y = Tensor::zeros(a.shape());
    const float* ad = a.data();
    const float* bd = b.data();
    float* yd = y.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) yd[i] = f(ad[i], bd[i]);
    if (tracking(tape, {&a, &b})) {
        y.set_requires_grad(true);
        Tensor ac = a, bc = b, yc = y;
        bool ga = a.requires_grad(), gb = b.requires_grad();
        tape->record([ac, bc, yc, dfda, dfdb, ga, gb]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            const float* ad = ac.data();
            const float* bd = bc.data();
            int64_t n = ac.numel();
            if (ga) {
                auto& g = ac.grad_vec();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i] * dfda(ad[i], bd[i]);
            }
            if (gb) {
                auto& g = bc.grad_vec();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i] * dfdb(ad[i], bd[i]);
            }
        });
    }
    return y;
}

}  // namespace detail

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, [](float x, float y) { return x + y; },
        [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, [](float x, float y) { return x - y; },
        [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, [](float x, float y) { return x * y; },
        [](float, float y) { return y; }, [](float x, float) { return x; });
}

/// a / b. Pre: b != 0.
inline Tensor div(Tape* tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, [](float x, float y) { return x / y; },
        [](float, float y) { return 1.0f / y; },
        [](float x, float y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Per-channel broadcast (NCHW; dim 1 is channels)
// ---------------------------------------------------------------------------

inline Tensor bias_add(Tape* tape, const Tensor& x, const Tensor& b) {
    detail::require(x.ndim() >= 2 && b.ndim() == 1 && b.dim(0) == x.dim(1),
                    "bias_add: bias " + shape_str(b.shape()) + " vs input " +
                        shape_str(x.shape()));
    int N = x.dim(0), C = x.dim(1);
    int64_t m = x.numel() / (static_cast<int64_t>(N) * C);
    Tensor y = Tensor::zeros(x.shape());
    const float* xd = x.data();
    const float* bd = b.data();
    float* yd = y.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(n) * C + c) * m;
            float bv = bd[c];
            for (int64_t i = 0; i < m; ++i) yd[base + i] = xd[base + i] + bv;
        }
    if (tracking(tape, {&x, &b})) {
        y.set_requires_grad(true);
        Tensor xc = x, bc = b, yc = y;
        bool gx = x.requires_grad(), gb = b.requires_grad();
        tape->record([xc, bc, yc, gx, gb, N, C, m]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            if (gx) xc.accumulate_grad(gy.data(), xc.numel());
            if (gb) {
                auto& g = bc.grad_vec();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        int64_t base = (static_cast<int64_t>(n) * C + c) * m;
                        double s = 0.0;
                        for (int64_t i = 0; i < m; ++i) s += gy[base + i];
                        g[c] += static_cast<float>(s);
                    }
            }
        });
    }
    return y;
}

inline Tensor channel_scale(Tape* tape, const Tensor& x, const Tensor& s) {
    detail::require(x.ndim() >= 2 && s.ndim() == 1 && s.dim(0) == x.dim(1),
                    "channel_scale: scale " + shape_str(s.shape()) + " vs input " +
                        shape_str(x.shape()));
    int N = x.dim(0), C = x.dim(1);
    int64_t m = x.numel() / (static_cast<int64_t>(N) * C);
    Tensor y = Tensor::zeros(x.shape());
    const float* xd = x.data();
    const float* sd = s.data();
    float* yd = y.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(n) * C + c) * m;
            float sv = sd[c];
            for (int64_t i = 0; i < m; ++i) yd[base + i] = xd[base + i] * sv;
        }
    if (tracking(tape, {&x, &s})) {
        y.set_requires_grad(true);
        Tensor xc = x, sc = s, yc = y;
        bool gx = x.requires_grad(), gs = s.requires_grad();
        tape->record([xc, sc, yc, gx, gs, N, C, m]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            const float* xd = xc.data();
            const float* sd = sc.data();
            if (gx) {
                auto& g = xc.grad_vec();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        int64_t base = (static_cast<int64_t>(n) * C + c) * m;
                        for (int64_t i = 0; i < m; ++i)
                            g[base + i] += gy[base + i] * sd[c];
                    }
            }
            if (gs) {
                auto& g = sc.grad_vec();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        int64_t base = (static_cast<int64_t>(n) * C + c) * m;
                        double acc = 0.0;
                        for (int64_t i = 0; i < m; ++i) acc += gy[base + i] * xd[base + i];
                        g[c] += static_cast<float>(acc);
                    }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

/// Value copy that is cut off from the tape: gradients never flow past it.
inline Tensor detach(const Tensor& x) {
    return Tensor::from_data(x.shape(), x.vec());
}

inline Tensor reshape(Tape* tape, const Tensor& x, const Shape& shape) {
    detail::require(shape_numel(shape) == x.numel(),
                    "reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                        shape_str(shape));
    Tensor y = Tensor::from_data(shape, x.vec());
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc]() mutable {
            if (!yc.has_grad()) return;
            xc.accumulate_grad(yc.grad_vec().data(), xc.numel());
        });
    }
    return y;
}

inline Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
    detail::require(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) &&
                        a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                    "concat_channels: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    int64_t plane = static_cast<int64_t>(H) * W;
    Tensor y = Tensor::zeros({N, Ca + Cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::memcpy(y.data() + (static_cast<int64_t>(n) * (Ca + Cb)) * plane,
                    a.data() + static_cast<int64_t>(n) * Ca * plane,
                    sizeof(float) * Ca * plane);
        std::memcpy(y.data() + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane,
                    b.data() + static_cast<int64_t>(n) * Cb * plane,
                    sizeof(float) * Cb * plane);
    }
    if (tracking(tape, {&a, &b})) {
        y.set_requires_grad(true);
        Tensor ac = a, bc = b, yc = y;
        bool ga = a.requires_grad(), gb = b.requires_grad();
        tape->record([ac, bc, yc, ga, gb, N, Ca, Cb, plane]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            for (int n = 0; n < N; ++n) {
                if (ga) {
                    auto& g = ac.grad_vec();
                    const float* src = gy.data() + (static_cast<int64_t>(n) * (Ca + Cb)) * plane;
                    float* dst = g.data() + static_cast<int64_t>(n) * Ca * plane;
                    for (int64_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
                }
                if (gb) {
                    auto& g = bc.grad_vec();
                    const float* src =
                        gy.data() + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane;
                    float* dst = g.data() + static_cast<int64_t>(n) * Cb * plane;
                    for (int64_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return y;
}

inline Tensor reflection_pad2d_asym(Tape* tape, const Tensor& x, int top,
                                    int bottom, int left, int right) {
    detail::require(x.ndim() == 4, "reflection_pad2d expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int mx = std::max(std::max(top, bottom), std::max(left, right));
    detail::require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0 &&
                        mx <= std::max(H, W) - 1 && top <= H - 1 && bottom <= H - 1 &&
                        left <= W - 1 && right <= W - 1,
                    "reflection_pad2d: padding too large for " + shape_str(x.shape()));
    int OH = H + top + bottom, OW = W + left + right;
    auto refl = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    Tensor y = Tensor::zeros({N, C, OH, OW});
    const float* xd = x.data();
    float* yd = y.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* xp = xd + (static_cast<int64_t>(n) * C + c) * H * W;
            float* yp = yd + (static_cast<int64_t>(n) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                int iy = refl(oy - top, H);
                for (int ox = 0; ox < OW; ++ox)
                    yp[static_cast<int64_t>(oy) * OW + ox] =
                        xp[static_cast<int64_t>(iy) * W + refl(ox - left, W)];
            }
        }
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc, N, C, H, W, OH, OW, top, left, refl]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            auto& gx = xc.grad_vec();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    float* gxp = gx.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const float* gyp =
                        gy.data() + (static_cast<int64_t>(n) * C + c) * OH * OW;
                    for (int oy = 0; oy < OH; ++oy) {
                        int iy = refl(oy - top, H);
                        for (int ox = 0; ox < OW; ++ox)
                            gxp[static_cast<int64_t>(iy) * W + refl(ox - left, W)] +=
                                gyp[static_cast<int64_t>(oy) * OW + ox];
                    }
                }
        });
    }
    return y;
}

inline Tensor reflection_pad2d(Tape* tape, const Tensor& x, int pad) {
    return reflection_pad2d_asym(tape, x, pad, pad, pad, pad);
}

// Extracts the [y0, y0+h) x [x0, x0+w) window of every plane.  The backward
// pass scatters gradients into the corresponding window and leaves the
// cropped-away border at zero.
inline Tensor crop2d(Tape* tape, const Tensor& x, int y0, int x0, int h, int w) {
    detail::require(x.ndim() == 4, "crop2d expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require(y0 >= 0 && x0 >= 0 && h >= 1 && w >= 1 && y0 + h <= H &&
                        x0 + w <= W,
                    "crop2d: window " + std::to_string(h) + "x" + std::to_string(w) +
                        "+" + std::to_string(y0) + "+" + std::to_string(x0) +
                        " outside " + shape_str(x.shape()));
    Tensor y = Tensor::zeros({N, C, h, w});
    const float* xd = x.data();
    float* yd = y.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* xp =
                xd + ((static_cast<int64_t>(n) * C + c) * H + y0) * W + x0;
            float* yp = yd + (static_cast<int64_t>(n) * C + c) * h * w;
            for (int oy = 0; oy < h; ++oy)
                std::copy(xp + static_cast<int64_t>(oy) * W,
                          xp + static_cast<int64_t>(oy) * W + w,
                          yp + static_cast<int64_t>(oy) * w);
        }
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc, N, C, H, W, y0, x0, h, w]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            auto& gx = xc.grad_vec();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    float* gxp = gx.data() +
                                 ((static_cast<int64_t>(n) * C + c) * H + y0) * W + x0;
                    const float* gyp =
                        gy.data() + (static_cast<int64_t>(n) * C + c) * h * w;
                    for (int oy = 0; oy < h; ++oy)
                        for (int ox = 0; ox < w; ++ox)
                            gxp[static_cast<int64_t>(oy) * W + ox] +=
                                gyp[static_cast<int64_t>(oy) * w + ox];
                }
        });
    }
    return y;
}

inline Tensor avg_pool2d(Tape* tape, const Tensor& x, int k, int stride) {
    detail::require(x.ndim() == 4, "avg_pool2d expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require(k >= 1 && stride >= 1 && H >= k && W >= k,
                    "avg_pool2d: window " + std::to_string(k) + " on " +
                        shape_str(x.shape()));
    int OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    Tensor y = Tensor::zeros({N, C, OH, OW});
    const float* xd = x.data();
    float* yd = y.data();
    float inv = 1.0f / (k * k);
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const float* xp = xd + nc * H * W;
        float* yp = yd + nc * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                float s = 0.0f;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        s += xp[static_cast<int64_t>(oy * stride + dy) * W + ox * stride + dx];
                yp[static_cast<int64_t>(oy) * OW + ox] = s * inv;
            }
    }
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc, N, C, H, W, OH, OW, k, stride, inv]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            auto& gx = xc.grad_vec();
            for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                float* gxp = gx.data() + nc * H * W;
                const float* gyp = gy.data() + nc * OH * OW;
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        float g = gyp[static_cast<int64_t>(oy) * OW + ox] * inv;
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx)
                                gxp[static_cast<int64_t>(oy * stride + dy) * W +
                                    ox * stride + dx] += g;
                    }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// 2-D convolution. x: [N,Ci,H,W], w: [Co,Ci,kh,kw]. Output spatial dims
/// follow (H + 2p - kh)/s + 1. Reflect mode pre-pads and convolves unpadded.
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, int stride,
                     int pad, PadMode mode = PadMode::Zero) {
    detail::require(x.ndim() == 4 && w.ndim() == 4,
                    "conv2d expects NCHW input and OIKK weight");
    detail::require(x.dim(1) == w.dim(1),
                    "conv2d: input channels " + std::to_string(x.dim(1)) +
                        " != weight in-channels " + std::to_string(w.dim(1)));
    detail::require(stride >= 1, "conv2d: stride must be >= 1");
    if (mode == PadMode::Reflect && pad > 0) {
        Tensor padded = reflection_pad2d(tape, x, pad);
        return conv2d(tape, padded, w, stride, 0, PadMode::Zero);
    }
    int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    detail::require(H + 2 * pad >= kh && W + 2 * pad >= kw,
                    "conv2d: kernel larger than padded input");
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    int ckk = Ci * kh * kw;
    int64_t ohw = static_cast<int64_t>(OH) * OW;

    Tensor y = Tensor::zeros({N, Co, OH, OW});
    std::vector<float> cols(static_cast<size_t>(ckk) * ohw);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.data() + static_cast<int64_t>(n) * Ci * H * W, Ci, H, W, kh,
                       kw, stride, pad, OH, OW, cols.data());
        detail::sgemm_rm(false, false, Co, static_cast<int>(ohw), ckk, 1.0f, w.data(),
                         ckk, cols.data(), static_cast<int>(ohw), 0.0f,
                         y.data() + static_cast<int64_t>(n) * Co * ohw,
                         static_cast<int>(ohw));
    }
    if (tracking(tape, {&x, &w})) {
        y.set_requires_grad(true);
        Tensor xc = x, wc = w, yc = y;
        bool gx = x.requires_grad(), gw = w.requires_grad();
        tape->record([xc, wc, yc, gx, gw, N, Ci, H, W, Co, kh, kw, stride, pad, OH,
                      OW, ckk, ohw]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            std::vector<float> cols(static_cast<size_t>(ckk) * ohw);
            std::vector<float> dcols;
            if (gx) dcols.resize(static_cast<size_t>(ckk) * ohw);
            for (int n = 0; n < N; ++n) {
                const float* dy_n = gy.data() + static_cast<int64_t>(n) * Co * ohw;
                if (gw) {
                    detail::im2col(xc.data() + static_cast<int64_t>(n) * Ci * H * W, Ci,
                                   H, W, kh, kw, stride, pad, OH, OW, cols.data());
                    detail::sgemm_rm(false, true, Co, ckk, static_cast<int>(ohw), 1.0f,
                                     dy_n, static_cast<int>(ohw), cols.data(),
                                     static_cast<int>(ohw), 1.0f,
                                     wc.grad_vec().data(), ckk);
                }
                if (gx) {
                    detail::sgemm_rm(true, false, ckk, static_cast<int>(ohw), Co, 1.0f,
                                     wc.data(), ckk, dy_n, static_cast<int>(ohw), 0.0f,
                                     dcols.data(), static_cast<int>(ohw));
                    detail::col2im_add(dcols.data(), Ci, H, W, kh, kw, stride, pad, OH,
                                       OW,
                                       xc.grad_vec().data() +
                                           static_cast<int64_t>(n) * Ci * H * W);
                }
            }
        });
    }
    return y;
}

/// Transposed convolution. x: [N,Ci,H,W], w: [Ci,Co,kh,kw].
/// Output spatial dims: (H-1)*s - 2p + kh + out_pad. With k=3,s=2,p=1,op=1
/// this is an exact 2x upsample.
inline Tensor conv_transpose2d(Tape* tape, const Tensor& x, const Tensor& w,
                               int stride, int pad, int out_pad) {
    detail::require(x.ndim() == 4 && w.ndim() == 4,
                    "conv_transpose2d expects NCHW input and IOKK weight");
    detail::require(x.dim(1) == w.dim(0),
                    "conv_transpose2d: input channels " + std::to_string(x.dim(1)) +
                        " != weight in-channels " + std::to_string(w.dim(0)));
    detail::require(stride >= 1 && out_pad >= 0 && out_pad < stride,
                    "conv_transpose2d: need 0 <= out_pad < stride");
    int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    int OH = (H - 1) * stride - 2 * pad + kh + out_pad;
    int OW = (W - 1) * stride - 2 * pad + kw + out_pad;
    detail::require(OH > 0 && OW > 0, "conv_transpose2d: empty output");
    int cokk = Co * kh * kw;
    int64_t hw = static_cast<int64_t>(H) * W;

    // wt[(co,ky,kx)][ci] = w[ci][co][ky][kx]
    std::vector<float> wt(static_cast<size_t>(cokk) * Ci);
    for (int ci = 0; ci < Ci; ++ci)
        for (int co = 0; co < Co; ++co)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    wt[(((static_cast<int64_t>(co) * kh + ky) * kw + kx) * Ci) + ci] =
                        w.data()[((static_cast<int64_t>(ci) * Co + co) * kh + ky) * kw +
                                 kx];

    Tensor y = Tensor::zeros({N, Co, OH, OW});
    std::vector<float> cols(static_cast<size_t>(cokk) * hw);
    for (int n = 0; n < N; ++n) {
        detail::sgemm_rm(false, false, cokk, static_cast<int>(hw), Ci, 1.0f, wt.data(),
                         Ci, x.data() + static_cast<int64_t>(n) * Ci * hw,
                         static_cast<int>(hw), 0.0f, cols.data(),
                         static_cast<int>(hw));
        detail::col2im_add(cols.data(), Co, OH, OW, kh, kw, stride, pad, H, W,
                           y.data() + static_cast<int64_t>(n) * Co * OH * OW);
    }
    if (tracking(tape, {&x, &w})) {
        y.set_requires_grad(true);
        Tensor xc = x, wc = w, yc = y;
        bool gx = x.requires_grad(), gw = w.requires_grad();
        tape->record([xc, wc, yc, gx, gw, N, Ci, H, W, Co, kh, kw, stride, pad, OH,
                      OW, cokk, hw]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            std::vector<float> cols(static_cast<size_t>(cokk) * hw);
            for (int n = 0; n < N; ++n) {
                // im2col over dy reproduces the forward scatter pattern.
                detail::im2col(gy.data() + static_cast<int64_t>(n) * Co * OH * OW, Co,
                               OH, OW, kh, kw, stride, pad, H, W, cols.data());
                if (gx) {
                    // dx[ci] = w[ci, (co,ky,kx)] * cols
                    std::vector<float> dx_n(static_cast<size_t>(Ci) * hw);
                    detail::sgemm_rm(false, false, Ci, static_cast<int>(hw), cokk, 1.0f,
                                     wc.data(), cokk, cols.data(), static_cast<int>(hw),
                                     0.0f, dx_n.data(), static_cast<int>(hw));
                    float* g = xc.grad_vec().data() + static_cast<int64_t>(n) * Ci * hw;
                    for (int64_t i = 0; i < static_cast<int64_t>(Ci) * hw; ++i)
                        g[i] += dx_n[i];
                }
                if (gw) {
                    // dw[ci, (co,ky,kx)] += x_n [Ci,HW] * cols^T [HW, CoKK]
                    detail::sgemm_rm(false, true, Ci, cokk, static_cast<int>(hw), 1.0f,
                                     xc.data() + static_cast<int64_t>(n) * Ci * hw,
                                     static_cast<int>(hw), cols.data(),
                                     static_cast<int>(hw), 1.0f, wc.grad_vec().data(),
                                     cokk);
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Instance normalization over each (sample, channel) plane, then per-channel
/// affine. eps stabilizes zero-variance planes.
inline Tensor instance_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                            const Tensor& beta, float eps = 1e-5f) {
    detail::require(x.ndim() == 4, "instance_norm expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 &&
                        beta.dim(0) == C,
                    "instance_norm: affine params must be [C]");
    int64_t m = static_cast<int64_t>(H) * W;
    Tensor y = Tensor::zeros(x.shape());
    // xhat and inv_std saved for backward
    auto xhat = std::make_shared<std::vector<float>>(x.numel());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(N) * C);
    const float* xd = x.data();
    const float* gd = gamma.data();
    const float* bd = beta.data();
    float* yd = y.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(n) * C + c) * m;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += xd[base + i];
            mean /= m;
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = xd[base + i] - mean;
                var += d * d;
            }
            var /= m;
            float is = static_cast<float>(1.0 / std::sqrt(var + eps));
            (*inv_std)[static_cast<size_t>(n) * C + c] = is;
            float mu = static_cast<float>(mean);
            for (int64_t i = 0; i < m; ++i) {
                float xh = (xd[base + i] - mu) * is;
                (*xhat)[base + i] = xh;
                yd[base + i] = xh * gd[c] + bd[c];
            }
        }
    if (tracking(tape, {&x, &gamma, &beta})) {
        y.set_requires_grad(true);
        Tensor xc = x, gc = gamma, bc = beta, yc = y;
        bool gx = x.requires_grad(), gg = gamma.requires_grad(),
             gb = beta.requires_grad();
        tape->record([xc, gc, bc, yc, xhat, inv_std, gx, gg, gb, N, C, m]() mutable {
            if (!yc.has_grad()) return;
            const auto& gy = yc.grad_vec();
            const float* gd = gc.data();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    int64_t base = (static_cast<int64_t>(n) * C + c) * m;
                    const float* xh = xhat->data() + base;
                    const float* dy = gy.data() + base;
                    double sum_dy = 0.0, sum_dy_xh = 0.0;
                    for (int64_t i = 0; i < m; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xh += dy[i] * xh[i];
                    }
                    if (gg) gc.grad_vec()[c] += static_cast<float>(sum_dy_xh);
                    if (gb) bc.grad_vec()[c] += static_cast<float>(sum_dy);
                    if (gx) {
                        float is = (*inv_std)[static_cast<size_t>(n) * C + c];
                        float k = gd[c] * is;
                        float mean_dy = static_cast<float>(sum_dy / m);
                        float mean_dy_xh = static_cast<float>(sum_dy_xh / m);
                        float* gxp = xc.grad_vec().data() + base;
                        for (int64_t i = 0; i < m; ++i)
                            gxp[i] += k * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
                    }
                }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Tensor sum_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    const float* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) s += xd[i];
    Tensor y = Tensor::scalar(static_cast<float>(s));
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc]() mutable {
            if (!yc.has_grad()) return;
            float g = yc.grad_vec()[0];
            auto& gx = xc.grad_vec();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g;
        });
    }
    return y;
}

inline Tensor mean_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    const float* xd = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += xd[i];
    Tensor y = Tensor::scalar(static_cast<float>(s / n));
    if (tracking(tape, {&x})) {
        y.set_requires_grad(true);
        Tensor xc = x, yc = y;
        tape->record([xc, yc, n]() mutable {
            if (!yc.has_grad()) return;
            float g = yc.grad_vec()[0] / n;
            auto& gx = xc.grad_vec();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return y;
}

inline Tensor mse_loss(Tape* tape, const Tensor& a, const Tensor& b) {
    detail::require(a.same_shape(b), "mse_loss shape mismatch");
    double s = 0.0;
    const float* ad = a.data();
    const float* bd = b.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(ad[i]) - bd[i];
        s += d * d;
    }
    Tensor y = Tensor::scalar(static_cast<float>(s / n));
    if (tracking(tape, {&a, &b})) {
        y.set_requires_grad(true);
        Tensor ac = a, bc = b, yc = y;
        bool ga = a.requires_grad(), gb = b.requires_grad();
        tape->record([ac, bc, yc, ga, gb, n]() mutable {
            if (!yc.has_grad()) return;
            float g = 2.0f * yc.grad_vec()[0] / n;
            const float* ad = ac.data();
            const float* bd = bc.data();
            if (ga) {
                auto& gx = ac.grad_vec();
                for (int64_t i = 0; i < n; ++i) gx[i] += g * (ad[i] - bd[i]);
            }
            if (gb) {
                auto& gx = bc.grad_vec();
                for (int64_t i = 0; i < n; ++i) gx[i] -= g * (ad[i] - bd[i]);
            }
        });
    }
    return y;
}

/// Mean absolute error.
inline Tensor l1_loss(Tape* tape, const Tensor& a, const Tensor& b) {
    detail::require(a.same_shape(b), "l1_loss shape mismatch");
    double s = 0.0;
    const float* ad = a.data();
    const float* bd = b.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) s += std::fabs(static_cast<double>(ad[i]) - bd[i]);
    Tensor y = Tensor::scalar(static_cast<float>(s / n));
    if (tracking(tape, {&a, &b})) {
        y.set_requires_grad(true);
        Tensor ac = a, bc = b, yc = y;
        bool ga = a.requires_grad(), gb = b.requires_grad();
        tape->record([ac, bc, yc, ga, gb, n]() mutable {
            if (!yc.has_grad()) return;
            float g = yc.grad_vec()[0] / n;
            const float* ad = ac.data();
            const float* bd = bc.data();
            for (int64_t i = 0; i < n; ++i) {
                float sgn = ad[i] > bd[i] ? 1.0f : (ad[i] < bd[i] ? -1.0f : 0.0f);
                if (ga) ac.grad_vec()[i] += g * sgn;
                if (gb) bc.grad_vec()[i] -= g * sgn;
            }
        });
    }
    return y;
}

/// Pixelwise softmax cross-entropy. logits: [N,K,H,W]; labels: N*H*W class
/// ids row-major (n,h,w); ignore_id pixels are excluded; sample_weights
/// (size N, empty = all ones) scale each sample's loss. Mean over counted
/// pixels.
inline Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                                    const std::vector<int>& labels, int ignore_id,
                                    const std::vector<float>& sample_weights = {}) {
    detail::require(logits.ndim() == 4, "softmax_cross_entropy expects NKHW logits");
    int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    detail::require(static_cast<int64_t>(labels.size()) ==
                        static_cast<int64_t>(N) * H * W,
                    "softmax_cross_entropy: labels size mismatch");
    detail::require(sample_weights.empty() ||
                        static_cast<int>(sample_weights.size()) == N,
                    "softmax_cross_entropy: weights size mismatch");
    int64_t hw = static_cast<int64_t>(H) * W;
    const float* ld = logits.data();
    double total = 0.0;
    int64_t count = 0;
    for (int n = 0; n < N; ++n) {
        float wn = sample_weights.empty() ? 1.0f : sample_weights[n];
        for (int64_t p = 0; p < hw; ++p) {
            int yv = labels[n * hw + p];
            if (yv == ignore_id) continue;
            detail::require(yv >= 0 && yv < K,
                            "softmax_cross_entropy: label " + std::to_string(yv) +
                                " out of range [0," + std::to_string(K) + ")");
            int64_t base = static_cast<int64_t>(n) * K * hw + p;
            float mx = ld[base];
            for (int k = 1; k < K; ++k) mx = std::max(mx, ld[base + k * hw]);
            double lse = 0.0;
            for (int k = 0; k < K; ++k) lse += std::exp(ld[base + k * hw] - mx);
            lse = mx + std::log(lse);
            total += wn * (lse - ld[base + static_cast<int64_t>(yv) * hw]);
            ++count;
        }
    }
    if (count == 0) throw UsageError("softmax_cross_entropy: no labeled pixels");
    Tensor y = Tensor::scalar(static_cast<float>(total / count));
    if (tracking(tape, {&logits})) {
        y.set_requires_grad(true);
        Tensor lc = logits, yc = y;
        auto lab = std::make_shared<std::vector<int>>(labels);
        auto sw = std::make_shared<std::vector<float>>(sample_weights);
        tape->record([lc, yc, lab, sw, N, K, hw, ignore_id, count]() mutable {
            if (!yc.has_grad()) return;
            float gout = yc.grad_vec()[0] / count;
            const float* ld = lc.data();
            auto& gl = lc.grad_vec();
            std::vector<double> prob(K);
            for (int n = 0; n < N; ++n) {
                float wn = sw->empty() ? 1.0f : (*sw)[n];
                for (int64_t p = 0; p < hw; ++p) {
                    int yv = (*lab)[n * hw + p];
                    if (yv == ignore_id) continue;
                    int64_t base = static_cast<int64_t>(n) * K * hw + p;
                    float mx = ld[base];
                    for (int k = 1; k < K; ++k) mx = std::max(mx, ld[base + k * hw]);
                    double denom = 0.0;
                    for (int k = 0; k < K; ++k) {
                        prob[k] = std::exp(ld[base + k * hw] - mx);
                        denom += prob[k];
                    }
                    for (int k = 0; k < K; ++k) {
                        float pk = static_cast<float>(prob[k] / denom);
                        float t = (k == yv) ? 1.0f : 0.0f;
                        gl[base + static_cast<int64_t>(k) * hw] += gout * wn * (pk - t);
                    }
                }
            }
        });
    }
    return y;
}

}  // namespace clab
