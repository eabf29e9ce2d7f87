#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/tensor.hpp"

namespace clab {

/// 8-bit image, interleaved channels, row-major.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<uint8_t> pixels;

    static Image8 make(int w, int h, int c, uint8_t fill = 0) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3))
            throw DimensionError("Image8: invalid dims " + std::to_string(w) + "x" +
                                 std::to_string(h) + "x" + std::to_string(c));
        Image8 im;
        im.width = w;
        im.height = h;
        im.channels = c;
        im.pixels.assign(static_cast<size_t>(w) * h * c, fill);
        return im;
    }

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return pixels.size(); }
};

/// Dense segmentation map of class ids. `num_classes` counts real classes;
/// the id equal to num_classes is reserved for void/unlabeled.
struct SegMap {
    int width = 0;
    int height = 0;
    int num_classes = 0;
    std::vector<uint8_t> ids;

    static SegMap make(int w, int h, int num_classes, uint8_t fill = 0) {
        if (w <= 0 || h <= 0 || num_classes <= 0 || num_classes > 255)
            throw DimensionError("SegMap: invalid dims/classes");
        SegMap m;
        m.width = w;
        m.height = h;
        m.num_classes = num_classes;
        m.ids.assign(static_cast<size_t>(w) * h, fill);
        return m;
    }

    uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }
    int void_id() const { return num_classes; }
};

/// Interleaved u8 -> planar float in [0,1], shape [1,C,H,W].
inline Tensor image_to_tensor(const Image8& im) {
    Tensor t = Tensor::zeros({1, im.channels, im.height, im.width});
    float* d = t.data();
    int64_t plane = static_cast<int64_t>(im.height) * im.width;
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
            for (int c = 0; c < im.channels; ++c)
                d[c * plane + static_cast<int64_t>(y) * im.width + x] =
                    im.at(y, x, c) / 255.0f;
    return t;
}

/// Planar float in [0,1] (values clamped) -> interleaved u8, round-to-nearest.
inline Image8 tensor_to_image(const Tensor& t) {
    if (t.ndim() != 4 || t.dim(0) != 1 || (t.dim(1) != 1 && t.dim(1) != 3))
        throw DimensionError("tensor_to_image expects [1,{1|3},H,W], got " +
                             shape_str(t.shape()));
    int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Image8 im = Image8::make(W, H, C);
    const float* d = t.data();
    int64_t plane = static_cast<int64_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                float v = d[c * plane + static_cast<int64_t>(y) * W + x];
                v = std::clamp(v, 0.0f, 1.0f);
                im.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return im;
}

/// [0,255] u8 -> [-1,1] float tensor [1,C,H,W] (training-range convention).
inline Tensor image_to_signed(const Image8& im) {
    Tensor t = image_to_tensor(im);
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = d[i] * 2.0f - 1.0f;
    return t;
}

/// [-1,1] float tensor -> u8 image (values clamped).
inline Image8 signed_to_image(const Tensor& t) {
    Tensor u = Tensor::from_data(t.shape(), t.vec());
    float* d = u.data();
    for (int64_t i = 0; i < u.numel(); ++i) d[i] = (d[i] + 1.0f) * 0.5f;
    return tensor_to_image(u);
}

/// Signed crop with optional horizontal flip, as one [1,C,s,s] sample.
inline Tensor signed_crop(const Image8& im, int y0, int x0, int s, bool flip) {
    if (y0 < 0 || x0 < 0 || y0 + s > im.height || x0 + s > im.width)
        throw DimensionError("signed_crop: window outside the image");
    Tensor t = Tensor::zeros({1, im.channels, s, s});
    float* d = t.data();
    int64_t plane = static_cast<int64_t>(s) * s;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            int sx = flip ? x0 + s - 1 - x : x0 + x;
            for (int c = 0; c < im.channels; ++c)
                d[c * plane + static_cast<int64_t>(y) * s + x] =
                    im.at(y0 + y, sx, c) / 255.0f * 2.0f - 1.0f;
        }
    return t;
}

/// Batch of images -> [N,C,H,W] in [0,1]. All images must agree in dims.
inline Tensor images_to_batch(const std::vector<Image8>& ims) {
    if (ims.empty()) throw UsageError("images_to_batch: empty batch");
    int C = ims[0].channels, H = ims[0].height, W = ims[0].width;
    Tensor t = Tensor::zeros({static_cast<int>(ims.size()), C, H, W});
    int64_t plane = static_cast<int64_t>(H) * W;
    float* d = t.data();
    for (size_t n = 0; n < ims.size(); ++n) {
        const Image8& im = ims[n];
        if (im.channels != C || im.height != H || im.width != W)
            throw DimensionError("images_to_batch: mixed image dims");
        float* dst = d + static_cast<int64_t>(n) * C * plane;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c)
                    dst[c * plane + static_cast<int64_t>(y) * W + x] =
                        im.at(y, x, c) / 255.0f;
    }
    return t;
}

/// Slice one sample of a [N,C,H,W] batch back to an image.
inline Image8 batch_slice_to_image(const Tensor& t, int n) {
    if (t.ndim() != 4 || n < 0 || n >= t.dim(0))
        throw DimensionError("batch_slice_to_image: bad index");
    int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Tensor one = Tensor::zeros({1, C, H, W});
    std::copy_n(t.data() + static_cast<int64_t>(n) * C * H * W,
                static_cast<int64_t>(C) * H * W, one.data());
    return tensor_to_image(one);
}

inline double mean_squared_error(const Image8& a, const Image8& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionError("mean_squared_error: image dims differ");
    double s = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

}  // namespace clab
