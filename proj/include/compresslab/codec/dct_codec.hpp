#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "compresslab/codec/bitstream.hpp"
#include "compresslab/codec/range_coder.hpp"
#include "compresslab/core/image.hpp"

// Block-transform codec: RGB -> BT.601 YCbCr (no chroma subsampling, small
// colored objects matter downstream), reflect-pad to multiples of 8,
// orthonormal 8x8 DCT-II, uniform quantization with quality-scaled JPEG base
// tables, zigzag scan, and adaptive binary range coding of
// significance/sign/magnitude with (band, previous-significance) contexts.
// DC coefficients are coded differentially per channel in raster order, and
// each block carries a has-any-AC flag so flat content costs ~2 adaptive
// bits per block.
//
// A separate lossless mode (left/above pixel prediction, same magnitude
// coder) provides the uncompressed-reference rate used in cost accounting.

namespace clab {

namespace dct_detail {

inline const std::array<int, 64>& zigzag_order() {
    static const std::array<int, 64> zz = [] {
        std::array<int, 64> t{};
        int x = 0, y = 0;
        for (int k = 0; k < 64; ++k) {
            t[static_cast<size_t>(k)] = y * 8 + x;
            if ((x + y) % 2 == 0) {  // moving up-right
                if (x == 7) ++y;
                else if (y == 0) ++x;
                else { ++x; --y; }
            } else {  // moving down-left
                if (y == 7) ++x;
                else if (x == 0) ++y;
                else { --x; ++y; }
            }
        }
        return t;
    }();
    return zz;
}

inline const std::array<double, 64>& dct_matrix() {
    static const std::array<double, 64> m = [] {
        std::array<double, 64> t{};
        const double pi = std::acos(-1.0);
        for (int u = 0; u < 8; ++u) {
            double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x)
                t[static_cast<size_t>(u * 8 + x)] =
                    c * std::cos((2 * x + 1) * u * pi / 16.0);
        }
        return t;
    }();
    return m;
}

// coef = M X M^T (orthonormal analysis); X = M^T C M (synthesis)
inline void fdct8x8(const double* x, double* coef) {
    const auto& m = dct_matrix();
    double tmp[64];
    for (int u = 0; u < 8; ++u)
        for (int j = 0; j < 8; ++j) {
            double s = 0.0;
            for (int i = 0; i < 8; ++i) s += m[u * 8 + i] * x[i * 8 + j];
            tmp[u * 8 + j] = s;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int j = 0; j < 8; ++j) s += tmp[u * 8 + j] * m[v * 8 + j];
            coef[u * 8 + v] = s;
        }
}

inline void idct8x8(const double* coef, double* x) {
    const auto& m = dct_matrix();
    double tmp[64];
    for (int i = 0; i < 8; ++i)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int u = 0; u < 8; ++u) s += m[u * 8 + i] * coef[u * 8 + v];
            tmp[i * 8 + v] = s;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double s = 0.0;
            for (int v = 0; v < 8; ++v) s += tmp[i * 8 + v] * m[v * 8 + j];
            x[i * 8 + j] = s;
        }
}

inline const int* base_table(bool luma) {
    static const int kLuma[64] = {
        16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
        14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
        18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    static const int kChroma[64] = {
        17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
        24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
        99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
        99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
    return luma ? kLuma : kChroma;
}

/// JPEG-style quality scaling; quality 100 degenerates to step 1 everywhere.
inline void quant_steps(int quality, bool luma, int* steps) {
    double scale = quality >= 50 ? (2.0 - quality / 50.0) : (50.0 / quality);
    const int* base = base_table(luma);
    for (int i = 0; i < 64; ++i)
        steps[i] = std::max(1, static_cast<int>(std::lround(base[i] * scale)));
}

// Adaptive model bank per channel class (luma / chroma). AC contexts are
// (band: low zigzag 1..9, high 10..63) x (previous coefficient significant).
struct BlockModels {
    AdaptiveBitModel dc_sig;
    MagnitudeModel dc_mag;
    AdaptiveBitModel has_ac;
    AdaptiveBitModel ac_sig[2][2];
    MagnitudeModel ac_mag[2];
    AdaptiveBitModel ac_last[2];
};

inline int ac_band(int zz_index) { return zz_index <= 9 ? 0 : 1; }

inline void encode_block(RangeEncoder& enc, BlockModels& m, const int* zz,
                         int& prev_dc) {
    int d = zz[0] - prev_dc;
    prev_dc = zz[0];
    enc.encode_bit(m.dc_sig, d != 0);
    if (d != 0) {
        enc.encode_bypass(d < 0);
        encode_magnitude(enc, m.dc_mag, static_cast<uint32_t>(std::abs(d)));
    }
    int last = 0;
    for (int i = 1; i < 64; ++i)
        if (zz[i] != 0) last = i;
    enc.encode_bit(m.has_ac, last != 0);
    if (last == 0) return;
    int prev_sig = 0;
    for (int i = 1; i < 64; ++i) {
        int band = ac_band(i);
        int sig = zz[i] != 0;
        enc.encode_bit(m.ac_sig[band][prev_sig], sig);
        if (sig) {
            enc.encode_bypass(zz[i] < 0);
            encode_magnitude(enc, m.ac_mag[band],
                             static_cast<uint32_t>(std::abs(zz[i])));
            int is_last = i == last;
            enc.encode_bit(m.ac_last[band], is_last);
            if (is_last) return;
        }
        prev_sig = sig;
    }
}

inline void decode_block(RangeDecoder& dec, BlockModels& m, int* zz,
                         int& prev_dc) {
    for (int i = 0; i < 64; ++i) zz[i] = 0;
    if (dec.decode_bit(m.dc_sig)) {
        int negative = dec.decode_bypass();
        int mag = static_cast<int>(decode_magnitude(dec, m.dc_mag));
        zz[0] = prev_dc + (negative ? -mag : mag);
    } else {
        zz[0] = prev_dc;
    }
    prev_dc = zz[0];
    if (!dec.decode_bit(m.has_ac)) return;
    int prev_sig = 0;
    for (int i = 1; i < 64; ++i) {
        int band = ac_band(i);
        int sig = dec.decode_bit(m.ac_sig[band][prev_sig]);
        if (sig) {
            int negative = dec.decode_bypass();
            int mag = static_cast<int>(decode_magnitude(dec, m.ac_mag[band]));
            zz[i] = negative ? -mag : mag;
            if (dec.decode_bit(m.ac_last[band])) return;
        }
        prev_sig = sig;
    }
}

/// Reflect-padded, zero-centered YCbCr planes from an RGB image.
inline std::array<std::vector<double>, 3> to_ycbcr_planes(const Image8& im,
                                                          int padW, int padH) {
    std::array<std::vector<double>, 3> planes;
    for (auto& p : planes) p.resize(static_cast<size_t>(padW) * padH);
    auto refl = [](int i, int n) {
        if (i >= n) i = 2 * n - 2 - i;
        return std::clamp(i, 0, n - 1);
    };
    for (int y = 0; y < padH; ++y) {
        int sy = refl(y, im.height);
        for (int x = 0; x < padW; ++x) {
            int sx = refl(x, im.width);
            double r = im.at(sy, sx, 0), g = im.at(sy, sx, 1), b = im.at(sy, sx, 2);
            size_t o = static_cast<size_t>(y) * padW + x;
            planes[0][o] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][o] = -0.168736 * r - 0.331264 * g + 0.5 * b;
            planes[2][o] = 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    }
    return planes;
}

inline Image8 from_ycbcr_planes(const std::array<std::vector<double>, 3>& planes,
                                int padW, int width, int height) {
    Image8 im = Image8::make(width, height, 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            size_t o = static_cast<size_t>(y) * padW + x;
            double yy = planes[0][o] + 128.0, cb = planes[1][o], cr = planes[2][o];
            double r = yy + 1.402 * cr;
            double g = yy - 0.344136 * cb - 0.714136 * cr;
            double b = yy + 1.772 * cb;
            im.at(y, x, 0) = static_cast<uint8_t>(std::clamp<long>(std::lround(r), 0, 255));
            im.at(y, x, 1) = static_cast<uint8_t>(std::clamp<long>(std::lround(g), 0, 255));
            im.at(y, x, 2) = static_cast<uint8_t>(std::clamp<long>(std::lround(b), 0, 255));
        }
    return im;
}

}  // namespace dct_detail

inline Bitstream dct_encode(const Image8& image, int quality) {
    if (image.width <= 0 || image.height <= 0 || image.pixels.empty())
        throw UsageError("dct_encode: empty image");
    if (image.channels != 3)
        throw UsageError("dct_encode: expected an RGB image, got " +
                         std::to_string(image.channels) + " channel(s)");
    if (quality < 1 || quality > 100)
        throw UsageError("dct_encode: quality must be in [1,100], got " +
                         std::to_string(quality));

    int padW = (image.width + 7) / 8 * 8;
    int padH = (image.height + 7) / 8 * 8;
    auto planes = dct_detail::to_ycbcr_planes(image, padW, padH);

    int steps[2][64];
    dct_detail::quant_steps(quality, true, steps[0]);
    dct_detail::quant_steps(quality, false, steps[1]);
    const auto& zz_order = dct_detail::zigzag_order();

    RangeEncoder enc;
    dct_detail::BlockModels models[2];  // luma, chroma
    for (int ch = 0; ch < 3; ++ch) {
        int cls = ch == 0 ? 0 : 1;
        int prev_dc = 0;
        for (int by = 0; by < padH; by += 8)
            for (int bx = 0; bx < padW; bx += 8) {
                double block[64], coef[64];
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        block[i * 8 + j] =
                            planes[static_cast<size_t>(ch)]
                                  [static_cast<size_t>(by + i) * padW + bx + j];
                dct_detail::fdct8x8(block, coef);
                int zz[64];
                for (int k = 0; k < 64; ++k) {
                    int pos = zz_order[static_cast<size_t>(k)];
                    zz[k] = static_cast<int>(
                        std::lround(coef[pos] / steps[cls][pos]));
                }
                dct_detail::encode_block(enc, models[cls], zz, prev_dc);
            }
    }

    Bitstream bs;
    bs.header.codec_id = kCodecDct;
    bs.header.width = static_cast<uint32_t>(image.width);
    bs.header.height = static_cast<uint32_t>(image.height);
    bs.header.channels = 3;
    bs.header.knob = static_cast<float>(quality);
    bs.payload = enc.finish();
    return bs;
}

inline Image8 dct_decode(const Bitstream& bs) {
    if (bs.header.codec_id != kCodecDct)
        throw UsageError("dct_decode: bitstream codec id " +
                         std::to_string(bs.header.codec_id) + " is not DCT");
    int width = static_cast<int>(bs.header.width);
    int height = static_cast<int>(bs.header.height);
    int quality = static_cast<int>(std::lround(bs.header.knob));
    if (quality < 1 || quality > 100)
        throw CorruptStreamError("bitstream quality knob out of range", 20);

    int padW = (width + 7) / 8 * 8;
    int padH = (height + 7) / 8 * 8;
    int steps[2][64];
    dct_detail::quant_steps(quality, true, steps[0]);
    dct_detail::quant_steps(quality, false, steps[1]);
    const auto& zz_order = dct_detail::zigzag_order();

    std::array<std::vector<double>, 3> planes;
    for (auto& p : planes) p.resize(static_cast<size_t>(padW) * padH);

    RangeDecoder dec(bs.payload);
    dct_detail::BlockModels models[2];
    for (int ch = 0; ch < 3; ++ch) {
        int cls = ch == 0 ? 0 : 1;
        int prev_dc = 0;
        for (int by = 0; by < padH; by += 8)
            for (int bx = 0; bx < padW; bx += 8) {
                int zz[64];
                dct_detail::decode_block(dec, models[cls], zz, prev_dc);
                double coef[64], block[64];
                for (int k = 0; k < 64; ++k) {
                    int pos = zz_order[static_cast<size_t>(k)];
                    coef[pos] = static_cast<double>(zz[k]) * steps[cls][pos];
                }
                dct_detail::idct8x8(coef, block);
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        planes[static_cast<size_t>(ch)]
                              [static_cast<size_t>(by + i) * padW + bx + j] =
                            block[i * 8 + j];
            }
    }
    return dct_detail::from_ycbcr_planes(planes, padW, width, height);
}

// ---------------------------------------------------------------------------
// Lossless mode: per-channel prediction (left neighbor; above at row starts;
// 128 at the very first pixel) with adaptively coded residuals. Its bpp is
// the uncompressed-dataset reference rate for cost accounting.
// ---------------------------------------------------------------------------

inline Bitstream lossless_encode(const Image8& image) {
    if (image.width <= 0 || image.height <= 0 || image.pixels.empty())
        throw UsageError("lossless_encode: empty image");
    if (image.channels != 1 && image.channels != 3)
        throw UsageError("lossless_encode: expected 1 or 3 channels");

    RangeEncoder enc;
    struct PixelModels {
        AdaptiveBitModel sig;
        MagnitudeModel mag;
    };
    std::vector<PixelModels> models(static_cast<size_t>(image.channels));
    for (int c = 0; c < image.channels; ++c) {
        auto& m = models[static_cast<size_t>(c)];
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                int pred = x > 0   ? image.at(y, x - 1, c)
                           : y > 0 ? image.at(y - 1, x, c)
                                   : 128;
                int r = static_cast<int>(image.at(y, x, c)) - pred;
                enc.encode_bit(m.sig, r != 0);
                if (r != 0) {
                    enc.encode_bypass(r < 0);
                    encode_magnitude(enc, m.mag, static_cast<uint32_t>(std::abs(r)));
                }
            }
    }
    Bitstream bs;
    bs.header.codec_id = kCodecLossless;
    bs.header.width = static_cast<uint32_t>(image.width);
    bs.header.height = static_cast<uint32_t>(image.height);
    bs.header.channels = static_cast<uint16_t>(image.channels);
    bs.payload = enc.finish();
    return bs;
}

inline Image8 lossless_decode(const Bitstream& bs) {
    if (bs.header.codec_id != kCodecLossless)
        throw UsageError("lossless_decode: bitstream codec id " +
                         std::to_string(bs.header.codec_id) + " is not lossless");
    int width = static_cast<int>(bs.header.width);
    int height = static_cast<int>(bs.header.height);
    int channels = static_cast<int>(bs.header.channels);
    if (channels != 1 && channels != 3)
        throw CorruptStreamError("lossless bitstream has invalid channel count", 16);
    Image8 im = Image8::make(width, height, channels);
    RangeDecoder dec(bs.payload);
    struct PixelModels {
        AdaptiveBitModel sig;
        MagnitudeModel mag;
    };
    std::vector<PixelModels> models(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        auto& m = models[static_cast<size_t>(c)];
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                int pred = x > 0   ? im.at(y, x - 1, c)
                           : y > 0 ? im.at(y - 1, x, c)
                                   : 128;
                int r = 0;
                if (dec.decode_bit(m.sig)) {
                    int negative = dec.decode_bypass();
                    int mag = static_cast<int>(decode_magnitude(dec, m.mag));
                    r = negative ? -mag : mag;
                }
                int v = pred + r;
                if (v < 0 || v > 255)
                    throw CorruptStreamError("lossless residual out of range",
                                             dec.bytes_consumed());
                im.at(y, x, c) = static_cast<uint8_t>(v);
            }
    }
    return im;
}

}  // namespace clab
