#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compresslab/codec/dct_codec.hpp"
#include "compresslab/codec/learned_codec.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/metrics/ms_ssim.hpp"
#include "compresslab/metrics/psnr.hpp"

// Rate-distortion sweeps.  A CodeFn runs one encode/decode round trip at a
// given knob setting (DCT quality or learned-codec lambda) and reports the
// decoded image plus the measured bits per pixel; rd_curve averages rate
// and quality over an image set per knob and returns points sorted by bpp.

namespace clab {

struct RatePoint {
    double bpp = 0.0;
    double psnr_db = 0.0;
    double ms_ssim = 0.0;
    double knob = 0.0;
};

using CodeFn = std::function<std::pair<Image8, double>(const Image8&, double)>;

inline CodeFn dct_code_fn() {
    return [](const Image8& image, double knob) {
        Bitstream bs = dct_encode(image, static_cast<int>(knob));
        return std::make_pair(dct_decode(bs), bs.bpp());
    };
}

/// Dispatches on the knob (lambda) to one of several trained models.
inline CodeFn learned_code_fn(
    const std::map<double, const LearnedCodecModel*>& models) {
    return [models](const Image8& image, double knob) {
        auto it = models.find(knob);
        if (it == models.end() || it->second == nullptr)
            throw UsageError("no learned codec model for lambda " +
                             std::to_string(knob));
        Bitstream bs = learned_encode(*it->second, image);
        return std::make_pair(learned_decode(*it->second, bs), bs.bpp());
    };
}

inline CodeFn learned_code_fn(const LearnedCodecModel& model) {
    return [&model](const Image8& image, double) {
        Bitstream bs = learned_encode(model, image);
        return std::make_pair(learned_decode(model, bs), bs.bpp());
    };
}

inline std::vector<RatePoint> rd_curve(const std::vector<Image8>& images,
                                       const CodeFn& code_fn,
                                       const std::vector<double>& knobs) {
    if (images.empty()) throw UsageError("rd_curve needs at least one image");
    if (knobs.empty()) throw UsageError("rd_curve needs at least one knob value");
    std::vector<RatePoint> points;
    points.reserve(knobs.size());
    for (double knob : knobs) {
        RatePoint pt;
        pt.knob = knob;
        for (const auto& image : images) {
            auto [decoded, bpp] = code_fn(image, knob);
            pt.bpp += bpp;
            pt.psnr_db += psnr_db(decoded, image);
            pt.ms_ssim += ms_ssim(decoded, image);
        }
        double n = static_cast<double>(images.size());
        pt.bpp /= n;
        pt.psnr_db /= n;
        pt.ms_ssim /= n;
        points.push_back(pt);
    }
    std::sort(points.begin(), points.end(),
              [](const RatePoint& a, const RatePoint& b) { return a.bpp < b.bpp; });
    return points;
}

}  // namespace clab
