#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/nn/unet.hpp"

// Feature alignment study.
//
// Takes a segmenter trained on originals and compares how a shallow encoder
// stage responds to two image sets: each channel's activation is averaged
// over every pixel of every image in a set, giving one (mean_a, mean_b)
// point per channel.  If set B excites the early features exactly like set A
// does, the points sit on the identity line and their Pearson correlation is
// 1; degradations that derail the features show up as scatter.  The report
// doubles as plot data (one CSV row per channel).

namespace clab {

struct FeatureAlignmentReport {
    int layer = 1;  // encoder stage the means were read from
    std::vector<double> mean_a;
    std::vector<double> mean_b;
    double correlation = 0.0;
};

inline void to_json(nlohmann::json& j, const FeatureAlignmentReport& r) {
    j = {{"layer", r.layer},
         {"mean_a", r.mean_a},
         {"mean_b", r.mean_b},
         {"correlation", r.correlation}};
}

namespace analysis_detail {

/// Image -> [1,3,H',W'] tensor in [0,1], reflection-padded so the segmenter
/// accepts it.
inline Tensor unet_input(const Image8& im) {
    if (im.channels != 3)
        throw DimensionError("feature alignment expects RGB images");
    int H = im.height, W = im.width;
    int PH = std::max(16, (H + 15) / 16 * 16);
    int PW = std::max(16, (W + 15) / 16 * 16);
    Tensor x = image_to_tensor(im);
    if (PH != H || PW != W)
        x = reflection_pad2d_asym(nullptr, x, 0, PH - H, 0, PW - W);
    return x;
}

/// Per-channel mean activation of one encoder stage over a whole image set.
inline std::vector<double> channel_means(const Unet& model,
                                         const std::vector<Image8>& set,
                                         int layer) {
    std::vector<double> sums;
    int64_t count = 0;
    for (const auto& im : set) {
        Tensor f = model.encoder_stage(unet_input(im), layer);
        int C = f.dim(1), H = f.dim(2), W = f.dim(3);
        if (sums.empty()) sums.assign(C, 0.0);
        const float* d = f.data();
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
                s += d[static_cast<int64_t>(c) * H * W + i];
            sums[c] += s;
        }
        count += static_cast<int64_t>(H) * W;
    }
    for (double& s : sums) s /= static_cast<double>(count);
    return sums;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
    size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return a == b ? 1.0 : 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace analysis_detail

/// Compares how a shallow encoder stage of `model` responds to two image
/// sets; see the file comment.  When csv_path is set, writes one
/// channel,mean_a,mean_b row per channel for scatter plotting.
inline FeatureAlignmentReport feature_alignment(const Unet& model,
                                                const std::vector<Image8>& a,
                                                const std::vector<Image8>& b,
                                                int layer = 1,
                                                const std::string& csv_path = "") {
    if (a.empty() || b.empty())
        throw UsageError("feature alignment needs non-empty image sets");
    FeatureAlignmentReport rep;
    rep.layer = layer;
    rep.mean_a = analysis_detail::channel_means(model, a, layer);
    rep.mean_b = analysis_detail::channel_means(model, b, layer);
    rep.correlation = analysis_detail::pearson(rep.mean_a, rep.mean_b);
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw DataError("cannot write " + csv_path);
        csv.precision(std::numeric_limits<double>::max_digits10);
        csv << "channel,mean_a,mean_b\n";
        for (size_t c = 0; c < rep.mean_a.size(); ++c)
            csv << c << "," << rep.mean_a[c] << "," << rep.mean_b[c] << "\n";
    }
    return rep;
}

}  // namespace clab
