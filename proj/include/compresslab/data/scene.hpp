#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/rng.hpp"

// Parametric scene generator.  Scenes are a textured background (class 0)
// with rotated, textured ellipses and regular polygons of classes 1..K-1.
// Each class is tied to a distinct texture frequency band, so heavy
// compression provably removes the texture statistics that identify a
// class — most visibly on small objects, whose density is a dial.
//
// Every object is recorded in the scene's latent list with its class, size
// bucket, and 4x4 position cell (the discrete semantic variable downstream
// probes estimate), plus the full geometry, so the label map can be
// re-rasterised from the latent list alone and compared bit for bit.

namespace clab {

struct SceneSpec {
    int size = 96;
    int num_classes = 8;  // including background class 0; void id == num_classes
    // nominal object diameter range in px per class; entry 0 (background)
    // is unused.  Ranges must start >= 11 px: the 4-10 px bucket is
    // reserved for the small-object channel below.
    std::vector<std::pair<int, int>> size_ranges;
    // objects per image in the 4-10 px range, fractional part taken as a
    // probability
    double small_object_density = 0.0;
    // the trailing num_small_classes object classes belong exclusively to
    // the small-object channel (the analogue of categories like pedestrians
    // that are small in street scenes); regular objects draw from the rest
    int num_small_classes = 0;
    // texture band (cycles/px) per class; entry 0 textures the background
    std::vector<std::pair<double, double>> texture_bands;
    int palette_id = 0;
    double background_sigma = 4.0;  // additive pixel noise, 8-bit units
    int min_objects = 4, max_objects = 7;  // regular (non-small) objects
};

struct SceneObject {
    int class_id = 0;
    int size_bucket = 0;  // 0: 4-10 px, 1: 11-24 px, 2: 25+ px
    int cell = 0;         // 4x4 position grid, row-major
    bool is_ellipse = true;
    int sides = 0;  // regular polygon vertex count; 0 for ellipses
    double cx = 0.0, cy = 0.0;
    double rx = 1.0, ry = 1.0;
    double angle = 0.0;
    double size_px = 0.0;  // nominal diameter (2*rx)
};

struct LabeledImage {
    Image8 image;
    SegMap labels;
    std::vector<SceneObject> latent;
};

inline constexpr int kPositionCells = 16;  // 4x4 grid
inline constexpr int kSizeBuckets = 3;

inline int size_bucket_of(double size_px) {
    if (size_px <= 10.0) return 0;
    if (size_px <= 24.0) return 1;
    return 2;
}

inline int position_cell_of(double cx, double cy, int size) {
    int gx = std::clamp(static_cast<int>(cx * 4.0 / size), 0, 3);
    int gy = std::clamp(static_cast<int>(cy * 4.0 / size), 0, 3);
    return gy * 4 + gx;
}

namespace scene_detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    double r = std::fabs(h * 6.0 - 3.0) - 1.0;
    double g = 2.0 - std::fabs(h * 6.0 - 2.0);
    double b = 2.0 - std::fabs(h * 6.0 - 4.0);
    double base[3] = {std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0),
                      std::clamp(b, 0.0, 1.0)};
    for (int c = 0; c < 3; ++c) rgb[c] = ((base[c] - 1.0) * s + 1.0) * v;
}

/// Point-inside test in the object's rotated local frame.
inline bool covers(const SceneObject& o, double px, double py) {
    double dx = px - o.cx, dy = py - o.cy;
    double ca = std::cos(o.angle), sa = std::sin(o.angle);
    double lx = (ca * dx + sa * dy) / o.rx;
    double ly = (-sa * dx + ca * dy) / o.ry;
    if (o.is_ellipse) return lx * lx + ly * ly <= 1.0;
    // regular polygon with unit circumradius in the local frame
    double r = std::hypot(lx, ly);
    if (r < 1e-12) return true;
    double theta = std::atan2(ly, lx);
    double sector = 2.0 * M_PI / o.sides;
    double local = std::fmod(theta + 2.0 * M_PI, sector) - sector / 2.0;
    // distance to the edge at this angle, for an inscribed-edge polygon
    double edge = std::cos(sector / 2.0) / std::cos(local);
    return r <= edge;
}

// Band-limited texture: a few random-direction sinusoids with frequencies
// drawn from the class band.
struct Texture {
    double fx[4], fy[4], phase[4];
    void sample(Rng& rng, double f_lo, double f_hi) {
        for (int s = 0; s < 4; ++s) {
            double f = f_lo + rng.uniform() * (f_hi - f_lo);
            double dir = rng.uniform() * 2.0 * M_PI;
            fx[s] = f * std::cos(dir);
            fy[s] = f * std::sin(dir);
            phase[s] = rng.uniform() * 2.0 * M_PI;
        }
    }
    double at(double x, double y) const {
        double v = 0.0;
        for (int s = 0; s < 4; ++s)
            v += std::sin(2.0 * M_PI * (fx[s] * x + fy[s] * y) + phase[s]);
        return v * 0.25;  // roughly [-1, 1]
    }
};

}  // namespace scene_detail

/// Base color of a class under a palette.  Palette 1 (auxiliary domain)
/// rotates hues and changes saturation/brightness.
inline void palette_color(int palette_id, int class_id, int num_classes,
                          double rgb[3]) {
    double h = static_cast<double>(class_id) / num_classes;
    double s = 0.55, v = 170.0;
    if (palette_id == 1) {
        h += 0.37;
        s = 0.75;
        v = 135.0;
    }
    if (class_id == 0) {  // muted background
        s *= 0.35;
        v *= 0.75;
    }
    scene_detail::hsv_to_rgb(h, s, v / 255.0, rgb);
    for (int c = 0; c < 3; ++c) rgb[c] *= 255.0;
}

inline void validate_scene_spec(const SceneSpec& spec) {
    if (spec.num_classes < 2)
        throw UsageError("scene spec needs num_classes >= 2");
    if (spec.size < 32) throw UsageError("scene spec needs size >= 32");
    if (static_cast<int>(spec.size_ranges.size()) != spec.num_classes ||
        static_cast<int>(spec.texture_bands.size()) != spec.num_classes)
        throw UsageError(
            "scene spec needs one size range and one texture band per class");
    if (spec.small_object_density < 0.0)
        throw UsageError("small_object_density must be >= 0");
    if (spec.small_object_density > 0.0) {
        if (spec.num_small_classes < 1 ||
            spec.num_small_classes > spec.num_classes - 2)
            throw UsageError(
                "a small-object channel needs 1 <= num_small_classes <= K-2 "
                "dedicated classes");
    } else if (spec.num_small_classes != 0) {
        throw UsageError(
            "num_small_classes without small_object_density leaves classes "
            "that can never appear");
    }
    if (spec.min_objects < 0 || spec.max_objects < spec.min_objects)
        throw UsageError("scene spec object count range is invalid");
    for (int k = 1; k < spec.num_classes; ++k) {
        auto [lo, hi] = spec.size_ranges[k];
        if (lo < 11 || hi < lo)
            throw UsageError(
                "class size ranges must sit above the 4-10 px small-object "
                "bucket (min 11 px), got [" +
                std::to_string(lo) + "," + std::to_string(hi) + "] for class " +
                std::to_string(k));
        if (hi > spec.size)
            throw UsageError("class size exceeds the image size");
    }
    for (int k = 0; k < spec.num_classes; ++k) {
        auto [lo, hi] = spec.texture_bands[k];
        if (!(lo > 0.0) || hi < lo || hi > 0.5)
            throw UsageError("texture bands must satisfy 0 < lo <= hi <= 0.5");
    }
}

/// Replays the latent object list over a void-free canvas: background class
/// 0, later objects painted over earlier ones.  generate_scene uses this
/// same function for its stored labels, so re-rasterising a scene's latent
/// list must reproduce them exactly.
inline SegMap rasterize_labels(const std::vector<SceneObject>& latent, int size,
                               int num_classes) {
    SegMap labels = SegMap::make(size, size, num_classes);
    std::fill(labels.ids.begin(), labels.ids.end(), static_cast<uint8_t>(0));
    for (const auto& o : latent) {
        double r = std::max(o.rx, o.ry);
        int x0 = std::max(0, static_cast<int>(std::floor(o.cx - r - 1)));
        int x1 = std::min(size - 1, static_cast<int>(std::ceil(o.cx + r + 1)));
        int y0 = std::max(0, static_cast<int>(std::floor(o.cy - r - 1)));
        int y1 = std::min(size - 1, static_cast<int>(std::ceil(o.cy + r + 1)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (scene_detail::covers(o, x + 0.5, y + 0.5))
                    labels.at(y, x) = static_cast<uint8_t>(o.class_id);
    }
    return labels;
}

namespace scene_detail {

/// Index of the topmost object covering each pixel, -1 for background.
inline std::vector<int> rasterize_ownership(const std::vector<SceneObject>& latent,
                                            int size) {
    std::vector<int> owner(static_cast<size_t>(size) * size, -1);
    for (size_t i = 0; i < latent.size(); ++i) {
        const auto& o = latent[i];
        double r = std::max(o.rx, o.ry);
        int x0 = std::max(0, static_cast<int>(std::floor(o.cx - r - 1)));
        int x1 = std::min(size - 1, static_cast<int>(std::ceil(o.cx + r + 1)));
        int y0 = std::max(0, static_cast<int>(std::floor(o.cy - r - 1)));
        int y1 = std::min(size - 1, static_cast<int>(std::ceil(o.cy + r + 1)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (covers(o, x + 0.5, y + 0.5))
                    owner[static_cast<size_t>(y) * size + x] = static_cast<int>(i);
    }
    return owner;
}

inline SceneObject sample_object(Rng& rng, const SceneSpec& spec, int class_id,
                                 double size_px) {
    SceneObject o;
    o.class_id = class_id;
    o.size_px = size_px;
    o.rx = size_px / 2.0;
    o.ry = o.rx * (0.6 + rng.uniform() * 0.4);
    o.angle = rng.uniform() * 2.0 * M_PI;
    o.is_ellipse = rng.coin();
    o.sides = o.is_ellipse ? 0 : 3 + static_cast<int>(rng.uniform_int(4));
    double margin = o.rx + 1.0;
    o.cx = margin + rng.uniform() * (spec.size - 2.0 * margin);
    o.cy = margin + rng.uniform() * (spec.size - 2.0 * margin);
    o.size_bucket = size_bucket_of(size_px);
    o.cell = position_cell_of(o.cx, o.cy, spec.size);
    return o;
}

}  // namespace scene_detail

inline LabeledImage generate_scene(uint64_t seed, const SceneSpec& spec) {
    validate_scene_spec(spec);
    const int S = spec.size;
    const int K = spec.num_classes;

    for (int attempt = 0; attempt < 8; ++attempt) {
        Rng rng = Rng(seed).fork("scene-attempt-" + std::to_string(attempt));

        // object inventory: regular objects first, then the small channel
        int n_regular =
            spec.min_objects +
            static_cast<int>(rng.uniform_int(spec.max_objects - spec.min_objects + 1));
        int n_small = static_cast<int>(spec.small_object_density);
        if (rng.uniform() <
            spec.small_object_density - std::floor(spec.small_object_density))
            ++n_small;

        std::vector<SceneObject> latent;
        std::vector<char> occupied(static_cast<size_t>(S) * S, 0);
        bool placed_all = true;

        auto try_place = [&](int class_id, double size_px) {
            for (int trial = 0; trial < 60; ++trial) {
                SceneObject o = scene_detail::sample_object(rng, spec, class_id,
                                                            size_px);
                // accept if at most 30% of the object lands on occupied px
                int own = 0, overlap = 0;
                int x0 = std::max(0, static_cast<int>(o.cx - o.rx - 1));
                int x1 = std::min(S - 1, static_cast<int>(o.cx + o.rx + 1));
                int y0 = std::max(0, static_cast<int>(o.cy - o.rx - 1));
                int y1 = std::min(S - 1, static_cast<int>(o.cy + o.rx + 1));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x)
                        if (scene_detail::covers(o, x + 0.5, y + 0.5)) {
                            ++own;
                            overlap += occupied[static_cast<size_t>(y) * S + x];
                        }
                if (own == 0 || overlap * 10 > own * 3) continue;
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x)
                        if (scene_detail::covers(o, x + 0.5, y + 0.5))
                            occupied[static_cast<size_t>(y) * S + x] = 1;
                latent.push_back(o);
                return true;
            }
            return false;
        };

        int n_regular_classes = K - 1 - spec.num_small_classes;
        for (int i = 0; i < n_regular && placed_all; ++i) {
            int class_id = 1 + static_cast<int>(rng.uniform_int(n_regular_classes));
            auto [lo, hi] = spec.size_ranges[class_id];
            double size_px = lo + rng.uniform() * (hi - lo);
            placed_all = try_place(class_id, size_px);
        }
        for (int i = 0; i < n_small && placed_all; ++i) {
            int class_id = K - spec.num_small_classes +
                           static_cast<int>(rng.uniform_int(spec.num_small_classes));
            placed_all = try_place(class_id, 4.0 + rng.uniform() * 6.0);
        }
        if (!placed_all) continue;

        // every latent object must keep at least one visible pixel
        auto owner = scene_detail::rasterize_ownership(latent, S);
        std::vector<char> visible(latent.size(), 0);
        for (int v : owner)
            if (v >= 0) visible[v] = 1;
        if (std::find(visible.begin(), visible.end(), 0) != visible.end())
            continue;

        // render: per-class palette color modulated by per-object textures
        LabeledImage scene;
        scene.latent = latent;
        scene.labels = rasterize_labels(latent, S, K);
        scene.image = Image8::make(S, S, 3);

        scene_detail::Texture bg_tex;
        bg_tex.sample(rng, spec.texture_bands[0].first, spec.texture_bands[0].second);
        std::vector<scene_detail::Texture> obj_tex(latent.size());
        for (size_t i = 0; i < latent.size(); ++i) {
            auto [lo, hi] = spec.texture_bands[latent[i].class_id];
            obj_tex[i].sample(rng, lo, hi);
        }
        double bg_rgb[3];
        palette_color(spec.palette_id, 0, K, bg_rgb);
        std::vector<std::array<double, 3>> class_rgb(K);
        for (int k = 0; k < K; ++k)
            palette_color(spec.palette_id, k, K, class_rgb[k].data());

        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int idx = owner[static_cast<size_t>(y) * S + x];
                double noise = rng.normal() * spec.background_sigma;
                for (int c = 0; c < 3; ++c) {
                    double v;
                    if (idx < 0) {
                        v = bg_rgb[c] + 26.0 * bg_tex.at(x, y) + noise;
                    } else {
                        const auto& o = latent[idx];
                        v = class_rgb[o.class_id][c] +
                            34.0 * obj_tex[idx].at(x, y) + noise * 0.5;
                    }
                    scene.image.at(y, x, c) =
                        static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
                }
            }
        return scene;
    }
    throw GenerationError(
        "scene placement failed after bounded retries (object density too "
        "high for size " +
        std::to_string(S) + ")");
}

/// Small-object-rich spec: seven object classes in distinct texture bands,
/// three extra 4-10 px objects per image on average.
inline SceneSpec urban_like_spec() {
    SceneSpec spec;
    spec.size = 96;
    spec.num_classes = 8;
    spec.size_ranges = {{96, 96}, {12, 20}, {14, 24}, {16, 28},
                        {18, 30}, {20, 34}, {24, 40}, {28, 44}};
    spec.texture_bands = {{0.010, 0.030}, {0.050, 0.090}, {0.090, 0.130},
                          {0.130, 0.180}, {0.180, 0.240}, {0.240, 0.300},
                          {0.300, 0.380}, {0.380, 0.460}};
    spec.small_object_density = 3.0;
    spec.num_small_classes = 2;
    spec.palette_id = 0;
    spec.background_sigma = 4.0;
    spec.min_objects = 4;
    spec.max_objects = 7;
    return spec;
}

/// Large-object regime: same classes and bands, no small-object channel.
inline SceneSpec drone_like_spec() {
    SceneSpec spec = urban_like_spec();
    spec.size_ranges = {{96, 96}, {26, 40}, {28, 42}, {30, 44},
                        {32, 46}, {34, 48}, {36, 50}, {38, 52}};
    spec.small_object_density = 0.0;
    spec.num_small_classes = 0;
    spec.min_objects = 3;
    spec.max_objects = 5;
    return spec;
}

/// Class ids reserved for the small-object channel (empty when disabled);
/// the complement is the large-object group in per-class analyses.
inline std::vector<int> small_class_ids(const SceneSpec& spec) {
    std::vector<int> ids;
    for (int k = spec.num_classes - spec.num_small_classes; k < spec.num_classes;
         ++k)
        ids.push_back(k);
    return ids;
}

}  // namespace clab
