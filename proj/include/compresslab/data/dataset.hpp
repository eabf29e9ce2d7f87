#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/png_io.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/data/scene.hpp"
#include "json.hpp"

// Dataset materialisation: splits of generated scenes written to disk as
// image/label PNG pairs plus a JSON manifest per role.  Roles draw from
// disjoint seed ranges, so no two manifests ever share a file or a scene.

namespace clab {

struct SplitSpec {
    int seg_train = 0;
    int seg_eval = 0;
    int restore_train = 0;
    int auxiliary = 0;
    // fraction of the seg-train count granted as pristine originals
    // (a separate draw from the same distribution)
    double privileged_fraction = 0.25;
};

struct DatasetEntry {
    std::string image;  // path relative to the manifest directory
    std::string label;
    uint64_t seed = 0;
    std::vector<SceneObject> latent;
};

struct Dataset {
    std::string role;
    std::string root;  // directory holding the manifest and its files
    uint64_t spec_hash = 0;
    int num_classes = 0;
    bool has_latent = false;
    std::string provenance;  // e.g. "restored:<generator hash>"; empty if raw
    std::vector<DatasetEntry> entries;

    size_t size() const { return entries.size(); }
    std::string image_path(size_t i) const { return root + "/" + entries[i].image; }
    std::string label_path(size_t i) const { return root + "/" + entries[i].label; }
    Image8 load_image(size_t i) const { return read_png(image_path(i)); }
    SegMap load_labels(size_t i) const {
        return read_label_png(label_path(i), num_classes);
    }
};

/// One dataset per role.  Roles with a zero count come back empty.
struct DatasetBundle {
    Dataset seg_train, seg_eval, restore_train, privileged, auxiliary;
};

namespace data_detail {

inline nlohmann::json spec_to_json(const SceneSpec& s) {
    nlohmann::json j;
    j["size"] = s.size;
    j["num_classes"] = s.num_classes;
    j["size_ranges"] = s.size_ranges;
    j["small_object_density"] = s.small_object_density;
    j["num_small_classes"] = s.num_small_classes;
    j["texture_bands"] = s.texture_bands;
    j["palette_id"] = s.palette_id;
    j["background_sigma"] = s.background_sigma;
    j["min_objects"] = s.min_objects;
    j["max_objects"] = s.max_objects;
    return j;
}

inline SceneSpec spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.size = j.at("size").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.size_ranges = j.at("size_ranges").get<std::vector<std::pair<int, int>>>();
    s.small_object_density = j.at("small_object_density").get<double>();
    s.num_small_classes = j.at("num_small_classes").get<int>();
    s.texture_bands =
        j.at("texture_bands").get<std::vector<std::pair<double, double>>>();
    s.palette_id = j.at("palette_id").get<int>();
    s.background_sigma = j.at("background_sigma").get<double>();
    s.min_objects = j.at("min_objects").get<int>();
    s.max_objects = j.at("max_objects").get<int>();
    return s;
}

inline nlohmann::json object_to_json(const SceneObject& o) {
    return nlohmann::json{{"class", o.class_id}, {"bucket", o.size_bucket},
                          {"cell", o.cell},      {"ellipse", o.is_ellipse},
                          {"sides", o.sides},    {"cx", o.cx},
                          {"cy", o.cy},          {"rx", o.rx},
                          {"ry", o.ry},          {"angle", o.angle},
                          {"size_px", o.size_px}};
}

inline SceneObject object_from_json(const nlohmann::json& j) {
    SceneObject o;
    o.class_id = j.at("class").get<int>();
    o.size_bucket = j.at("bucket").get<int>();
    o.cell = j.at("cell").get<int>();
    o.is_ellipse = j.at("ellipse").get<bool>();
    o.sides = j.at("sides").get<int>();
    o.cx = j.at("cx").get<double>();
    o.cy = j.at("cy").get<double>();
    o.rx = j.at("rx").get<double>();
    o.ry = j.at("ry").get<double>();
    o.angle = j.at("angle").get<double>();
    o.size_px = j.at("size_px").get<double>();
    return o;
}

}  // namespace data_detail

inline uint64_t scene_spec_hash(const SceneSpec& spec) {
    return fnv1a(data_detail::spec_to_json(spec).dump());
}

inline void save_manifest(const Dataset& ds, const std::string& path) {
    nlohmann::json j;
    j["role"] = ds.role;
    j["spec_hash"] = hash_hex(ds.spec_hash);
    j["num_classes"] = ds.num_classes;
    j["has_latent"] = ds.has_latent;
    if (!ds.provenance.empty()) j["provenance"] = ds.provenance;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : ds.entries) {
        nlohmann::json je;
        je["image"] = e.image;
        je["label"] = e.label;
        je["seed"] = e.seed;
        if (ds.has_latent) {
            nlohmann::json lat = nlohmann::json::array();
            for (const auto& o : e.latent) lat.push_back(data_detail::object_to_json(o));
            je["latent"] = lat;
        }
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(1) << "\n";
}

inline Dataset load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    try {
        Dataset ds;
        ds.role = j.at("role").get<std::string>();
        ds.root = std::filesystem::path(path).parent_path().string();
        if (ds.root.empty()) ds.root = ".";
        ds.spec_hash = std::stoull(j.at("spec_hash").get<std::string>(), nullptr, 16);
        ds.num_classes = j.at("num_classes").get<int>();
        ds.has_latent = j.at("has_latent").get<bool>();
        if (j.contains("provenance"))
            ds.provenance = j.at("provenance").get<std::string>();
        for (const auto& je : j.at("entries")) {
            DatasetEntry e;
            e.image = je.at("image").get<std::string>();
            e.label = je.at("label").get<std::string>();
            e.seed = je.at("seed").get<uint64_t>();
            if (ds.has_latent)
                for (const auto& jo : je.at("latent"))
                    e.latent.push_back(data_detail::object_from_json(jo));
            ds.entries.push_back(std::move(e));
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + " is missing fields: " + e.what());
    }
}

/// The auxiliary domain: same scene grammar under a rotated palette with
/// texture bands shifted up by 35%.  Close enough to be plausible input,
/// far enough that a two-sample test separates the domains.
inline SceneSpec auxiliary_domain_spec(const SceneSpec& spec) {
    SceneSpec aux = spec;
    aux.palette_id = spec.palette_id == 1 ? 0 : 1;
    for (auto& [lo, hi] : aux.texture_bands) {
        lo = std::min(0.48, lo * 1.35);
        hi = std::min(0.50, std::max(lo + 0.005, hi * 1.35));
    }
    return aux;
}

namespace data_detail {

// Every role draws seeds from its own fixed-stride window above base_seed.
inline constexpr uint64_t kSeedStride = 1u << 20;

inline Dataset write_role(const SceneSpec& spec, const std::string& role,
                          int role_index, int count, uint64_t base_seed,
                          const std::string& out_dir) {
    Dataset ds;
    ds.role = role;
    ds.root = out_dir + "/" + role;
    ds.spec_hash = scene_spec_hash(spec);
    ds.num_classes = spec.num_classes;
    ds.has_latent = true;
    if (count == 0) return ds;
    std::filesystem::create_directories(ds.root);
    for (int i = 0; i < count; ++i) {
        uint64_t seed = base_seed + kSeedStride * static_cast<uint64_t>(role_index) +
                        static_cast<uint64_t>(i);
        LabeledImage scene = generate_scene(seed, spec);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "scene_%05d", i);
        DatasetEntry e;
        e.image = std::string(stem) + ".png";
        e.label = std::string(stem) + "_label.png";
        e.seed = seed;
        e.latent = std::move(scene.latent);
        write_png(ds.root + "/" + e.image, scene.image);
        write_label_png(ds.root + "/" + e.label, scene.labels);
        ds.entries.push_back(std::move(e));
    }
    save_manifest(ds, ds.root + "/manifest.json");
    return ds;
}

}  // namespace data_detail

/// Generates all split roles under out_dir (one subdirectory per role) and
/// returns their manifests.  Deterministic in (spec, split, base_seed).
inline DatasetBundle make_dataset(const SceneSpec& spec, const SplitSpec& split,
                                  uint64_t base_seed, const std::string& out_dir) {
    validate_scene_spec(spec);
    if (split.seg_train < 0 || split.seg_eval < 0 || split.restore_train < 0 ||
        split.auxiliary < 0)
        throw UsageError("split counts must be >= 0");
    if (!(split.privileged_fraction > 0.0) || split.privileged_fraction > 1.0)
        throw UsageError("privileged_fraction must lie in (0, 1]");
    int privileged = static_cast<int>(
        std::llround(split.privileged_fraction * split.seg_train));
    for (int count : {split.seg_train, split.seg_eval, split.restore_train,
                      split.auxiliary, privileged})
        if (static_cast<uint64_t>(count) >= data_detail::kSeedStride)
            throw UsageError(
                "split role exceeds its seed range; roles would overlap");

    DatasetBundle b;
    b.seg_train =
        data_detail::write_role(spec, "seg_train", 0, split.seg_train, base_seed, out_dir);
    b.seg_eval =
        data_detail::write_role(spec, "seg_eval", 1, split.seg_eval, base_seed, out_dir);
    b.restore_train = data_detail::write_role(spec, "restore_train", 2,
                                              split.restore_train, base_seed, out_dir);
    b.privileged =
        data_detail::write_role(spec, "privileged", 3, privileged, base_seed, out_dir);
    b.auxiliary = data_detail::write_role(auxiliary_domain_spec(spec), "auxiliary", 4,
                                          split.auxiliary, base_seed, out_dir);
    return b;
}

/// Imports an external directory of `<stem>.png` / `<stem>_label.png` pairs.
/// Such data carries no scene latents, so downstream semantic-loss
/// estimators must report themselves unavailable on it.
inline Dataset ingest_png_dataset(const std::string& dir, int num_classes) {
    if (num_classes < 2) throw UsageError("ingest needs num_classes >= 2");
    if (!std::filesystem::is_directory(dir))
        throw DataError("ingest directory does not exist: " + dir);

    const std::string label_suffix = "_label";
    std::vector<std::string> stems;
    for (const auto& de : std::filesystem::directory_iterator(dir)) {
        if (!de.is_regular_file() || de.path().extension() != ".png") continue;
        std::string stem = de.path().stem().string();
        if (stem.size() >= label_suffix.size() &&
            stem.compare(stem.size() - label_suffix.size(), label_suffix.size(),
                         label_suffix) == 0)
            continue;  // label file; paired below
        stems.push_back(stem);
    }
    if (stems.empty()) throw DataError("no image PNGs found in " + dir);
    std::sort(stems.begin(), stems.end());

    Dataset ds;
    ds.role = "ingested";
    ds.root = dir;
    ds.num_classes = num_classes;
    ds.has_latent = false;
    for (const auto& stem : stems) {
        DatasetEntry e;
        e.image = stem + ".png";
        e.label = stem + "_label.png";
        if (!std::filesystem::exists(dir + "/" + e.label))
            throw DataError("no label PNG for stem '" + stem + "' in " + dir);
        Image8 im = read_png(dir + "/" + e.image);
        SegMap labels = read_label_png(dir + "/" + e.label, num_classes);
        if (labels.width != im.width || labels.height != im.height)
            throw DataError("label dims disagree with image for stem '" + stem +
                            "' in " + dir);
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

}  // namespace clab
