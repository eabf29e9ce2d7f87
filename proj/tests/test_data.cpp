#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "compresslab/data/dataset.hpp"
#include "compresslab/data/scene.hpp"

using namespace clab;

namespace {

std::string temp_dir(const std::string& name) {
    std::string dir = testing::TempDir() + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << path;
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

bool latents_equal(const std::vector<SceneObject>& a,
                   const std::vector<SceneObject>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const auto &u = a[i], &v = b[i];
        if (u.class_id != v.class_id || u.size_bucket != v.size_bucket ||
            u.cell != v.cell || u.is_ellipse != v.is_ellipse ||
            u.sides != v.sides || u.cx != v.cx || u.cy != v.cy || u.rx != v.rx ||
            u.ry != v.ry || u.angle != v.angle || u.size_px != v.size_px)
            return false;
    }
    return true;
}

}  // namespace

TEST(SceneSpec, StockSpecsValidate) {
    EXPECT_NO_THROW(validate_scene_spec(urban_like_spec()));
    EXPECT_NO_THROW(validate_scene_spec(drone_like_spec()));
}

TEST(SceneSpec, RejectsDegenerateSpecs) {
    SceneSpec s = urban_like_spec();
    s.num_classes = 1;
    EXPECT_THROW(validate_scene_spec(s), UsageError);

    s = urban_like_spec();
    s.size_ranges.pop_back();
    EXPECT_THROW(validate_scene_spec(s), UsageError);

    // class size ranges may not dip into the reserved 4-10 px bucket
    s = urban_like_spec();
    s.size_ranges[3] = {8, 14};
    EXPECT_THROW(validate_scene_spec(s), UsageError);

    s = urban_like_spec();
    s.texture_bands[2] = {0.2, 0.7};  // beyond Nyquist
    EXPECT_THROW(validate_scene_spec(s), UsageError);

    s = urban_like_spec();
    s.small_object_density = -1.0;
    EXPECT_THROW(validate_scene_spec(s), UsageError);
}

TEST(SceneSpec, BucketAndCellHelpers) {
    EXPECT_EQ(size_bucket_of(4.0), 0);
    EXPECT_EQ(size_bucket_of(10.0), 0);
    EXPECT_EQ(size_bucket_of(11.0), 1);
    EXPECT_EQ(size_bucket_of(24.0), 1);
    EXPECT_EQ(size_bucket_of(25.0), 2);

    EXPECT_EQ(position_cell_of(0.0, 0.0, 96), 0);
    EXPECT_EQ(position_cell_of(95.9, 95.9, 96), 15);
    EXPECT_EQ(position_cell_of(50.0, 10.0, 96), 2);
    EXPECT_EQ(position_cell_of(10.0, 50.0, 96), 8);
}

TEST(GenerateScene, DeterministicInSeed) {
    SceneSpec spec = urban_like_spec();
    LabeledImage a = generate_scene(42, spec);
    LabeledImage b = generate_scene(42, spec);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    EXPECT_EQ(a.labels.ids, b.labels.ids);
    EXPECT_TRUE(latents_equal(a.latent, b.latent));

    LabeledImage c = generate_scene(43, spec);
    EXPECT_NE(a.image.pixels, c.image.pixels);
}

TEST(GenerateScene, LabelsMatchLatentRasterization) {
    SceneSpec spec = urban_like_spec();
    for (uint64_t seed = 100; seed < 150; ++seed) {
        LabeledImage scene = generate_scene(seed, spec);
        SegMap replay = rasterize_labels(scene.latent, spec.size, spec.num_classes);
        ASSERT_EQ(replay.ids, scene.labels.ids) << "seed " << seed;
    }
}

TEST(GenerateScene, EveryLatentObjectKeepsVisiblePixels) {
    SceneSpec spec = urban_like_spec();
    for (uint64_t seed = 200; seed < 300; ++seed) {
        LabeledImage scene = generate_scene(seed, spec);
        auto owner = scene_detail::rasterize_ownership(scene.latent, spec.size);
        std::vector<int> px(scene.latent.size(), 0);
        for (int v : owner)
            if (v >= 0) ++px[v];
        for (size_t i = 0; i < px.size(); ++i)
            ASSERT_GT(px[i], 0) << "object " << i << " of seed " << seed;
    }
}

TEST(GenerateScene, LatentFieldsAreConsistent) {
    SceneSpec spec = urban_like_spec();
    for (uint64_t seed = 1; seed < 40; ++seed) {
        LabeledImage scene = generate_scene(seed, spec);
        for (const auto& o : scene.latent) {
            EXPECT_GE(o.class_id, 1);
            EXPECT_LT(o.class_id, spec.num_classes);
            EXPECT_EQ(o.size_bucket, size_bucket_of(o.size_px));
            EXPECT_EQ(o.cell, position_cell_of(o.cx, o.cy, spec.size));
            EXPECT_DOUBLE_EQ(o.size_px, 2.0 * o.rx);
        }
    }
}

TEST(GenerateScene, ZeroDensityMeansNoSmallBucket) {
    SceneSpec spec = urban_like_spec();
    spec.small_object_density = 0.0;
    spec.num_small_classes = 0;  // no density channel, so no classes reserved for it
    int small = 0;
    for (uint64_t seed = 0; seed < 100; ++seed)
        for (const auto& o : generate_scene(seed, spec).latent)
            if (o.size_bucket == 0) ++small;
    EXPECT_EQ(small, 0);

    // and the stock density does put objects in that bucket
    small = 0;
    for (uint64_t seed = 0; seed < 20; ++seed)
        for (const auto& o : generate_scene(seed, urban_like_spec()).latent)
            if (o.size_bucket == 0) ++small;
    EXPECT_GT(small, 0);
}

TEST(GenerateScene, SmallClassesAreExclusiveToTheSmallObjectChannel) {
    const SceneSpec spec = urban_like_spec();
    const std::vector<int> small = small_class_ids(spec);
    ASSERT_EQ(small, (std::vector<int>{6, 7}));

    // Small-channel objects carry only the reserved trailing classes and the
    // regular channel never uses them, so the two groups partition class ids.
    int seen_small = 0, seen_regular = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        for (const auto& o : generate_scene(seed, spec).latent) {
            if (o.size_bucket == 0) {
                EXPECT_GE(o.class_id, 6);
                ++seen_small;
            } else {
                EXPECT_LT(o.class_id, 6);
                EXPECT_GE(o.class_id, 1);
                ++seen_regular;
            }
        }
    }
    EXPECT_GT(seen_small, 100);
    EXPECT_GT(seen_regular, 500);

    SceneSpec bad = spec;
    bad.num_small_classes = 0;  // density without any reserved class
    EXPECT_THROW(validate_scene_spec(bad), UsageError);
    bad.num_small_classes = spec.num_classes - 1;  // would leave no regular class
    EXPECT_THROW(validate_scene_spec(bad), UsageError);
    EXPECT_TRUE(small_class_ids(drone_like_spec()).empty());
}

TEST(GenerateScene, DensityDialIsMonotone) {
    SceneSpec lo = urban_like_spec(), hi = urban_like_spec();
    lo.small_object_density = 1.0;
    hi.small_object_density = 4.0;
    long lo_count = 0, hi_count = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        for (const auto& o : generate_scene(seed, lo).latent)
            if (o.size_bucket == 0) ++lo_count;
        for (const auto& o : generate_scene(seed, hi).latent)
            if (o.size_bucket == 0) ++hi_count;
    }
    EXPECT_LT(lo_count, hi_count);
    // should track the requested densities to within sampling noise
    EXPECT_NEAR(lo_count / 200.0, 1.0, 0.4);
    EXPECT_NEAR(hi_count / 200.0, 4.0, 0.8);
}

TEST(GenerateScene, EveryClassCoversFivePercentOfScenes) {
    SceneSpec spec = urban_like_spec();
    std::vector<int> seen(spec.num_classes, 0);
    const int n = 1000;
    for (uint64_t seed = 0; seed < n; ++seed) {
        LabeledImage scene = generate_scene(seed, spec);
        std::vector<char> present(spec.num_classes, 0);
        for (const auto& o : scene.latent) present[o.class_id] = 1;
        // background always owns pixels by construction
        present[0] = 1;
        for (int k = 0; k < spec.num_classes; ++k) seen[k] += present[k];
    }
    for (int k = 0; k < spec.num_classes; ++k)
        EXPECT_GE(seen[k], n / 20) << "class " << k;
}

TEST(GenerateScene, ImpossibleDensityThrows) {
    SceneSpec spec = urban_like_spec();
    spec.min_objects = 80;
    spec.max_objects = 80;
    for (auto& r : spec.size_ranges) r = {40, 44};
    spec.size_ranges[0] = {96, 96};
    EXPECT_THROW(generate_scene(7, spec), GenerationError);
}

TEST(GenerateScene, AuxiliaryDomainLooksDifferent) {
    SceneSpec spec = urban_like_spec();
    SceneSpec aux = auxiliary_domain_spec(spec);
    EXPECT_NE(aux.palette_id, spec.palette_id);
    EXPECT_GT(aux.texture_bands[3].first, spec.texture_bands[3].first);
    EXPECT_NE(scene_spec_hash(aux), scene_spec_hash(spec));

    LabeledImage a = generate_scene(11, spec);
    LabeledImage b = generate_scene(11, aux);
    double diff = 0.0;
    for (size_t i = 0; i < a.image.pixels.size(); ++i)
        diff += std::abs(static_cast<double>(a.image.pixels[i]) - b.image.pixels[i]);
    EXPECT_GT(diff / a.image.pixels.size(), 5.0);
}

TEST(MakeDataset, WritesAllRolesWithDisjointSeeds) {
    std::string dir = temp_dir("mkds");
    SplitSpec split;
    split.seg_train = 8;
    split.seg_eval = 4;
    split.restore_train = 4;
    split.auxiliary = 4;
    split.privileged_fraction = 0.25;
    DatasetBundle b = make_dataset(urban_like_spec(), split, 555, dir);

    EXPECT_EQ(b.seg_train.size(), 8u);
    EXPECT_EQ(b.seg_eval.size(), 4u);
    EXPECT_EQ(b.restore_train.size(), 4u);
    EXPECT_EQ(b.privileged.size(), 2u);  // 0.25 * 8
    EXPECT_EQ(b.auxiliary.size(), 4u);

    std::set<uint64_t> seeds;
    std::set<std::string> paths;
    size_t total = 0;
    for (const Dataset* ds :
         {&b.seg_train, &b.seg_eval, &b.restore_train, &b.privileged, &b.auxiliary}) {
        EXPECT_TRUE(ds->has_latent);
        EXPECT_EQ(ds->num_classes, 8);
        for (size_t i = 0; i < ds->size(); ++i) {
            seeds.insert(ds->entries[i].seed);
            paths.insert(ds->image_path(i));
            paths.insert(ds->label_path(i));
            EXPECT_TRUE(std::filesystem::exists(ds->image_path(i)));
            EXPECT_TRUE(std::filesystem::exists(ds->label_path(i)));
        }
        total += ds->size();
    }
    EXPECT_EQ(seeds.size(), total);       // no seed reuse across roles
    EXPECT_EQ(paths.size(), 2 * total);   // no file shared between manifests

    // auxiliary role records the shifted spec, not the primary one
    EXPECT_EQ(b.seg_eval.spec_hash, b.seg_train.spec_hash);
    EXPECT_NE(b.auxiliary.spec_hash, b.seg_train.spec_hash);
}

TEST(MakeDataset, PrivilegedCountFollowsFraction) {
    std::string dir = temp_dir("mkds_priv");
    SplitSpec split;
    split.seg_train = 16;
    split.privileged_fraction = 0.125;
    DatasetBundle b = make_dataset(urban_like_spec(), split, 1, dir);
    EXPECT_EQ(b.privileged.size(), 2u);  // 0.125 * 16
    EXPECT_EQ(b.seg_eval.size(), 0u);
}

TEST(MakeDataset, ValidatesSplit) {
    std::string dir = temp_dir("mkds_bad");
    SplitSpec split;
    split.seg_train = -1;
    EXPECT_THROW(make_dataset(urban_like_spec(), split, 1, dir), UsageError);

    split = SplitSpec{};
    split.seg_train = 4;
    split.privileged_fraction = 0.0;
    EXPECT_THROW(make_dataset(urban_like_spec(), split, 1, dir), UsageError);
    split.privileged_fraction = 1.5;
    EXPECT_THROW(make_dataset(urban_like_spec(), split, 1, dir), UsageError);

    // a role larger than its seed window would collide with the next role
    split = SplitSpec{};
    split.seg_train = 1 << 20;
    EXPECT_THROW(make_dataset(urban_like_spec(), split, 1, dir), UsageError);
}

TEST(MakeDataset, DeterministicAcrossRuns) {
    SplitSpec split;
    split.seg_train = 3;
    split.auxiliary = 2;
    std::string d1 = temp_dir("mkds_a"), d2 = temp_dir("mkds_b");
    DatasetBundle a = make_dataset(urban_like_spec(), split, 99, d1);
    DatasetBundle b = make_dataset(urban_like_spec(), split, 99, d2);
    for (size_t i = 0; i < a.seg_train.size(); ++i) {
        EXPECT_EQ(file_bytes(a.seg_train.image_path(i)),
                  file_bytes(b.seg_train.image_path(i)));
        EXPECT_EQ(file_bytes(a.seg_train.label_path(i)),
                  file_bytes(b.seg_train.label_path(i)));
    }
    EXPECT_EQ(file_bytes(a.auxiliary.image_path(0)),
              file_bytes(b.auxiliary.image_path(0)));
}

TEST(Manifest, RoundTripPreservesEverything) {
    std::string dir = temp_dir("manifest_rt");
    SplitSpec split;
    split.seg_train = 4;
    DatasetBundle b = make_dataset(urban_like_spec(), split, 321, dir);

    Dataset loaded = load_manifest(dir + "/seg_train/manifest.json");
    EXPECT_EQ(loaded.role, "seg_train");
    EXPECT_EQ(loaded.spec_hash, b.seg_train.spec_hash);
    EXPECT_EQ(loaded.num_classes, 8);
    EXPECT_TRUE(loaded.has_latent);
    ASSERT_EQ(loaded.size(), b.seg_train.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded.entries[i].image, b.seg_train.entries[i].image);
        EXPECT_EQ(loaded.entries[i].seed, b.seg_train.entries[i].seed);
        EXPECT_TRUE(latents_equal(loaded.entries[i].latent,
                                  b.seg_train.entries[i].latent));
        // the stored label PNG must equal a fresh rasterization of the
        // loaded latents: geometry survives the JSON round trip exactly
        SegMap replay = rasterize_labels(loaded.entries[i].latent, 96, 8);
        EXPECT_EQ(replay.ids, loaded.load_labels(i).ids);
    }
}

TEST(Manifest, LoadErrors) {
    EXPECT_THROW(load_manifest(testing::TempDir() + "nope/manifest.json"), DataError);

    std::string dir = temp_dir("manifest_bad");
    std::ofstream(dir + "/manifest.json") << "{not json";
    EXPECT_THROW(load_manifest(dir + "/manifest.json"), DataError);

    std::ofstream(dir + "/manifest2.json") << "{\"role\": \"x\"}";
    EXPECT_THROW(load_manifest(dir + "/manifest2.json"), DataError);
}

TEST(Ingest, AcceptsWellFormedDirectory) {
    std::string dir = temp_dir("ingest_ok");
    SceneSpec spec = urban_like_spec();
    for (int i = 0; i < 5; ++i) {
        LabeledImage scene = generate_scene(700 + i, spec);
        std::string stem = dir + "/ext_" + std::to_string(i);
        write_png(stem + ".png", scene.image);
        write_label_png(stem + "_label.png", scene.labels);
    }
    Dataset ds = ingest_png_dataset(dir, 8);
    EXPECT_EQ(ds.size(), 5u);
    EXPECT_FALSE(ds.has_latent);  // external data carries no scene latents
    EXPECT_EQ(ds.role, "ingested");
    EXPECT_EQ(ds.entries[0].image, "ext_0.png");
    Image8 im = ds.load_image(2);
    SegMap labels = ds.load_labels(2);
    EXPECT_EQ(im.width, 96);
    EXPECT_EQ(labels.height, 96);
}

TEST(Ingest, MissingLabelNamesTheStem) {
    std::string dir = temp_dir("ingest_missing");
    LabeledImage scene = generate_scene(1, urban_like_spec());
    write_png(dir + "/lonely.png", scene.image);
    try {
        ingest_png_dataset(dir, 8);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
    }
}

TEST(Ingest, RejectsDimMismatchAndBadIds) {
    std::string dir = temp_dir("ingest_dims");
    LabeledImage scene = generate_scene(2, urban_like_spec());
    write_png(dir + "/a.png", scene.image);
    write_label_png(dir + "/a_label.png",
                    SegMap::make(48, 48, 8));  // wrong size
    EXPECT_THROW(ingest_png_dataset(dir, 8), DataError);

    std::string dir2 = temp_dir("ingest_ids");
    write_png(dir2 + "/b.png", scene.image);
    SegMap wild = SegMap::make(96, 96, 8);
    std::fill(wild.ids.begin(), wild.ids.end(), static_cast<uint8_t>(200));
    write_label_png(dir2 + "/b_label.png", wild);
    EXPECT_THROW(ingest_png_dataset(dir2, 8), DataError);

    EXPECT_THROW(ingest_png_dataset(testing::TempDir() + "not_there", 8), DataError);
    EXPECT_THROW(ingest_png_dataset(temp_dir("ingest_empty"), 8), DataError);
}
