#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "compresslab/codec/dct_codec.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/restore/losses.hpp"
#include "compresslab/restore/train.hpp"

using namespace clab;

namespace {

std::string temp_dir(const std::string& name) {
    std::string dir = testing::TempDir() + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Tensor random_signed(const Shape& shape, uint64_t seed) {
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        d[i] = rng.uniform_f() * 2.0f - 1.0f;
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
    return m;
}

/// Scene images paired with their heavy DCT-compressed versions; built once.
const PairSet& scene_pairs() {
    static const PairSet pairs = [] {
        SceneSpec spec = urban_like_spec();
        PairSet p;
        for (int i = 0; i < 200; ++i) {
            Image8 x = generate_scene(9000 + i, spec).image;
            p.push_back({dct_decode(dct_encode(x, 12)), x});
        }
        return p;
    }();
    return pairs;
}

/// Small labeled dataset + feature net shared by the adversarial tests.
struct FeatureFixture {
    DatasetBundle bundle;
    ConvClassifier net;
};
FeatureFixture& feature_fixture() {
    static FeatureFixture* f = [] {
        auto* fx = new FeatureFixture;
        SplitSpec split;
        split.seg_train = 16;
        fx->bundle = make_dataset(urban_like_spec(), split,  77,
                                  testing::TempDir() + "restore_featds");
        fx->net = train_feature_net(fx->bundle.seg_train, 150, 11);
        return fx;
    }();
    return *f;
}

ConvClassifier untrained_feature_net() {
    ClassifierConfig cfg;
    cfg.blocks = 5;
    cfg.num_classes = 7;
    return ConvClassifier(cfg, 21);
}

}  // namespace

TEST(CollapseGuard, TripsAfterConsecutiveLimit) {
    CollapseGuard guard(1e-4, 500);
    for (int i = 0; i < 499; ++i) guard.observe(-5e-5, i);
    EXPECT_EQ(guard.consecutive(), 499);
    EXPECT_THROW(guard.observe(5e-5, 499), TrainingError);
}

TEST(CollapseGuard, HealthyObjectiveResetsTheCount) {
    CollapseGuard guard(1e-4, 500);
    for (int round = 0; round < 3; ++round) {
        for (int i = 0; i < 499; ++i) guard.observe(0.0, i);
        guard.observe(-1.0, 499);  // generator fought back
        EXPECT_EQ(guard.consecutive(), 0);
    }
}

TEST(GeneratorLoss, PerfectRestorationZeroesReconstructionTerms) {
    MultiScaleDiscriminator disc({}, 2);
    ConvClassifier feat = untrained_feature_net();
    Tensor x_hat = random_signed({1, 3, 64, 64}, 1);
    Tensor x = random_signed({1, 3, 64, 64}, 2);

    GeneratorLossParts parts = gan_generator_loss(nullptr, disc, feat, x_hat, x, x);
    EXPECT_EQ(parts.l1, 0.0);
    EXPECT_EQ(parts.feat, 0.0);
    EXPECT_EQ(parts.dist, 0.0);
    EXPECT_NEAR(parts.msssim, 0.0, 1e-5);
    EXPECT_TRUE(std::isfinite(parts.gan));
    EXPECT_NEAR(parts.total.item(), parts.gan + 10.0 * parts.msssim, 1e-4);
}

TEST(GeneratorLoss, WeightAuditDoublingL1Adds20x) {
    MultiScaleDiscriminator disc({}, 2);
    ConvClassifier feat = untrained_feature_net();
    Tensor x_hat = random_signed({1, 3, 64, 64}, 3);
    Tensor x = random_signed({1, 3, 64, 64}, 4);
    Tensor x_bar = random_signed({1, 3, 64, 64}, 5);

    GeneratorLossParts parts = gan_generator_loss(nullptr, disc, feat, x_hat, x_bar, x);
    double reconstructed = parts.gan + 10.0 * (2.0 * parts.l1 + parts.feat +
                                               parts.msssim + parts.dist);
    EXPECT_NEAR(parts.total.item(), reconstructed,
                2e-3 * std::fabs(reconstructed));
    // the L1 coefficient is 10*2: doubling the raw component moves the
    // total by exactly 20x the difference
    EXPECT_GT(parts.l1, 0.1);  // random images are far apart
    EXPECT_NEAR(parts.total.item() + 20.0 * parts.l1,
                parts.gan + 10.0 * (4.0 * parts.l1 + parts.feat + parts.msssim +
                                    parts.dist),
                2e-3 * std::fabs(reconstructed));
}

TEST(GeneratorLoss, AllComponentsFiniteOn100RandomDraws) {
    MultiScaleDiscriminator disc({}, 2);
    ConvClassifier feat = untrained_feature_net();
    for (uint64_t draw = 0; draw < 100; ++draw) {
        Tensor x_hat = random_signed({1, 3, 64, 64}, 100 + 3 * draw);
        Tensor x_bar = random_signed({1, 3, 64, 64}, 101 + 3 * draw);
        Tensor x = random_signed({1, 3, 64, 64}, 102 + 3 * draw);
        GeneratorLossParts p = gan_generator_loss(nullptr, disc, feat, x_hat, x_bar, x);
        ASSERT_TRUE(std::isfinite(p.total.item())) << "draw " << draw;
        ASSERT_TRUE(std::isfinite(p.gan));
        ASSERT_TRUE(std::isfinite(p.l1));
        ASSERT_TRUE(std::isfinite(p.feat));
        ASSERT_TRUE(std::isfinite(p.msssim));
        ASSERT_TRUE(std::isfinite(p.dist));
    }
}

TEST(GeneratorLoss, RejectsMismatchedShapes) {
    MultiScaleDiscriminator disc({}, 2);
    ConvClassifier feat = untrained_feature_net();
    Tensor a = random_signed({1, 3, 64, 64}, 1);
    Tensor b = random_signed({1, 3, 96, 96}, 2);
    EXPECT_THROW(gan_generator_loss(nullptr, disc, feat, a, a, b), DimensionError);
}

TEST(DiscriminatorLoss, UntrainedUniformOutputSitsAtChance) {
    MultiScaleDiscriminator disc({}, 2);
    for (auto& t : disc.params().tensors())
        std::fill(t.data(), t.data() + t.numel(), 0.0f);  // logits exactly 0

    Tensor x_hat = random_signed({1, 3, 64, 64}, 6);
    Tensor x_bar = random_signed({1, 3, 64, 64}, 7);
    Tensor x = random_signed({1, 3, 64, 64}, 8);
    DiscriminatorLossResult res = gan_discriminator_loss(nullptr, disc, x_hat, x_bar, x);
    // per scale log(0.5) + log(0.5) = -1.386; two scales
    EXPECT_NEAR(res.objective, 2.0 * 2.0 * std::log(0.5), 1e-4);
    EXPECT_NEAR(res.loss.item(), 2.7725887, 1e-4);
}

TEST(DiscriminatorLoss, SaturatedLogitsStayFiniteViaClamp) {
    MultiScaleDiscriminator disc({}, 2);
    for (const auto& [name, t] : disc.params().named())
        if (name.find("head.b") != std::string::npos) {
            Tensor handle = t;  // same storage, writable view
            std::fill(handle.data(), handle.data() + handle.numel(), 40.0f);
        }

    Tensor x_hat = random_signed({1, 3, 64, 64}, 9);
    Tensor x_bar = random_signed({1, 3, 64, 64}, 10);
    Tensor x = random_signed({1, 3, 64, 64}, 11);
    DiscriminatorLossResult res = gan_discriminator_loss(nullptr, disc, x_hat, x_bar, x);
    EXPECT_TRUE(std::isfinite(res.objective));
    // fake term pinned at log(1e-7) per scale by the probability clamp
    EXPECT_LT(res.objective, -30.0);
    EXPECT_GT(res.objective, -35.0);
}

TEST(DiscriminatorLoss, ObjectiveNeverPositive) {
    MultiScaleDiscriminator disc({}, 3);
    for (uint64_t draw = 0; draw < 20; ++draw) {
        Tensor x_hat = random_signed({1, 3, 64, 64}, 200 + 3 * draw);
        Tensor x_bar = random_signed({1, 3, 64, 64}, 201 + 3 * draw);
        Tensor x = random_signed({1, 3, 64, 64}, 202 + 3 * draw);
        DiscriminatorLossResult res =
            gan_discriminator_loss(nullptr, disc, x_hat, x_bar, x);
        ASSERT_LE(res.objective, 0.0);
    }
}

TEST(Detachment, DiscriminatorStepLeavesGeneratorUntouched) {
    ResidualGenerator gen({}, 1);
    MultiScaleDiscriminator disc({}, 2);
    Tensor x_hat = random_signed({1, 3, 64, 64}, 12);
    Tensor x = random_signed({1, 3, 64, 64}, 13);

    Tape tape_g;
    Tensor x_bar = gen.restore(&tape_g, x_hat);

    std::vector<Tensor> gen_before;
    for (auto& t : gen.params().tensors()) gen_before.push_back(detach(t));

    Tape tape_d;
    DiscriminatorLossResult res =
        gan_discriminator_loss(&tape_d, disc, x_hat, detach(x_bar), x);
    Adam opt_d(disc.params().tensors(), AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f, {}});
    opt_d.zero_grad();
    tape_d.backward(res.loss);
    opt_d.step();

    auto gen_params = gen.params().tensors();
    for (size_t i = 0; i < gen_params.size(); ++i) {
        EXPECT_EQ(max_abs_diff(gen_params[i], gen_before[i]), 0.0);
        if (gen_params[i].has_grad())
            for (float g : gen_params[i].grad_vec()) EXPECT_EQ(g, 0.0f);
    }
}

TEST(Detachment, GeneratorStepLeavesDiscriminatorUntouched) {
    ResidualGenerator gen({}, 1);
    MultiScaleDiscriminator disc({}, 2);
    ConvClassifier feat = untrained_feature_net();
    feat.params().set_trainable(false);
    Tensor x_hat = random_signed({1, 3, 64, 64}, 14);
    Tensor x = random_signed({1, 3, 64, 64}, 15);

    std::vector<Tensor> disc_before, gen_before;
    for (auto& t : disc.params().tensors()) disc_before.push_back(detach(t));
    for (auto& t : gen.params().tensors()) gen_before.push_back(detach(t));

    Tape tape;
    Tensor x_bar = gen.restore(&tape, x_hat);
    GeneratorLossParts parts =
        gan_generator_loss(&tape, disc, feat, x_hat, x_bar, x);
    Adam opt_g(gen.params().tensors(), AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f, {}});
    opt_g.zero_grad();
    tape.backward(parts.total);
    opt_g.step();

    auto disc_params = disc.params().tensors();
    for (size_t i = 0; i < disc_params.size(); ++i)
        EXPECT_EQ(max_abs_diff(disc_params[i], disc_before[i]), 0.0);

    // ... while the generator itself did move
    double moved = 0.0;
    auto gen_params = gen.params().tensors();
    for (size_t i = 0; i < gen_params.size(); ++i)
        moved += max_abs_diff(gen_params[i], gen_before[i]);
    EXPECT_GT(moved, 0.0);
}

TEST(TrainRestorer, ValidatesInputs) {
    ConvClassifier feat = untrained_feature_net();
    RestoreTrainConfig cfg;
    cfg.iterations = 1;
    cfg.feature_net = &feat;

    PairSet few(10, {Image8::make(64, 64, 3), Image8::make(64, 64, 3)});
    EXPECT_THROW(train_restorer(few, cfg), UsageError);

    PairSet enough(200, {Image8::make(64, 64, 3), Image8::make(64, 64, 3)});
    RestoreTrainConfig no_feat = cfg;
    no_feat.feature_net = nullptr;
    EXPECT_THROW(train_restorer(enough, no_feat), UsageError);

    RestoreTrainConfig bad_crop = cfg;
    bad_crop.crop = 48;
    EXPECT_THROW(train_restorer(enough, bad_crop), UsageError);

    PairSet tiny(200, {Image8::make(32, 32, 3), Image8::make(32, 32, 3)});
    EXPECT_THROW(train_restorer(tiny, cfg), UsageError);

    PairSet mixed(200, {Image8::make(64, 64, 3), Image8::make(96, 96, 3)});
    EXPECT_THROW(train_restorer(mixed, cfg), UsageError);
}

TEST(TrainRestorer, SmokeRunEmitsArtifactsAndStaysFinite) {
    FeatureFixture& fx = feature_fixture();
    std::string dir = temp_dir("restore_smoke");

    RestoreTrainConfig cfg;
    cfg.iterations = 120;
    cfg.seed = 5;
    cfg.feature_net = &fx.net;
    cfg.out_dir = dir;
    long steps_seen = 0;
    double last_obj = 1.0;
    cfg.on_step = [&](long step, const GeneratorLossParts& g,
                      const DiscriminatorLossResult& d) {
        ++steps_seen;
        ASSERT_TRUE(std::isfinite(g.total.item()));
        last_obj = d.objective;
    };
    ResidualGenerator gen = train_restorer(scene_pairs(), cfg);
    EXPECT_EQ(steps_seen, 120);
    EXPECT_LE(last_obj, 0.0);
    EXPECT_TRUE(std::isfinite(last_obj));

    // per-step component CSV: header + one row per step
    std::ifstream csv(dir + "/restore_loss.csv");
    ASSERT_TRUE(csv.good());
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,total,gan,l1,feat,msssim,dist,d_loss,d_objective");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 120);

    // checkpoints restore the exact final model
    ASSERT_TRUE(std::filesystem::exists(dir + "/generator.clt"));
    ASSERT_TRUE(std::filesystem::exists(dir + "/discriminator.clt"));
    ResidualGenerator reloaded({}, 999);
    reloaded.params().load(dir + "/generator.clt");
    Tensor probe = random_signed({1, 3, 64, 64}, 77);
    EXPECT_EQ(max_abs_diff(gen.restore(nullptr, probe),
                           reloaded.restore(nullptr, probe)),
              0.0);
}

TEST(TrainNonAdv, PsnrObjectiveReducesMseOnTrainingData) {
    RestoreTrainConfig cfg;
    cfg.iterations = 150;
    cfg.lr_drop_after = 1000000;
    cfg.seed = 3;
    cfg.rdn = RdnConfig{16, 2, 2, 8};
    Rdn net = train_nonadv_restorer(scene_pairs(), NonAdvObjective::kPsnr, cfg);

    double before = 0.0, after = 0.0;
    for (int i = 0; i < 10; ++i) {
        const ImagePair& p = scene_pairs()[i];
        before += mean_squared_error(p.compressed, p.original);
        after += mean_squared_error(restore_image(net, p.compressed), p.original);
    }
    EXPECT_LT(after, 0.9 * before);  // measured ~0.75x after 150 steps
}

TEST(TrainNonAdv, MsSsimObjectiveRunsAndLogs) {
    std::string dir = temp_dir("nonadv_msssim");
    RestoreTrainConfig cfg;
    cfg.iterations = 20;
    cfg.seed = 4;
    cfg.rdn = RdnConfig{16, 2, 2, 8};
    cfg.out_dir = dir;
    Rdn net = train_nonadv_restorer(scene_pairs(), NonAdvObjective::kMsSsim, cfg);
    EXPECT_TRUE(std::filesystem::exists(dir + "/rdn.clt"));
    std::ifstream csv(dir + "/nonadv_loss.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,loss");
    double first = -1.0;
    int rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        double v = std::stod(line.substr(line.find(',') + 1));
        ASSERT_TRUE(std::isfinite(v));
        ASSERT_GE(v, 0.0);  // 1 - MS-SSIM is a distance
        if (rows == 0) first = v;
        ++rows;
    }
    EXPECT_EQ(rows, 20);
    EXPECT_LE(first, 1.0);
}

TEST(TrainNonAdv, ObjectiveParsing) {
    EXPECT_EQ(non_adv_objective_from_string("psnr"), NonAdvObjective::kPsnr);
    EXPECT_EQ(non_adv_objective_from_string("ms_ssim"), NonAdvObjective::kMsSsim);
    EXPECT_THROW(non_adv_objective_from_string("vgg"), UsageError);
}

TEST(RestoreImage, ZeroResidualModelsAreExactIdentities) {
    ResidualGenerator gen({}, 1);
    Rdn rdn({}, 2);
    for (auto [w, h] : {std::pair{64, 64}, std::pair{96, 96}, std::pair{70, 50}}) {
        Image8 im = Image8::make(w, h, 3);
        Rng rng(40);
        for (auto& p : im.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
        Image8 via_gan = restore_image(gen, im);
        Image8 via_rdn = restore_image(rdn, im);
        EXPECT_EQ(via_gan.pixels, im.pixels) << w << "x" << h;
        EXPECT_EQ(via_rdn.pixels, im.pixels) << w << "x" << h;
    }
}

TEST(RestoreImage, KeepsDimensionsOnTrainedModel) {
    FeatureFixture& fx = feature_fixture();
    (void)fx;
    ResidualGenerator gen({}, 6);
    for (auto& t : gen.params().tensors()) {
        Rng rng(50);
        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] += rng.uniform_f() * 0.02f - 0.01f;
    }
    Image8 im = generate_scene(5, urban_like_spec()).image;
    Image8 restored = restore_image(gen, im);
    EXPECT_EQ(restored.width, im.width);
    EXPECT_EQ(restored.height, im.height);
    EXPECT_NE(restored.pixels, im.pixels);  // non-zero residual now
}

TEST(RestoreDataset, PreservesLabelsLatentsAndRecordsProvenance) {
    std::string src_dir = temp_dir("restore_ds_src");
    SplitSpec split;
    split.seg_train = 3;
    DatasetBundle b = make_dataset(urban_like_spec(), split, 4242, src_dir);

    ResidualGenerator gen({}, 1);  // zero residual: images must round-trip
    std::string out_dir = temp_dir("restore_ds_out");
    Dataset restored = restore_dataset(gen, b.seg_train, out_dir);

    EXPECT_EQ(restored.size(), 3u);
    EXPECT_EQ(restored.role, "seg_train");
    EXPECT_EQ(restored.provenance,
              "restored:" + hash_hex(param_store_hash(gen.params())));
    for (size_t i = 0; i < restored.size(); ++i) {
        std::ifstream a(b.seg_train.label_path(i), std::ios::binary);
        std::ifstream c(restored.label_path(i), std::ios::binary);
        std::vector<char> la((std::istreambuf_iterator<char>(a)), {});
        std::vector<char> lc((std::istreambuf_iterator<char>(c)), {});
        EXPECT_EQ(la, lc);  // label PNGs byte-identical
        EXPECT_EQ(restored.load_image(i).pixels, b.seg_train.load_image(i).pixels);
        EXPECT_EQ(restored.entries[i].latent.size(),
                  b.seg_train.entries[i].latent.size());
    }

    Dataset loaded = load_manifest(out_dir + "/manifest.json");
    EXPECT_EQ(loaded.provenance, restored.provenance);
    EXPECT_EQ(loaded.spec_hash, b.seg_train.spec_hash);
}

TEST(FeatureNet, LearnsLatentClassesAboveChance) {
    FeatureFixture& fx = feature_fixture();
    const Dataset& ds = fx.bundle.seg_train;
    int hit = 0, total = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        Image8 im = ds.load_image(i);
        for (const auto& o : ds.entries[i].latent) {
            int cx = std::clamp(static_cast<int>(std::lround(o.cx)) - 16, 0,
                                im.width - 32);
            int cy = std::clamp(static_cast<int>(std::lround(o.cy)) - 16, 0,
                                im.height - 32);
            Tensor crop = signed_crop(im, cy, cx, 32, false);
            hit += fx.net.predict(crop)[0] == o.class_id - 1;
            ++total;
        }
    }
    // 7-way chance is 0.14; the probe run reached 0.81 train accuracy
    EXPECT_GT(static_cast<double>(hit) / total, 0.5);
    EXPECT_EQ(fx.net.features(nullptr, random_signed({1, 3, 32, 32}, 1)).size(), 5u);
}

TEST(FeatureNet, ValidatesInputs) {
    Dataset no_latents;
    no_latents.role = "ingested";
    no_latents.num_classes = 8;
    no_latents.has_latent = false;
    EXPECT_THROW(train_feature_net(no_latents, 10), UsageError);
}

TEST(ParamStoreHash, TracksValuesAndNames) {
    ResidualGenerator a({}, 1), b({}, 1), c({}, 2);
    EXPECT_EQ(param_store_hash(a.params()), param_store_hash(b.params()));
    EXPECT_NE(param_store_hash(a.params()), param_store_hash(c.params()));
    a.params().tensors()[0].data()[0] += 1e-3f;
    EXPECT_NE(param_store_hash(a.params()), param_store_hash(b.params()));
}
