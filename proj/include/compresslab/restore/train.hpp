#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "compresslab/core/adam.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/data/dataset.hpp"
#include "compresslab/nn/classifier.hpp"
#include "compresslab/nn/generator.hpp"
#include "compresslab/nn/rdn.hpp"
#include "compresslab/restore/losses.hpp"

// Restoration training: an adversarial residual generator against
// multi-scale discriminators, and a residual-dense baseline trained on a
// plain distortion objective.  Both consume (compressed, original) image
// pairs and produce a model whose restore() maps single images.

namespace clab {

struct ImagePair {
    Image8 compressed;
    Image8 original;
};
using PairSet = std::vector<ImagePair>;

namespace restore_detail {

inline void check_pairs(const PairSet& pairs, int crop, size_t min_pairs) {
    if (pairs.size() < min_pairs)
        throw UsageError("restoration training needs >= " +
                         std::to_string(min_pairs) + " pairs, got " +
                         std::to_string(pairs.size()));
    for (const auto& p : pairs) {
        if (p.compressed.width != p.original.width ||
            p.compressed.height != p.original.height ||
            p.compressed.channels != 3 || p.original.channels != 3)
            throw UsageError("pair images must be RGB with matching dims");
        if (p.compressed.width < crop || p.compressed.height < crop)
            throw UsageError("pair images smaller than the training crop");
    }
}

}  // namespace restore_detail

/// Pre-trains the frozen feature extractor used by the distillation loss:
/// a 5-block classifier that predicts the object class of 32x32 crops
/// centered on scene latents.
inline ConvClassifier train_feature_net(const Dataset& ds, int steps = 600,
                                        uint64_t seed = 11) {
    if (!ds.has_latent)
        throw UsageError("feature-net training needs a dataset with latents");
    if (steps < 1) throw UsageError("feature-net training needs steps >= 1");

    constexpr int kCrop = 32;
    struct Sample {
        size_t entry;
        int cx, cy, label;
    };
    std::vector<Image8> images(ds.size());
    std::vector<Sample> samples;
    for (size_t i = 0; i < ds.size(); ++i) {
        images[i] = ds.load_image(i);
        const Image8& im = images[i];
        if (im.width < kCrop || im.height < kCrop)
            throw UsageError("feature-net training needs images >= 32 px");
        for (const auto& o : ds.entries[i].latent) {
            Sample s;
            s.entry = i;
            s.cx = std::clamp(static_cast<int>(std::lround(o.cx)) - kCrop / 2, 0,
                              im.width - kCrop);
            s.cy = std::clamp(static_cast<int>(std::lround(o.cy)) - kCrop / 2, 0,
                              im.height - kCrop);
            s.label = o.class_id - 1;  // object classes 1..K-1
            samples.push_back(s);
        }
    }
    if (samples.size() < 8)
        throw UsageError("feature-net training needs >= 8 latent objects");

    ClassifierConfig cfg;
    cfg.blocks = 5;
    cfg.num_classes = ds.num_classes - 1;
    ConvClassifier net(cfg, seed);
    Adam opt(net.params().tensors(), AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f, {}});
    Rng rng = Rng(seed).fork("feature-net");

    const int batch = 8;
    for (int step = 0; step < steps; ++step) {
        Tensor xb = Tensor::zeros({batch, 3, kCrop, kCrop});
        std::vector<int> labels(batch);
        for (int b = 0; b < batch; ++b) {
            const Sample& s =
                samples[rng.uniform_int(static_cast<int>(samples.size()))];
            Tensor one = signed_crop(images[s.entry], s.cy, s.cx,
                                                     kCrop, rng.coin());
            std::copy_n(one.data(), one.numel(),
                        xb.data() + static_cast<int64_t>(b) * one.numel());
            labels[b] = s.label;
        }
        Tape tape;
        Tensor logits = net.forward(&tape, xb);
        Tensor loss = softmax_cross_entropy(&tape, logits, labels, -1);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
    return net;
}

struct RestoreTrainConfig {
    int iterations = 20000;
    long lr_drop_after = 12000;  // x0.1 from here on
    float lr = 2e-4f;
    float beta1 = 0.1f;
    float beta2 = 0.9f;
    int crop = 64;
    uint64_t seed = 1;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    RdnConfig rdn;  // used by the non-adversarial path
    RestorationLossWeights weights;
    ConvClassifier* feature_net = nullptr;  // frozen during training
    std::string out_dir;        // when set: checkpoints + per-step loss CSV
    int checkpoint_every = 0;   // extra periodic checkpoints; 0 = final only
    // called once per step with the component losses; optional
    std::function<void(long, const GeneratorLossParts&, const DiscriminatorLossResult&)>
        on_step;
};

namespace restore_detail {

inline void validate_config(const RestoreTrainConfig& cfg, bool adversarial) {
    if (cfg.iterations < 1) throw UsageError("training needs iterations >= 1");
    if (cfg.crop < 64 || cfg.crop % 32 != 0)
        throw UsageError(
            "training crop must be a multiple of 32 and >= 64 px (loss "
            "network constraints)");
    if (adversarial && cfg.feature_net == nullptr)
        throw UsageError(
            "adversarial training needs cfg.feature_net (see "
            "train_feature_net)");
}

inline AdamConfig adam_config(const RestoreTrainConfig& cfg) {
    return AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f,
                      {{cfg.lr_drop_after, 0.1f}}};
}

struct CropDraw {
    Tensor compressed, original;
};

inline CropDraw draw_crop(const ImagePair& pair, int crop, Rng& rng) {
    int y0 = static_cast<int>(rng.uniform_int(pair.original.height - crop + 1));
    int x0 = static_cast<int>(rng.uniform_int(pair.original.width - crop + 1));
    bool flip = rng.coin();
    return {signed_crop(pair.compressed, y0, x0, crop, flip),
            signed_crop(pair.original, y0, x0, crop, flip)};
}

}  // namespace restore_detail

/// Alternating D/G updates with the full composite generator loss.
/// Emits generator/discriminator checkpoints and a per-step component CSV
/// into cfg.out_dir when set.  Aborts with TrainingError if the
/// discriminator objective sits at its optimum for 500 consecutive steps
/// or any loss goes non-finite.
inline ResidualGenerator train_restorer(const PairSet& pairs,
                                        const RestoreTrainConfig& cfg) {
    restore_detail::validate_config(cfg, true);
    restore_detail::check_pairs(pairs, cfg.crop, 200);

    ResidualGenerator gen(cfg.generator, cfg.seed);
    MultiScaleDiscriminator disc(cfg.discriminator, cfg.seed + 0x9d15c);
    cfg.feature_net->params().set_trainable(false);

    Adam opt_g(gen.params().tensors(), restore_detail::adam_config(cfg));
    Adam opt_d(disc.params().tensors(), restore_detail::adam_config(cfg));
    Rng rng = Rng(cfg.seed).fork("restore-train");
    CollapseGuard guard;

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        csv.open(cfg.out_dir + "/restore_loss.csv");
        csv << "step,total,gan,l1,feat,msssim,dist,d_loss,d_objective\n";
    }

    for (long step = 1; step <= cfg.iterations; ++step) {
        const ImagePair& pair =
            pairs[rng.uniform_int(static_cast<int>(pairs.size()))];
        auto crop = restore_detail::draw_crop(pair, cfg.crop, rng);

        // generator forward once; its detached output feeds the D update
        Tape tape_g;
        Tensor x_bar = gen.restore(&tape_g, crop.compressed);

        Tape tape_d;
        DiscriminatorLossResult d_res = gan_discriminator_loss(
            &tape_d, disc, crop.compressed, detach(x_bar), crop.original);
        opt_d.zero_grad();
        tape_d.backward(d_res.loss);
        opt_d.step();
        guard.observe(d_res.objective, step);

        GeneratorLossParts g_res =
            gan_generator_loss(&tape_g, disc, *cfg.feature_net, crop.compressed,
                               x_bar, crop.original, cfg.weights);
        if (!std::isfinite(g_res.total.item()) || !std::isfinite(d_res.objective))
            throw TrainingError("restoration training diverged", step);
        opt_g.zero_grad();
        opt_d.zero_grad();  // G backward also reaches D parameters
        tape_g.backward(g_res.total);
        opt_g.step();

        if (csv.is_open())
            csv << step << "," << g_res.total.item() << "," << g_res.gan << ","
                << g_res.l1 << "," << g_res.feat << "," << g_res.msssim << ","
                << g_res.dist << "," << d_res.loss.item() << ","
                << d_res.objective << "\n";
        if (cfg.on_step) cfg.on_step(step, g_res, d_res);
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            step % cfg.checkpoint_every == 0) {
            gen.params().save(cfg.out_dir + "/generator_" + std::to_string(step) +
                              ".clt");
        }
    }
    if (!cfg.out_dir.empty()) {
        gen.params().save(cfg.out_dir + "/generator.clt");
        disc.params().save(cfg.out_dir + "/discriminator.clt");
    }
    return gen;
}

enum class NonAdvObjective { kPsnr, kMsSsim };

inline NonAdvObjective non_adv_objective_from_string(const std::string& s) {
    if (s == "psnr") return NonAdvObjective::kPsnr;
    if (s == "ms_ssim") return NonAdvObjective::kMsSsim;
    throw UsageError("unknown restoration objective '" + s +
                     "' (expected psnr or ms_ssim)");
}

/// Residual-dense baseline minimizing MSE (psnr) or 1-MS-SSIM.  Same crop
/// schedule and optimizer as the adversarial path, no GAN machinery.
inline Rdn train_nonadv_restorer(const PairSet& pairs, NonAdvObjective objective,
                                 const RestoreTrainConfig& cfg) {
    restore_detail::validate_config(cfg, false);
    restore_detail::check_pairs(pairs, cfg.crop, 200);

    Rdn net(cfg.rdn, cfg.seed);
    Adam opt(net.params().tensors(), restore_detail::adam_config(cfg));
    Rng rng = Rng(cfg.seed).fork("nonadv-train");

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        csv.open(cfg.out_dir + "/nonadv_loss.csv");
        csv << "step,loss\n";
    }

    for (long step = 1; step <= cfg.iterations; ++step) {
        const ImagePair& pair =
            pairs[rng.uniform_int(static_cast<int>(pairs.size()))];
        auto crop = restore_detail::draw_crop(pair, cfg.crop, rng);

        Tape tape;
        Tensor x_bar = net.restore(&tape, crop.compressed);
        Tensor loss;
        if (objective == NonAdvObjective::kPsnr) {
            loss = mse_loss(&tape, x_bar, crop.original);
        } else {
            loss = ms_ssim_loss(&tape, restore_detail::to_unit(&tape, x_bar),
                                restore_detail::to_unit(&tape, crop.original));
        }
        if (!std::isfinite(loss.item()))
            throw TrainingError("restoration training diverged", step);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        if (csv.is_open()) csv << step << "," << loss.item() << "\n";
    }
    if (!cfg.out_dir.empty()) net.params().save(cfg.out_dir + "/rdn.clt");
    return net;
}

/// Applies a trained restorer to one 8-bit image.
template <class Net>
Image8 restore_image(const Net& net, const Image8& im) {
    return signed_to_image(net.restore(nullptr, image_to_signed(im)));
}

/// Restores every image of a dataset into out_dir.  Labels and latents are
/// carried over untouched (label PNGs are byte-copied); the manifest
/// records the generator parameter hash as provenance.
template <class Net>
Dataset restore_dataset(const Net& net, const Dataset& ds,
                        const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    Dataset out = ds;
    out.root = out_dir;
    out.provenance = "restored:" + hash_hex(param_store_hash(net.params()));
    for (size_t i = 0; i < ds.size(); ++i) {
        write_png(out.image_path(i), restore_image(net, ds.load_image(i)));
        std::filesystem::copy_file(ds.label_path(i), out.label_path(i),
                                   std::filesystem::copy_options::overwrite_existing);
    }
    save_manifest(out, out_dir + "/manifest.json");
    return out;
}

}  // namespace clab
