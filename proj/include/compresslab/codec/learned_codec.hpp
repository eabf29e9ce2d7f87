#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "compresslab/codec/bitstream.hpp"
#include "compresslab/codec/range_coder.hpp"
#include "compresslab/core/adam.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/nn/autoencoder.hpp"

// Learned autoencoder codec trained for min R + lambda*D.
//
// Training minimises  E[-log2 p(z+u)] / pixels  +  lambda * MSE  with
// additive uniform noise u ~ U(-0.5, 0.5) standing in for rounding; MSE is
// measured in 8-bit pixel units (scaled by 255^2 from the [0,1] tensors),
// which is the scale the lambda range {0.001 .. 0.1} is calibrated for.
//
// Inference rounds latents and range-codes them against per-channel
// frequency tables quantised from the trained Gaussians: a 2^16 probability
// budget is apportioned by largest remainder over an integer window of
// +-4.5 sigma around the channel mean, with one escape symbol per side
// (excess coded as 32 raw bits) so any latent value round-trips exactly.

namespace clab {

struct LearnedCodecModel {
    CodecNet net;
    float lambda = 0.0f;
    // final training averages: rate in bits/pixel, MSE in 8-bit units
    double final_rate_bpp = 0.0;
    double final_mse = 0.0;
};

namespace learned_detail {

inline double gauss_cdf(double x, double mu, double sigma) {
    return 0.5 * (1.0 + std::erf((x - mu) / (sigma * std::sqrt(2.0))));
}

/// Ideal code length of integer v under the channel Gaussian.
inline double symbol_bits(int64_t v, double mu, double sigma) {
    double p = gauss_cdf(v + 0.5, mu, sigma) - gauss_cdf(v - 0.5, mu, sigma);
    return -std::log2(std::max(p, 1e-12));
}

// Frequency table for one latent channel.  Symbol 0 escapes below the
// window, symbols 1..n cover integers lo..hi, symbol n+1 escapes above.
struct ChannelTable {
    int lo = 0, hi = 0;
    double mu = 0.0, sigma = 1.0;
    CumFreqTable table{std::vector<uint32_t>{1, 1, 1}};
};

inline ChannelTable build_channel_table(float mu_f, float log_sigma_f) {
    double mu = mu_f;
    double sigma = std::max(std::exp(static_cast<double>(log_sigma_f)), 1e-4);
    int center = static_cast<int>(std::llround(mu));
    int half = static_cast<int>(
        std::min<long long>(2048, static_cast<long long>(std::ceil(4.5 * sigma)) + 1));
    ChannelTable ct;
    ct.lo = center - half;
    ct.hi = center + half;
    ct.mu = mu;
    ct.sigma = sigma;
    int n = ct.hi - ct.lo + 1;

    std::vector<double> mass(n + 2);
    mass[0] = gauss_cdf(ct.lo - 0.5, mu, sigma);
    for (int s = ct.lo; s <= ct.hi; ++s)
        mass[s - ct.lo + 1] =
            gauss_cdf(s + 0.5, mu, sigma) - gauss_cdf(s - 0.5, mu, sigma);
    mass[n + 1] = 1.0 - gauss_cdf(ct.hi + 0.5, mu, sigma);

    // Largest-remainder apportionment of the 2^16 budget with a 1-unit
    // floor per symbol, so every symbol stays codable and frequent symbols
    // keep within a fraction of a percent of their ideal code length.
    const uint32_t kTotal = 1u << 16;
    size_t m = mass.size();
    std::vector<uint32_t> freq(m);
    std::vector<std::pair<double, size_t>> frac(m);
    int64_t used = 0;
    for (size_t i = 0; i < m; ++i) {
        double raw = mass[i] * kTotal;
        freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(raw));
        frac[i] = {raw - std::floor(raw), i};
        used += freq[i];
    }
    int64_t spare = static_cast<int64_t>(kTotal) - used;
    if (spare > 0) {
        std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (size_t i = 0; spare > 0; i = (i + 1) % m, --spare)
            ++freq[frac[i].second];
    }
    while (spare < 0) {  // floors exceeded the budget; shave the largest
        size_t big = std::max_element(freq.begin(), freq.end()) - freq.begin();
        uint32_t cut = static_cast<uint32_t>(
            std::min<int64_t>(-spare, static_cast<int64_t>(freq[big]) - 1));
        freq[big] -= cut;
        spare += cut;
    }
    ct.table = CumFreqTable(freq);
    return ct;
}

inline void code_value(RangeEncoder& enc, const ChannelTable& ct, int64_t v) {
    int n = ct.hi - ct.lo + 1;
    if (v < ct.lo) {
        enc.encode_symbol(ct.table, 0);
        enc.encode_bypass_bits(static_cast<uint32_t>(ct.lo - v), 32);
    } else if (v > ct.hi) {
        enc.encode_symbol(ct.table, n + 1);
        enc.encode_bypass_bits(static_cast<uint32_t>(v - ct.hi), 32);
    } else {
        enc.encode_symbol(ct.table, static_cast<int>(v - ct.lo) + 1);
    }
}

inline int64_t decode_value(RangeDecoder& dec, const ChannelTable& ct) {
    int n = ct.hi - ct.lo + 1;
    int sym = dec.decode_symbol(ct.table);
    if (sym == 0) return ct.lo - static_cast<int64_t>(dec.decode_bypass_bits(32));
    if (sym == n + 1) return ct.hi + static_cast<int64_t>(dec.decode_bypass_bits(32));
    return ct.lo + sym - 1;
}

inline std::vector<ChannelTable> model_tables(const CodecNet& net) {
    int C = net.config().latent_channels;
    std::vector<ChannelTable> tables;
    tables.reserve(C);
    for (int c = 0; c < C; ++c)
        tables.push_back(
            build_channel_table(net.mu().data()[c], net.log_sigma().data()[c]));
    return tables;
}

/// Reflect-pads [1,3,H,W] on the bottom/right to the next multiple of 8.
inline Tensor pad_to_multiple8(const Tensor& x) {
    int h = x.dim(2), w = x.dim(3);
    int pb = (8 - h % 8) % 8, pr = (8 - w % 8) % 8;
    if (pb == 0 && pr == 0) return x;
    if (pb > h - 1 || pr > w - 1)
        throw UsageError("learned codec needs images at least 8x8, got " +
                         shape_str(x.shape()));
    return reflection_pad2d_asym(nullptr, x, 0, pb, 0, pr);
}

/// Rounded latents for an image, plus the padded pixel count.
inline Tensor rounded_latents(const LearnedCodecModel& model, const Image8& image) {
    Tensor x = pad_to_multiple8(image_to_tensor(image));
    Tensor z = model.net.encode(nullptr, x);
    Tensor q = Tensor::zeros(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i) {
        float v = std::clamp(z.data()[i], -1.0e9f, 1.0e9f);
        q.data()[i] = static_cast<float>(std::llround(v));
    }
    return q;
}

/// Differentiable total code length (bits) of noisy latents under the
/// model's per-channel Gaussians.
inline Tensor rate_bits(Tape* tape, const CodecNet& net, const Tensor& noisy) {
    Tensor neg_mu = neg(tape, net.mu());
    Tensor inv_sigma = exp_op(tape, neg(tape, net.log_sigma()));
    auto cdf = [&](const Tensor& t) {
        Tensor scaled = mul_scalar(tape, t, static_cast<float>(M_SQRT1_2));
        return mul_scalar(tape, add_scalar(tape, erf_op(tape, scaled), 1.0f), 0.5f);
    };
    Tensor hi = channel_scale(
        tape, bias_add(tape, add_scalar(tape, noisy, 0.5f), neg_mu), inv_sigma);
    Tensor lo = channel_scale(
        tape, bias_add(tape, add_scalar(tape, noisy, -0.5f), neg_mu), inv_sigma);
    Tensor p = clamp_min(tape, sub(tape, cdf(hi), cdf(lo)), 1e-9f);
    float inv_ln2 = static_cast<float>(1.0 / std::log(2.0));
    return mul_scalar(tape, sum_all(tape, log_op(tape, p)), -inv_ln2);
}

}  // namespace learned_detail

/// Per-step training observer: (step, loss, rate_bpp, mse_8bit).
using LearnedTrainObserver =
    std::function<void(long step, double loss, double rate_bpp, double mse)>;

inline LearnedCodecModel train_learned_codec(
    const std::vector<Image8>& train_images, float lambda, long steps,
    uint64_t seed = 1, const LearnedTrainObserver& on_step = {}) {
    if (train_images.size() < 100)
        throw UsageError("learned codec training needs >= 100 images, got " +
                         std::to_string(train_images.size()));
    if (!(lambda > 0.0f)) throw UsageError("learned codec lambda must be > 0");
    if (steps < 1) throw UsageError("learned codec steps must be >= 1");

    LearnedCodecModel model{CodecNet(AutoencoderConfig{}, seed), lambda};
    std::vector<Tensor> xs;
    xs.reserve(train_images.size());
    for (const auto& im : train_images) {
        if (im.channels != 3)
            throw UsageError("learned codec trains on RGB images");
        xs.push_back(learned_detail::pad_to_multiple8(image_to_tensor(im)));
    }

    AdamConfig acfg;
    acfg.lr = 1e-4f;
    acfg.beta1 = 0.9f;
    acfg.beta2 = 0.999f;
    Adam opt(model.net.params().tensors(), acfg);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const float mse_scale = 255.0f * 255.0f;
    Tensor log_sigma = model.net.log_sigma();  // shared storage, writable handle

    std::deque<double> tail_rate, tail_mse;
    for (long step = 0; step < steps; ++step) {
        const Tensor& x = xs[rng.uniform_int(xs.size())];
        double pixels = static_cast<double>(x.dim(2)) * x.dim(3);

        Tape tape;
        Tensor z = model.net.encode(&tape, x);
        Tensor noise = Tensor::zeros(z.shape());
        for (int64_t i = 0; i < noise.numel(); ++i)
            noise.data()[i] = rng.uniform_f() - 0.5f;
        Tensor zn = add(&tape, z, noise);

        Tensor rate = mul_scalar(&tape, learned_detail::rate_bits(&tape, model.net, zn),
                                 static_cast<float>(1.0 / pixels));
        Tensor mse = mse_loss(&tape, model.net.decode(&tape, zn), x);
        Tensor loss = add(&tape, rate, mul_scalar(&tape, mse, lambda * mse_scale));

        double loss_v = loss.item();
        if (!std::isfinite(loss_v))
            throw TrainingError("learned codec training diverged", step);
        double rate_v = rate.item();
        double mse_v = mse.item() * mse_scale;

        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        // keep the scale parameters in a range where exp() stays finite
        for (int64_t i = 0; i < log_sigma.numel(); ++i)
            log_sigma.data()[i] = std::clamp(log_sigma.data()[i], -6.0f, 8.0f);

        tail_rate.push_back(rate_v);
        tail_mse.push_back(mse_v);
        if (tail_rate.size() > 200) {
            tail_rate.pop_front();
            tail_mse.pop_front();
        }
        if (on_step) on_step(step, loss_v, rate_v, mse_v);
    }
    model.final_rate_bpp =
        std::accumulate(tail_rate.begin(), tail_rate.end(), 0.0) / tail_rate.size();
    model.final_mse =
        std::accumulate(tail_mse.begin(), tail_mse.end(), 0.0) / tail_mse.size();
    return model;
}

inline Bitstream learned_encode(const LearnedCodecModel& model, const Image8& image) {
    if (image.width < 1 || image.height < 1)
        throw UsageError("learned_encode: empty image");
    if (image.channels != 3)
        throw UsageError("learned_encode expects a 3-channel image");

    Tensor q = learned_detail::rounded_latents(model, image);
    auto tables = learned_detail::model_tables(model.net);
    int C = q.dim(1), H = q.dim(2), W = q.dim(3);

    RangeEncoder enc;
    const float* d = q.data();
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
            learned_detail::code_value(
                enc, tables[c],
                static_cast<int64_t>(d[static_cast<int64_t>(c) * H * W + i]));

    Bitstream bs;
    bs.header.codec_id = kCodecLearned;
    bs.header.width = static_cast<uint32_t>(image.width);
    bs.header.height = static_cast<uint32_t>(image.height);
    bs.header.channels = 3;
    bs.header.knob = model.lambda;
    bs.payload = enc.finish();
    return bs;
}

inline Image8 learned_decode(const LearnedCodecModel& model, const Bitstream& bs) {
    if (bs.header.codec_id != kCodecLearned)
        throw UsageError("learned_decode: bitstream was made by codec id " +
                         std::to_string(bs.header.codec_id));
    if (bs.header.knob != model.lambda)
        throw UsageError("learned_decode: bitstream lambda " +
                         std::to_string(bs.header.knob) +
                         " does not match model lambda " +
                         std::to_string(model.lambda));

    int H = static_cast<int>(bs.header.height), W = static_cast<int>(bs.header.width);
    int Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
    int C = model.net.config().latent_channels;
    int h = Hp / 8, w = Wp / 8;

    auto tables = learned_detail::model_tables(model.net);
    RangeDecoder dec(bs.payload.data(), bs.payload.size());
    Tensor q = Tensor::zeros({1, C, h, w});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
            q.data()[static_cast<int64_t>(c) * h * w + i] = static_cast<float>(
                learned_detail::decode_value(dec, tables[c]));

    Tensor rec = model.net.decode(nullptr, q);
    if (Hp != H || Wp != W) rec = crop2d(nullptr, rec, 0, 0, H, W);
    return tensor_to_image(rec);
}

/// Ideal total code length (bits) of the image's rounded latents under the
/// model's Gaussians — what a perfect coder would spend before table
/// quantisation and escape overhead.
inline double learned_estimate_bits(const LearnedCodecModel& model,
                                    const Image8& image) {
    Tensor q = learned_detail::rounded_latents(model, image);
    int C = q.dim(1);
    int64_t plane = static_cast<int64_t>(q.dim(2)) * q.dim(3);
    double bits = 0.0;
    for (int c = 0; c < C; ++c) {
        double mu = model.net.mu().data()[c];
        double sigma =
            std::max(std::exp(static_cast<double>(model.net.log_sigma().data()[c])),
                     1e-4);
        for (int64_t i = 0; i < plane; ++i)
            bits += learned_detail::symbol_bits(
                static_cast<int64_t>(q.data()[c * plane + i]), mu, sigma);
    }
    return bits;
}

inline void save_learned_model(const LearnedCodecModel& model,
                               const std::string& path) {
    auto entries = model.net.params().named();
    Tensor meta = Tensor::zeros({3});
    meta.data()[0] = model.lambda;
    meta.data()[1] = static_cast<float>(model.final_rate_bpp);
    meta.data()[2] = static_cast<float>(model.final_mse);
    entries.emplace_back("meta.codec", meta);
    save_checkpoint(path, entries);
}

inline LearnedCodecModel load_learned_model(const std::string& path) {
    LearnedCodecModel model;
    model.net.params().load(path);
    auto ckpt = load_checkpoint(path);
    auto it = ckpt.find("meta.codec");
    if (it == ckpt.end() || it->second.numel() != 3)
        throw DataError("learned codec checkpoint lacks meta.codec record: " + path);
    model.lambda = it->second.data()[0];
    model.final_rate_bpp = it->second.data()[1];
    model.final_mse = it->second.data()[2];
    return model;
}

}  // namespace clab
