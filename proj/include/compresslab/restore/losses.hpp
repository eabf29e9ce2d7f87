#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "compresslab/core/ops.hpp"
#include "compresslab/metrics/ms_ssim.hpp"
#include "compresslab/nn/classifier.hpp"
#include "compresslab/nn/discriminator.hpp"

// Conditional-GAN restoration losses.  All images live in [-1,1]; the
// discriminator conditions on the decoded image x_hat and judges a
// candidate (the restored x_bar or the original x).

namespace clab {

struct RestorationLossWeights {
    double outer = 10.0;   // multiplies the whole reconstruction group
    double l1 = 2.0;
    double feat = 1.0;     // frozen-classifier feature distillation
    double msssim = 1.0;   // distance form, 1 - MS-SSIM
    double dist = 1.0;     // discriminator feature distillation
};

struct GeneratorLossParts {
    Tensor total;
    double gan = 0.0;     // sum over scales of -mean log D(candidate)
    double l1 = 0.0;      // raw component values, before weighting
    double feat = 0.0;
    double msssim = 0.0;
    double dist = 0.0;
};

struct DiscriminatorLossResult {
    Tensor loss;            // negated objective, to be minimized
    double objective = 0.0; // sum over scales; chance level 2*log(0.25)
};

namespace restore_detail {

inline constexpr float kProbClamp = 1e-7f;

/// sigmoid with both tails clamped away from 0 and 1 so logs stay finite.
inline Tensor clamped_prob(Tape* tape, const Tensor& logits) {
    return clamp_range(tape, sigmoid(tape, logits), kProbClamp, 1.0f - kProbClamp);
}

inline void check_loss_inputs(const Tensor& x_hat, const Tensor& a,
                              const Tensor& b) {
    if (!x_hat.same_shape(a) || !x_hat.same_shape(b))
        throw DimensionError("restoration loss inputs must share one shape, got " +
                             shape_str(x_hat.shape()) + ", " + shape_str(a.shape()) +
                             ", " + shape_str(b.shape()));
}

/// (x+1)/2: losses defined on [0,1] applied to [-1,1] images.
inline Tensor to_unit(Tape* tape, const Tensor& x) {
    return mul_scalar(tape, add_scalar(tape, x, 1.0f), 0.5f);
}

}  // namespace restore_detail

/// Generator-side objective: non-saturating GAN term plus the weighted
/// reconstruction group.  Gradients flow through x_bar only; the real
/// pair's discriminator features and the target x are constants here.
/// feat_net must be frozen by the caller (its parameters are not stepped,
/// but freezing also keeps its gradient buffers untouched).
inline GeneratorLossParts gan_generator_loss(
    Tape* tape, const MultiScaleDiscriminator& disc, const ConvClassifier& feat_net,
    const Tensor& x_hat, const Tensor& x_bar, const Tensor& x,
    const RestorationLossWeights& w = {}) {
    restore_detail::check_loss_inputs(x_hat, x_bar, x);

    GeneratorLossParts parts;

    // one discriminator pass over the fake pair serves both the GAN term
    // and the feature-distillation term
    std::vector<ScaleOutput> fake = disc.forward(tape, x_bar, x_hat);
    std::vector<ScaleOutput> real = disc.forward(nullptr, x, x_hat);

    Tensor gan;
    for (size_t s = 0; s < fake.size(); ++s) {
        Tensor p = restore_detail::clamped_prob(tape, fake[s].logits);
        Tensor term = neg(tape, mean_all(tape, log_op(tape, p)));
        gan = s == 0 ? term : add(tape, gan, term);
    }

    Tensor l1 = l1_loss(tape, x_bar, x);

    Tensor feat;
    auto fake_feats = feat_net.features(tape, x_bar);
    auto real_feats = feat_net.features(nullptr, x);
    for (size_t j = 0; j < fake_feats.size(); ++j) {
        Tensor term = l1_loss(tape, fake_feats[j], real_feats[j]);
        feat = j == 0 ? term : add(tape, feat, term);
    }

    Tensor msssim = ms_ssim_loss(tape, restore_detail::to_unit(tape, x_bar),
                                 restore_detail::to_unit(tape, x));

    Tensor dist;
    bool first = true;
    for (size_t s = 0; s < fake.size(); ++s)
        for (size_t j = 0; j < fake[s].features.size(); ++j) {
            Tensor term = l1_loss(tape, fake[s].features[j], real[s].features[j]);
            dist = first ? term : add(tape, dist, term);
            first = false;
        }

    parts.gan = gan.item();
    parts.l1 = l1.item();
    parts.feat = feat.item();
    parts.msssim = msssim.item();
    parts.dist = dist.item();

    Tensor group = mul_scalar(tape, l1, static_cast<float>(w.l1));
    group = add(tape, group, mul_scalar(tape, feat, static_cast<float>(w.feat)));
    group = add(tape, group, mul_scalar(tape, msssim, static_cast<float>(w.msssim)));
    group = add(tape, group, mul_scalar(tape, dist, static_cast<float>(w.dist)));
    parts.total = add(tape, gan, mul_scalar(tape, group, static_cast<float>(w.outer)));
    return parts;
}

/// Discriminator-side objective sum_i [mean log(1-D_i(x_bar)) +
/// mean log D_i(x)], maximized; returned loss is its negation.  x_bar must
/// be detached from the generator tape.
inline DiscriminatorLossResult gan_discriminator_loss(
    Tape* tape, const MultiScaleDiscriminator& disc, const Tensor& x_hat,
    const Tensor& x_bar, const Tensor& x) {
    restore_detail::check_loss_inputs(x_hat, x_bar, x);

    std::vector<ScaleOutput> fake = disc.forward(tape, x_bar, x_hat);
    std::vector<ScaleOutput> real = disc.forward(tape, x, x_hat);

    Tensor objective;
    for (size_t s = 0; s < fake.size(); ++s) {
        Tensor pf = restore_detail::clamped_prob(tape, fake[s].logits);
        Tensor pr = restore_detail::clamped_prob(tape, real[s].logits);
        Tensor fake_term =
            mean_all(tape, log_op(tape, neg(tape, add_scalar(tape, pf, -1.0f))));
        Tensor real_term = mean_all(tape, log_op(tape, pr));
        Tensor term = add(tape, fake_term, real_term);
        objective = s == 0 ? term : add(tape, objective, term);
    }

    DiscriminatorLossResult res;
    res.objective = objective.item();
    res.loss = neg(tape, objective);
    return res;
}

/// Trips after `limit` consecutive steps with the discriminator objective
/// within `tolerance` of its optimum (0): the generator has stopped
/// providing usable gradients.
class CollapseGuard {
public:
    CollapseGuard(double tolerance = 1e-4, int limit = 500)
        : tolerance_(tolerance), limit_(limit) {}

    void observe(double objective, long step) {
        if (std::fabs(objective) < tolerance_) {
            if (++consecutive_ >= limit_)
                throw TrainingError(
                    "discriminator loss pinned at 0 for " +
                        std::to_string(consecutive_) +
                        " consecutive steps; generator has collapsed",
                    step);
        } else {
            consecutive_ = 0;
        }
    }

    int consecutive() const { return consecutive_; }

private:
    double tolerance_;
    int limit_;
    int consecutive_ = 0;
};

}  // namespace clab
