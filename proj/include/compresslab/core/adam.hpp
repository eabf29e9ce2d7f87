#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "compresslab/core/tensor.hpp"

namespace clab {

/// Adam hyper-parameters. `schedule` entries (after_step, multiplier) compose
/// multiplicatively once the step counter exceeds `after_step`; e.g.
/// {{80000, 0.1}} drops a 2e-4 base rate to 2e-5 from step 80001 on.
struct AdamConfig {
    float lr = 2e-4f;
    float beta1 = 0.1f;
    float beta2 = 0.9f;
    float eps = 1e-8f;
    std::vector<std::pair<long, float>> schedule;
};

/// Adam with bias correction. Parameters whose gradient buffer was never
/// touched keep zero moments and are left exactly unchanged, so optimizing a
/// superset of the active parameters is harmless.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(std::move(cfg)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        touched_.assign(params_.size(), false);
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
            v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Extra multiplicative factor on top of the base rate and schedule,
    /// intended for per-step decay shapes (e.g. cosine). Persists until reset.
    void set_lr_scale(float s) { lr_scale_ = s; }

    long step_count() const { return t_; }

    /// Learning rate that the next step() call will apply.
    float next_lr() const { return scheduled_lr(t_ + 1) * lr_scale_; }

    void step() {
        ++t_;
        float lr = scheduled_lr(t_) * lr_scale_;
        float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
        float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad() && !touched_[i]) continue;
            touched_[i] = true;
            const float* g = p.has_grad() ? p.grad_vec().data() : nullptr;
            float* m = m_[i].data();
            float* v = v_[i].data();
            float* w = p.data();
            int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                float gj = g ? g[j] : 0.0f;
                m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * gj * gj;
                float mhat = m[j] / bc1;
                float vhat = v[j] / bc2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    float scheduled_lr(long t) const {
        float lr = cfg_.lr;
        for (const auto& [after, mult] : cfg_.schedule)
            if (t > after) lr *= mult;
        return lr;
    }

    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::vector<bool> touched_;
    float lr_scale_ = 1.0f;
    long t_ = 0;
};

}  // namespace clab
