#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compresslab/core/checkpoint.hpp"
#include "compresslab/core/ops.hpp"
#include "compresslab/core/rng.hpp"
#include "compresslab/core/tensor.hpp"

// Parameter registry plus thin layer structs over the tape ops. Layers hold
// their tensors by value (shared storage), so a net, its ParamStore, the
// optimizer, and checkpoints all see the same parameters.

namespace clab {

class ParamStore {
public:
    /// Registers a tensor under a unique name and marks it trainable.
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name))
            throw UsageError("ParamStore: duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.emplace_back(name, t);
        return t;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    const std::vector<std::pair<std::string, Tensor>>& named() const { return params_; }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    void save(const std::string& path) const { save_checkpoint(path, params_); }

    /// Copies checkpoint values into the registered tensors; shapes must
    /// match and every parameter must be present.
    void load(const std::string& path) {
        auto ckpt = load_checkpoint(path);
        for (auto& [name, t] : params_) {
            auto it = ckpt.find(name);
            if (it == ckpt.end())
                throw DataError("checkpoint missing parameter '" + name + "'");
            if (!(it->second.shape() == t.shape()))
                throw DataError("checkpoint shape mismatch for '" + name + "': " +
                                shape_str(it->second.shape()) + " vs " +
                                shape_str(t.shape()));
            std::copy_n(it->second.data(), t.numel(), t.data());
        }
    }

    /// Freezing detaches the parameters from gradient tracking (used for the
    /// distillation feature net and cached discriminator evaluations).
    void set_trainable(bool trainable) {
        for (auto& [name, t] : params_) t.set_requires_grad(trainable);
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, size_t> index_;
};

/// Stable digest of a parameter set (names + values); used as artifact and
/// provenance identity.
inline uint64_t param_store_hash(const ParamStore& ps) {
    uint64_t h = fnv1a("params");
    for (const auto& [name, t] : ps.named()) {
        h = fnv1a(name, h);
        h = fnv1a(t.data(), static_cast<size_t>(t.numel()) * sizeof(float), h);
    }
    return h;
}

/// Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline Tensor kaiming_uniform(const Shape& shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = rng.uniform_f() * 2.0f * bound - bound;
    return t;
}

struct Conv2d {
    Tensor w, b;
    int stride = 1, pad = 0;
    PadMode mode = PadMode::Zero;

    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int ci, int co, int k,
           int stride_, int pad_, Rng& rng, PadMode mode_ = PadMode::Zero,
           bool zero_init = false)
        : stride(stride_), pad(pad_), mode(mode_) {
        Tensor weight = zero_init ? Tensor::zeros({co, ci, k, k})
                                  : kaiming_uniform({co, ci, k, k}, ci * k * k, rng);
        w = ps.add(name + ".w", weight);
        b = ps.add(name + ".b", Tensor::zeros({co}));
    }

    Tensor forward(Tape* tape, const Tensor& x) const {
        return bias_add(tape, conv2d(tape, x, w, stride, pad, mode), b);
    }
};

struct ConvTranspose2d {
    Tensor w, b;
    int stride = 1, pad = 0, out_pad = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& ps, const std::string& name, int ci, int co, int k,
                    int stride_, int pad_, int out_pad_, Rng& rng)
        : stride(stride_), pad(pad_), out_pad(out_pad_) {
        // fan-in per output element of a transposed conv is ci*k*k/stride^2
        int fan_in = std::max(1, ci * k * k / (stride_ * stride_));
        w = ps.add(name + ".w", kaiming_uniform({ci, co, k, k}, fan_in, rng));
        b = ps.add(name + ".b", Tensor::zeros({co}));
    }

    Tensor forward(Tape* tape, const Tensor& x) const {
        return bias_add(tape, conv_transpose2d(tape, x, w, stride, pad, out_pad), b);
    }
};

struct InstanceNorm2d {
    Tensor gamma, beta;

    InstanceNorm2d() = default;
    InstanceNorm2d(ParamStore& ps, const std::string& name, int channels) {
        gamma = ps.add(name + ".gamma", Tensor::full({channels}, 1.0f));
        beta = ps.add(name + ".beta", Tensor::zeros({channels}));
    }

    Tensor forward(Tape* tape, const Tensor& x) const {
        return instance_norm(tape, x, gamma, beta);
    }
};

}  // namespace clab
