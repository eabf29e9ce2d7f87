#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"

namespace clab {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major float tensor with an optional gradient buffer. Handles
/// share storage; ops produce fresh tensors. Gradients are accumulated into
/// `grad` by Tape::backward.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape) {
        Tensor t;
        t.p_ = std::make_shared<Impl>();
        t.p_->shape = shape;
        t.p_->data.assign(shape_numel(shape), 0.0f);
        return t;
    }

    static Tensor full(const Shape& shape, float v) {
        Tensor t = zeros(shape);
        std::fill(t.p_->data.begin(), t.p_->data.end(), v);
        return t;
    }

    static Tensor from_data(const Shape& shape, std::vector<float> data) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw DimensionError("tensor data size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.p_ = std::make_shared<Impl>();
        t.p_->shape = shape;
        t.p_->data = std::move(data);
        return t;
    }

    static Tensor scalar(float v) { return from_data({1}, {v}); }

    bool defined() const { return static_cast<bool>(p_); }

    const Shape& shape() const { return p_->shape; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[i]; }
    int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }

    float* data() { return p_->data.data(); }
    const float* data() const { return p_->data.data(); }
    std::vector<float>& vec() { return p_->data; }
    const std::vector<float>& vec() const { return p_->data; }

    bool requires_grad() const { return p_ && p_->requires_grad; }
    void set_requires_grad(bool v) { p_->requires_grad = v; }

    bool has_grad() const { return p_ && !p_->grad.empty(); }

    /// Gradient buffer, allocated (zeroed) on first use.
    std::vector<float>& grad_vec() {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0f);
        return p_->grad;
    }
    const std::vector<float>& grad_vec() const { return p_->grad; }

    void zero_grad() {
        if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
    }

    void accumulate_grad(const float* g, int64_t n) {
        auto& gv = grad_vec();
        for (int64_t i = 0; i < n; ++i) gv[i] += g[i];
    }

    /// Copy of the values, disconnected from any graph.
    Tensor detach() const {
        Tensor t = from_data(p_->shape, p_->data);
        return t;
    }

    float item() const {
        if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
        return p_->data[0];
    }

    bool same_shape(const Tensor& o) const { return p_->shape == o.p_->shape; }

    /// Identity of the underlying storage; used for parameter bookkeeping.
    const void* storage_id() const { return p_.get(); }

    bool all_finite() const {
        for (float v : p_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    struct Impl {
        Shape shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> p_;
};

/// Single-use gradient tape. Ops append backward closures in execution
/// order; backward() replays them in reverse, which visits the graph in
/// reverse topological order for define-by-run graphs.
class Tape {
public:
    void record(std::function<void()> fn) { recs_.push_back(std::move(fn)); }

    size_t size() const { return recs_.size(); }
    bool consumed() const { return consumed_; }

    void backward(Tensor loss) {
        if (consumed_) throw UsageError("backward called twice on one tape");
        if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
        consumed_ = true;
        loss.grad_vec()[0] += 1.0f;
        for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) (*it)();
        recs_.clear();
    }

private:
    std::vector<std::function<void()>> recs_;
    bool consumed_ = false;
};

/// True when the op should be recorded: a live tape and at least one
/// grad-tracked input.
inline bool tracking(Tape* tape, std::initializer_list<const Tensor*> ins) {
    if (!tape) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace clab
