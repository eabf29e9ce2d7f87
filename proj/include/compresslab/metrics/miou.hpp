#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"

// Intersection-over-union on a single confusion matrix aggregated over the
// whole evaluation set (global aggregation, not per-image averaging).
// Ground-truth void pixels (id == K) never enter the matrix; classes absent
// from both prediction and ground truth are excluded from the mean.

namespace clab {

struct IouReport {
    std::vector<double> per_class;  // NaN-free: absent classes hold 0
    std::vector<bool> present;
    double mean = 0.0;
};

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes) : k_(num_classes) {
        if (num_classes < 2) throw UsageError("ConfusionMatrix: need >= 2 classes");
        // one extra row/col so void predictions still count as errors
        m_.assign(static_cast<size_t>(k_ + 1) * (k_ + 1), 0);
    }

    int num_classes() const { return k_; }

    void add(const SegMap& gt, const SegMap& pred) {
        if (gt.width != pred.width || gt.height != pred.height)
            throw UsageError("ConfusionMatrix: gt " + std::to_string(gt.width) + "x" +
                             std::to_string(gt.height) + " vs pred " +
                             std::to_string(pred.width) + "x" +
                             std::to_string(pred.height));
        for (size_t i = 0; i < gt.ids.size(); ++i) {
            int g = gt.ids[i], p = pred.ids[i];
            if (g > k_ || p > k_)
                throw DataError("ConfusionMatrix: class id " +
                                std::to_string(std::max(g, p)) + " exceeds K=" +
                                std::to_string(k_));
            if (g == k_) continue;  // void ground truth: pixel not evaluated
            ++m_[static_cast<size_t>(g) * (k_ + 1) + p];
        }
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_) throw UsageError("ConfusionMatrix: merging different K");
        for (size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
    }

    IouReport report() const {
        IouReport r;
        r.per_class.assign(static_cast<size_t>(k_), 0.0);
        r.present.assign(static_cast<size_t>(k_), false);
        double sum = 0.0;
        int counted = 0;
        for (int c = 0; c < k_; ++c) {
            int64_t tp = m_[static_cast<size_t>(c) * (k_ + 1) + c];
            int64_t row = 0, col = 0;
            for (int j = 0; j <= k_; ++j) row += m_[static_cast<size_t>(c) * (k_ + 1) + j];
            for (int g = 0; g < k_; ++g) col += m_[static_cast<size_t>(g) * (k_ + 1) + c];
            int64_t uni = row + col - tp;
            if (uni == 0) continue;  // class appears nowhere: excluded
            r.present[static_cast<size_t>(c)] = true;
            r.per_class[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
            sum += r.per_class[static_cast<size_t>(c)];
            ++counted;
        }
        r.mean = counted > 0 ? sum / counted : 0.0;
        return r;
    }

    /// Mean IoU within each group; groups must partition [0,K).
    std::vector<double> grouped_means(const std::vector<std::vector<int>>& groups) const {
        std::vector<int> seen(static_cast<size_t>(k_), 0);
        for (const auto& g : groups)
            for (int c : g) {
                if (c < 0 || c >= k_)
                    throw UsageError("grouped_means: class " + std::to_string(c) +
                                     " outside [0," + std::to_string(k_) + ")");
                ++seen[static_cast<size_t>(c)];
            }
        for (int c = 0; c < k_; ++c)
            if (seen[static_cast<size_t>(c)] != 1)
                throw UsageError("grouped_means: groups do not partition the classes "
                                 "(class " + std::to_string(c) + " appears " +
                                 std::to_string(seen[static_cast<size_t>(c)]) + " times)");
        IouReport r = report();
        std::vector<double> out;
        out.reserve(groups.size());
        for (const auto& g : groups) {
            double sum = 0.0;
            int counted = 0;
            for (int c : g)
                if (r.present[static_cast<size_t>(c)]) {
                    sum += r.per_class[static_cast<size_t>(c)];
                    ++counted;
                }
            out.push_back(counted > 0 ? sum / counted : 0.0);
        }
        return out;
    }

private:
    int k_;
    std::vector<int64_t> m_;  // (K+1)x(K+1), row = gt, col = pred
};

inline IouReport miou(const std::vector<SegMap>& preds, const std::vector<SegMap>& gts,
                      int num_classes) {
    if (preds.size() != gts.size())
        throw UsageError("miou: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(gts.size()) + " ground truths");
    if (preds.empty()) throw UsageError("miou: empty evaluation set");
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < preds.size(); ++i) cm.add(gts[i], preds[i]);
    return cm.report();
}

inline std::vector<double> per_class_report(const std::vector<SegMap>& preds,
                                            const std::vector<SegMap>& gts,
                                            int num_classes,
                                            const std::vector<std::vector<int>>& groups) {
    if (preds.size() != gts.size() || preds.empty())
        throw UsageError("per_class_report: prediction/ground-truth count mismatch");
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < preds.size(); ++i) cm.add(gts[i], preds[i]);
    return cm.grouped_means(groups);
}

}  // namespace clab
