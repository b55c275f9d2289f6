#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dualmim/image.hpp"

namespace dualmim {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t n = 0) : classes(n), counts(n * n, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
    void add(std::size_t truth, std::size_t pred) { ++at(truth, pred); }
    std::uint64_t total() const;

    static ConfusionMatrix from_labels(const std::vector<std::size_t>& truth,
                                       const std::vector<std::size_t>& pred, std::size_t classes);
};

struct ClassificationMetrics {
    double acc = 0.0;
    double recall = 0.0;     // macro
    double precision = 0.0;  // macro
    double f1 = 0.0;         // macro
    double mcc = 0.0;        // multiclass (Gorodkin) form
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

/// SSIM with a 7x7 uniform window over valid positions, unit dynamic range,
/// C1 = 0.01^2, C2 = 0.03^2 and sample (N-1) covariances.
double ssim(const FloatField& x, const FloatField& y);

/// Mean squared local Pearson correlation over valid odd-sized windows.
/// Windows where both images are flat count as 1; windows where only one is
/// flat are skipped.
double lncc(const FloatField& x, const FloatField& y, std::size_t window = 9);

/// 2 I(X;Y) / (H(X) + H(Y)) from a joint histogram with equal-width bins on [0,1].
double nmi(const FloatField& x, const FloatField& y, std::size_t bins = 32);

}  // namespace dualmim
