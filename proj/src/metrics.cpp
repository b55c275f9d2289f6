#include "dualmim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualmim/error.hpp"

namespace dualmim {

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix ConfusionMatrix::from_labels(const std::vector<std::size_t>& truth,
                                             const std::vector<std::size_t>& pred,
                                             std::size_t classes) {
    if (truth.size() != pred.size()) {
        throw Error(ErrorCode::label_mismatch, "truth and prediction lists differ in length");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= classes || pred[i] >= classes) {
            throw Error(ErrorCode::label_mismatch, "label index exceeds class count");
        }
        cm.add(truth[i], pred[i]);
    }
    return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (cm.classes == 0 || total == 0) {
        throw Error(ErrorCode::invalid_argument, "confusion matrix is empty");
    }
    const std::size_t k = cm.classes;
    std::vector<double> row(k, 0.0), col(k, 0.0);
    double trace = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t p = 0; p < k; ++p) {
            const auto c = static_cast<double>(cm.at(t, p));
            row[t] += c;
            col[p] += c;
            if (t == p) trace += c;
        }
    }
    const auto s = static_cast<double>(total);

    ClassificationMetrics m;
    m.acc = trace / s;
    for (std::size_t c = 0; c < k; ++c) {
        const auto tp = static_cast<double>(cm.at(c, c));
        const double r = row[c] > 0 ? tp / row[c] : 0.0;
        const double p = col[c] > 0 ? tp / col[c] : 0.0;
        m.recall += r;
        m.precision += p;
        m.f1 += (r + p) > 0 ? 2 * r * p / (r + p) : 0.0;
    }
    m.recall /= static_cast<double>(k);
    m.precision /= static_cast<double>(k);
    m.f1 /= static_cast<double>(k);

    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        pt += col[c] * row[c];
        pp += col[c] * col[c];
        tt += row[c] * row[c];
    }
    const double denom = std::sqrt((s * s - pp) * (s * s - tt));
    if (denom > 0.0) {
        m.mcc = (trace * s - pt) / denom;
    } else {
        m.mcc = m.acc == 1.0 ? 1.0 : 0.0;
    }
    return m;
}

namespace {

void require_pair(const FloatField& x, const FloatField& y, std::size_t window) {
    if (!x.same_shape(y)) throw Error(ErrorCode::shape_mismatch, "metric inputs differ in shape");
    if (window == 0 || x.height < window || x.width < window) {
        throw Error(ErrorCode::invalid_argument, "image is smaller than the metric window");
    }
}

struct WindowStats {
    double mx, my, vx, vy, cov;  // population moments
};

WindowStats window_stats(const FloatField& x, const FloatField& y, std::size_t y0, std::size_t x0,
                         std::size_t win) {
    const double n = static_cast<double>(win * win);
    double sx = 0, sy = 0;
    for (std::size_t r = 0; r < win; ++r) {
        for (std::size_t c = 0; c < win; ++c) {
            sx += x.at(y0 + r, x0 + c);
            sy += y.at(y0 + r, x0 + c);
        }
    }
    const double mx = sx / n, my = sy / n;
    double vx = 0, vy = 0, cov = 0;
    for (std::size_t r = 0; r < win; ++r) {
        for (std::size_t c = 0; c < win; ++c) {
            const double dx = x.at(y0 + r, x0 + c) - mx, dy = y.at(y0 + r, x0 + c) - my;
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
    }
    return {mx, my, vx / n, vy / n, cov / n};
}

}  // namespace

double ssim(const FloatField& x, const FloatField& y) {
    constexpr std::size_t win = 7;
    require_pair(x, y, win);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double n = static_cast<double>(win * win);
    const double unbias = n / (n - 1.0);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + win <= x.height; ++r) {
        for (std::size_t c = 0; c + win <= x.width; ++c) {
            const WindowStats s = window_stats(x, y, r, c, win);
            const double vx = s.vx * unbias, vy = s.vy * unbias, cov = s.cov * unbias;
            sum += ((2 * s.mx * s.my + c1) * (2 * cov + c2)) /
                   ((s.mx * s.mx + s.my * s.my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

double lncc(const FloatField& x, const FloatField& y, std::size_t window) {
    if (window % 2 == 0) throw Error(ErrorCode::invalid_argument, "LNCC window must be odd");
    require_pair(x, y, window);
    constexpr double flat = 1e-12;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + window <= x.height; ++r) {
        for (std::size_t c = 0; c + window <= x.width; ++c) {
            const WindowStats s = window_stats(x, y, r, c, window);
            const bool fx = s.vx <= flat, fy = s.vy <= flat;
            if (fx && fy) {
                sum += 1.0;
                ++count;
            } else if (!fx && !fy) {
                sum += std::min(1.0, s.cov * s.cov / (s.vx * s.vy));
                ++count;
            }
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

double nmi(const FloatField& x, const FloatField& y, std::size_t bins) {
    if (bins < 2) throw Error(ErrorCode::invalid_argument, "NMI needs at least 2 bins");
    if (!x.same_shape(y) || x.size() == 0) throw Error(ErrorCode::shape_mismatch, "NMI inputs differ in shape");
    auto bin_of = [bins](double v) {
        const double c = std::clamp(v, 0.0, 1.0);
        return std::min(static_cast<std::size_t>(c * static_cast<double>(bins)), bins - 1);
    };
    std::vector<double> joint(bins * bins, 0.0), px(bins, 0.0), py(bins, 0.0);
    const double inv = 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t a = bin_of(x.data[i]), b = bin_of(y.data[i]);
        joint[a * bins + b] += inv;
        px[a] += inv;
        py[b] += inv;
    }
    auto entropy = [](const std::vector<double>& p) {
        double h = 0.0;
        for (double v : p) {
            if (v > 0.0) h -= v * std::log(v);
        }
        return h;
    };
    const double hx = entropy(px), hy = entropy(py), hxy = entropy(joint);
    if (hx + hy <= 0.0) return 1.0;  // both constant: each determines the other
    const double mi = hx + hy - hxy;
    return std::clamp(2.0 * mi / (hx + hy), 0.0, 1.0);
}

}  // namespace dualmim
