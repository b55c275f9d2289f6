#include "dualmim/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dualmim/error.hpp"

namespace dualmim {

namespace {

void require_same(const FloatField& a, const FloatField& b) {
    if (!a.same_shape(b)) throw Error(ErrorCode::shape_mismatch, "loss inputs differ in shape");
}

void require_same(const Spectrum& a, const Spectrum& b) {
    if (!a.same_shape(b) || a.layout != b.layout) {
        throw Error(ErrorCode::shape_mismatch, "spectra differ in shape or layout");
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

FieldLoss l1_spatial(const FloatField& u_rec, const FloatField& u, const SpatialMask* region) {
    require_same(u_rec, u);
    if (region && !region->fits(u)) {
        throw Error(ErrorCode::shape_mismatch, "loss region does not match image");
    }
    FieldLoss out{0.0, FloatField(u.height, u.width)};
    std::size_t count = 0;
    for (std::size_t y = 0; y < u.height; ++y) {
        for (std::size_t x = 0; x < u.width; ++x) {
            if (region && !region->pixel_masked(y, x)) continue;
            ++count;
        }
    }
    if (count == 0) return out;
    const double inv = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t y = 0; y < u.height; ++y) {
        for (std::size_t x = 0; x < u.width; ++x) {
            if (region && !region->pixel_masked(y, x)) continue;
            const double d = u_rec.at(y, x) - u.at(y, x);
            sum += std::abs(d);
            out.grad.at(y, x) = sign(d) * inv;
        }
    }
    out.value = sum * inv;
    return out;
}

FloatField focal_weight_map(const Spectrum& f_rec, const Spectrum& f, double alpha) {
    require_same(f_rec, f);
    if (!(alpha > 0.0)) throw Error(ErrorCode::invalid_argument, "focal alpha must be > 0");
    FloatField w(f.height, f.width);
    double peak = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double dr = f.real[i] - f_rec.real[i];
        const double di = f.imag[i] - f_rec.imag[i];
        const double mod = std::sqrt(dr * dr + di * di);
        w.data[i] = alpha == 1.0 ? mod : std::pow(mod, alpha);
        peak = std::max(peak, w.data[i]);
    }
    if (peak > 0.0) {
        for (double& v : w.data) v /= peak;
    }
    return w;
}

SpectrumLoss focal_freq_loss_weighted(const Spectrum& f_rec, const Spectrum& f,
                                      const FloatField& weights) {
    require_same(f_rec, f);
    if (weights.height != f.height || weights.width != f.width) {
        throw Error(ErrorCode::shape_mismatch, "weight map does not match spectrum");
    }
    const double inv_hw = 1.0 / static_cast<double>(f.size());
    SpectrumLoss out{0.0, Spectrum(f.height, f.width, f.layout)};
    double sum = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double dr = f_rec.real[i] - f.real[i];
        const double di = f_rec.imag[i] - f.imag[i];
        const double wi = weights.data[i];
        sum += wi * (dr * dr + di * di);
        out.grad.real[i] = 2.0 * inv_hw * wi * dr;
        out.grad.imag[i] = 2.0 * inv_hw * wi * di;
    }
    out.value = sum * inv_hw;
    return out;
}

SpectrumLoss focal_freq_loss(const Spectrum& f_rec, const Spectrum& f, double alpha) {
    return focal_freq_loss_weighted(f_rec, f, focal_weight_map(f_rec, f, alpha));
}

FloatField dft2_adjoint(const Spectrum& grad) {
    // sum_k g(k) exp(+i theta) = HW * idft2(g); only the real part maps back.
    FloatField out = idft2(grad);
    const double hw = static_cast<double>(grad.size());
    for (double& v : out.data) v *= hw;
    return out;
}

TotalLoss total_loss(const FloatField& u_rec, const FloatField& u, double lambda, double alpha,
                     const SpatialMask* l1_region) {
    require_same(u_rec, u);
    if (!(lambda >= 0.0)) throw Error(ErrorCode::invalid_argument, "lambda must be >= 0");

    FieldLoss spa = l1_spatial(u_rec, u, l1_region);
    TotalLoss out;
    out.value.lambda = lambda;
    out.value.spatial = spa.value;
    out.grad = std::move(spa.grad);

    const Spectrum f = dft2(u);
    const Spectrum f_rec = dft2(u_rec);
    SpectrumLoss freq = focal_freq_loss(f_rec, f, alpha);
    out.value.frequency = freq.value;
    out.value.total = spa.value + lambda * freq.value;
    if (lambda != 0.0) {
        const FloatField pulled = dft2_adjoint(freq.grad);
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.data[i] += lambda * pulled.data[i];
    }
    return out;
}

}  // namespace dualmim
