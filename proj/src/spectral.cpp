#include "dualmim/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "dualmim/error.hpp"

namespace dualmim {

namespace {

using cd = std::complex<double>;

std::size_t smallest_factor(std::size_t n) {
    if (n % 2 == 0) return 2;
    for (std::size_t p = 3; p * p <= n; p += 2) {
        if (n % p == 0) return p;
    }
    return n;
}

// Twiddle table exp(-i 2 pi j / n), j in [0, n). Entries are evaluated
// directly rather than by recurrence.
class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n), twiddle_(n) {
        for (std::size_t j = 0; j < n; ++j) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) /
                                 static_cast<double>(n);
            twiddle_[j] = {std::cos(angle), std::sin(angle)};
        }
    }

    void run(const cd* in, std::size_t stride, cd* out, std::size_t n, cd* scratch) const {
        if (n == 1) {
            out[0] = in[0];
            return;
        }
        const std::size_t p = smallest_factor(n);
        const std::size_t m = n / p;
        // Decimation in time: p interleaved sub-sequences of length m.
        for (std::size_t r = 0; r < p; ++r) {
            run(in + r * stride, stride * p, scratch + r * m, m, out + r * m);
        }
        const std::size_t step = n_ / n;  // W_n^j = W_N^(j * N / n)
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t q = 0; q < p; ++q) {
                const std::size_t idx = k + q * m;
                cd acc = scratch[k];
                for (std::size_t r = 1; r < p; ++r) {
                    acc += scratch[r * m + k] * twiddle_[(r * idx * step) % n_];
                }
                out[idx] = acc;
            }
        }
    }

    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    std::vector<cd> twiddle_;
};

const FftPlan& plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

void fft_inplace(std::vector<cd>& data, std::vector<cd>& work, std::vector<cd>& scratch) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    work.resize(n);
    scratch.resize(n);
    plan_for(n).run(data.data(), 1, work.data(), n, scratch.data());
    data.swap(work);
}

// Row-column 2D transform of a complex plane (forward kernel, unscaled).
void fft2_forward(std::vector<cd>& plane, std::size_t h, std::size_t w) {
    std::vector<cd> line, work, scratch;
    line.resize(w);
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(y * w), w, line.begin());
        fft_inplace(line, work, scratch);
        std::copy(line.begin(), line.end(), plane.begin() + static_cast<std::ptrdiff_t>(y * w));
        line.resize(w);
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) line[y] = plane[y * w + x];
        fft_inplace(line, work, scratch);
        for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = line[y];
        line.resize(h);
    }
}

std::size_t wrap(long v, std::size_t n) {
    const long m = static_cast<long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

std::complex<double> Spectrum::at_centered(long du, long dv) const {
    if (layout == SpectrumLayout::natural) return at(wrap(du, height), wrap(dv, width));
    return at(wrap(du + static_cast<long>(height / 2), height),
              wrap(dv + static_cast<long>(width / 2), width));
}

std::vector<std::complex<double>> fft(std::vector<std::complex<double>> data, bool inverse) {
    if (inverse) {
        for (auto& z : data) z = std::conj(z);
    }
    std::vector<cd> work, scratch;
    fft_inplace(data, work, scratch);
    if (inverse) {
        for (auto& z : data) z = std::conj(z);
    }
    return data;
}

Spectrum dft2(const FloatField& field) {
    const std::size_t h = field.height, w = field.width;
    std::vector<cd> plane(h * w);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = {field.data[i], 0.0};
    fft2_forward(plane, h, w);
    Spectrum out(h, w);
    for (std::size_t i = 0; i < plane.size(); ++i) {
        out.real[i] = plane[i].real();
        out.imag[i] = plane[i].imag();
    }
    return out;
}

FloatField idft2(const Spectrum& spec, double* imag_residue) {
    if (spec.layout != SpectrumLayout::natural) {
        throw Error(ErrorCode::layout_mismatch, "idft2 expects a natural-layout spectrum");
    }
    const std::size_t h = spec.height, w = spec.width;
    // conj(F(conj(X))) is the unscaled inverse.
    std::vector<cd> plane(h * w);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = {spec.real[i], -spec.imag[i]};
    fft2_forward(plane, h, w);
    const double scale = 1.0 / static_cast<double>(h * w);
    FloatField out(h, w);
    double residue = 0.0;
    for (std::size_t i = 0; i < plane.size(); ++i) {
        out.data[i] = plane[i].real() * scale;
        residue = std::max(residue, std::abs(plane[i].imag() * scale));
    }
    if (imag_residue) *imag_residue = residue;
    return out;
}

FloatField amplitude(const Spectrum& spec) {
    FloatField out(spec.height, spec.width);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        out.data[i] = std::sqrt(spec.real[i] * spec.real[i] + spec.imag[i] * spec.imag[i]);
    }
    return out;
}

FloatField phase(const Spectrum& spec) {
    FloatField out(spec.height, spec.width);
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const double re = spec.real[i], im = spec.imag[i];
        if (re == 0.0 && im == 0.0) {
            out.data[i] = 0.0;
            continue;
        }
        double a = std::atan2(im, re);
        // atan2(-0.0, negative) yields -pi; fold onto +pi for a (-pi, pi] range.
        if (a <= -std::numbers::pi) a = std::numbers::pi;
        out.data[i] = a;
    }
    return out;
}

namespace {

template <typename T>
std::vector<T> permute_quadrants(const std::vector<T>& in, std::size_t h, std::size_t w,
                                 bool inverse) {
    std::vector<T> out(in.size());
    const std::size_t ch = h / 2, cw = w / 2;
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t su = (u + ch) % h, sv = (v + cw) % w;
            if (!inverse) {
                out[su * w + sv] = in[u * w + v];
            } else {
                out[u * w + v] = in[su * w + sv];
            }
        }
    }
    return out;
}

}  // namespace

Spectrum center_shift(const Spectrum& spec) {
    if (spec.layout != SpectrumLayout::natural) {
        throw Error(ErrorCode::layout_mismatch, "center_shift expects a natural-layout spectrum");
    }
    Spectrum out;
    out.height = spec.height;
    out.width = spec.width;
    out.layout = SpectrumLayout::centered;
    out.real = permute_quadrants(spec.real, spec.height, spec.width, false);
    out.imag = permute_quadrants(spec.imag, spec.height, spec.width, false);
    return out;
}

Spectrum inverse_shift(const Spectrum& spec) {
    if (spec.layout != SpectrumLayout::centered) {
        throw Error(ErrorCode::layout_mismatch, "inverse_shift expects a centered spectrum");
    }
    Spectrum out;
    out.height = spec.height;
    out.width = spec.width;
    out.layout = SpectrumLayout::natural;
    out.real = permute_quadrants(spec.real, spec.height, spec.width, true);
    out.imag = permute_quadrants(spec.imag, spec.height, spec.width, true);
    return out;
}

FloatField shift_quadrants(const FloatField& field, bool inverse) {
    FloatField out;
    out.height = field.height;
    out.width = field.width;
    out.data = permute_quadrants(field.data, field.height, field.width, inverse);
    return out;
}

std::size_t FreqMask::stopped_count() const {
    return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

bool FreqMask::is_point_symmetric() const {
    const std::size_t ch = height / 2, cw = width / 2;
    for (std::size_t i = 0; i < height; ++i) {
        const std::size_t pi = (2 * ch + height - i) % height;
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t pj = (2 * cw + width - j) % width;
            if (keep[i * width + j] != keep[pi * width + pj]) return false;
        }
    }
    return true;
}

double band_edge(int k, int n_bands, std::size_t h, std::size_t w) {
    const double cu = static_cast<double>(h / 2), cv = static_cast<double>(w / 2);
    const double r_max = std::sqrt(cu * cu + cv * cv);
    if (k >= n_bands) return r_max;
    return static_cast<double>(k) * r_max / static_cast<double>(n_bands);
}

bool in_preserve_window(long du, long dv, std::size_t preserve) {
    if (preserve == 0) return false;
    const long p = static_cast<long>(preserve);
    const long lo = -(p / 2);
    const long hi = lo + p - 1;
    const bool block = du >= lo && du <= hi && dv >= lo && dv <= hi;
    const bool mirrored = -du >= lo && -du <= hi && -dv >= lo && -dv <= hi;
    return block || mirrored;
}

namespace {

void stop_band(FreqMask& mask, int band, int n_bands, std::size_t preserve) {
    const double f1 = band_edge(band, n_bands, mask.height, mask.width);
    const double f2 = band_edge(band + 1, n_bands, mask.height, mask.width);
    const long ch = static_cast<long>(mask.height / 2), cw = static_cast<long>(mask.width / 2);
    for (std::size_t i = 0; i < mask.height; ++i) {
        const long du = static_cast<long>(i) - ch;
        for (std::size_t j = 0; j < mask.width; ++j) {
            const long dv = static_cast<long>(j) - cw;
            if (in_preserve_window(du, dv, preserve)) continue;
            const double r = std::sqrt(static_cast<double>(du * du + dv * dv));
            if (f1 < r && r <= f2) mask.keep[i * mask.width + j] = 0;
        }
    }
}

void validate(const FreqMaskConfig& cfg) {
    if (cfg.n_bands < 1 || cfg.n_select < 0 || cfg.n_select > cfg.n_bands) {
        throw Error(ErrorCode::invalid_config, "frequency mask config needs 0 <= n_select <= n_bands, n_bands >= 1");
    }
    if (cfg.height == 0 || cfg.width == 0) {
        throw Error(ErrorCode::invalid_config, "frequency mask needs a non-empty grid");
    }
}

}  // namespace

FreqMask make_bandstop_filter(int band_index, int n_bands, std::size_t h, std::size_t w,
                              std::size_t preserve) {
    if (n_bands < 1 || band_index < 0 || band_index >= n_bands) {
        throw Error(ErrorCode::invalid_argument, "band index out of range");
    }
    FreqMask mask(h, w);
    stop_band(mask, band_index, n_bands, preserve);
    mask.bands_stopped = {band_index};
    return mask;
}

FreqMask combine_bands(const std::vector<int>& bands, const FreqMaskConfig& cfg) {
    validate(cfg);
    FreqMask mask(cfg.height, cfg.width);
    for (int b : bands) {
        if (b < 0 || b >= cfg.n_bands) throw Error(ErrorCode::invalid_argument, "band index out of range");
        stop_band(mask, b, cfg.n_bands, cfg.preserve);
    }
    mask.bands_stopped = bands;
    std::sort(mask.bands_stopped.begin(), mask.bands_stopped.end());
    return mask;
}

FreqMask sample_freq_mask(Rng& rng, const FreqMaskConfig& cfg) {
    validate(cfg);
    std::vector<int> pool(static_cast<std::size_t>(cfg.n_bands));
    for (int i = 0; i < cfg.n_bands; ++i) pool[static_cast<std::size_t>(i)] = i;
    // Partial Fisher-Yates: the first n_select entries are a uniform draw.
    for (int i = 0; i < cfg.n_select; ++i) {
        const auto remaining = static_cast<std::uint64_t>(cfg.n_bands - i);
        const auto j = static_cast<std::size_t>(i) + rng.uniform_int(remaining);
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(cfg.n_select));
    return combine_bands(pool, cfg);
}

Spectrum apply_freq_mask(const Spectrum& spec, const FreqMask& mask) {
    if (spec.height != mask.height || spec.width != mask.width) {
        throw Error(ErrorCode::shape_mismatch, "frequency mask shape does not match spectrum");
    }
    if (!mask.is_point_symmetric()) {
        throw Error(ErrorCode::invalid_argument, "frequency mask is not point symmetric");
    }
    Spectrum out = spec;
    const std::size_t h = spec.height, w = spec.width;
    const std::size_t ch = h / 2, cw = w / 2;
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t mu = spec.layout == SpectrumLayout::natural ? (u + ch) % h : u;
            const std::size_t mv = spec.layout == SpectrumLayout::natural ? (v + cw) % w : v;
            if (mask.keep[mu * w + mv] == 0) {
                out.real[u * w + v] = 0.0;
                out.imag[u * w + v] = 0.0;
            }
        }
    }
    return out;
}

}  // namespace dualmim
