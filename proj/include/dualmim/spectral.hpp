#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/rng.hpp"

namespace dualmim {

enum class SpectrumLayout { natural, centered };

/// Complex 2D spectrum stored as separate real/imaginary planes.
///
/// In natural layout bin (u, v) holds frequency (u, v) with DC at (0, 0).
/// In centered layout DC sits at (floor(H/2), floor(W/2)).
struct Spectrum {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> real;
    std::vector<double> imag;
    SpectrumLayout layout = SpectrumLayout::natural;

    Spectrum() = default;
    Spectrum(std::size_t h, std::size_t w, SpectrumLayout l = SpectrumLayout::natural)
        : height(h), width(w), real(h * w, 0.0), imag(h * w, 0.0), layout(l) {}

    std::size_t size() const { return real.size(); }
    std::complex<double> at(std::size_t u, std::size_t v) const {
        return {real[u * width + v], imag[u * width + v]};
    }
    void set(std::size_t u, std::size_t v, std::complex<double> z) {
        real[u * width + v] = z.real();
        imag[u * width + v] = z.imag();
    }

    /// Bin at signed frequency offset (du, dv) from DC, valid in either layout.
    std::complex<double> at_centered(long du, long dv) const;

    bool same_shape(const Spectrum& o) const { return height == o.height && width == o.width; }
};

/// Band-stop mask in centered layout: keep = 1 passes a bin, 0 zeroes it.
struct FreqMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> keep;
    std::vector<int> bands_stopped;

    FreqMask() = default;
    FreqMask(std::size_t h, std::size_t w) : height(h), width(w), keep(h * w, 1) {}

    std::uint8_t at(std::size_t u, std::size_t v) const { return keep[u * width + v]; }
    std::size_t stopped_count() const;

    /// True when keep(d) == keep(-d) for every offset d from the centre,
    /// with offsets taken modulo the grid. This is exactly what keeps the
    /// inverse transform of a masked real-image spectrum real.
    bool is_point_symmetric() const;
};

struct FreqMaskConfig {
    std::size_t height = 224;
    std::size_t width = 224;
    int n_bands = 7;
    int n_select = 2;
    std::size_t preserve = 10;
};

/// Unnormalized forward DFT, kernel exp(-i 2 pi (ux/H + vy/W)). Mixed-radix
/// row-column FFT; any size is supported.
Spectrum dft2(const FloatField& field);

/// Inverse DFT with 1/(HW) scaling. Returns the real part; the largest
/// discarded imaginary magnitude is written to *imag_residue if given.
FloatField idft2(const Spectrum& spec, double* imag_residue = nullptr);

/// Complex 1D DFT of any length (forward: exp(-i 2 pi jk/n), unscaled).
std::vector<std::complex<double>> fft(std::vector<std::complex<double>> data, bool inverse = false);

FloatField amplitude(const Spectrum& spec);

/// atan2(imag, real) per bin in (-pi, pi]; zero bins report 0.
FloatField phase(const Spectrum& spec);

Spectrum center_shift(const Spectrum& spec);
Spectrum inverse_shift(const Spectrum& spec);

/// Quadrant swap on a plain raster. forward moves index 0 to floor(n/2);
/// the inverse direction undoes it for odd sizes too.
FloatField shift_quadrants(const FloatField& field, bool inverse = false);

/// Radial cutoff k * r_max / n_bands in centered coordinates, where r_max is
/// the distance from the centre bin to the (0, 0) corner. edge(n_bands) is
/// exactly r_max.
double band_edge(int k, int n_bands, std::size_t h, std::size_t w);

/// Keep-region of the preserved low-frequency window: the preserve x preserve
/// block around the centre together with its point reflection.
bool in_preserve_window(long du, long dv, std::size_t preserve);

/// Single band-stop filter: stops bins with edge(k) < r <= edge(k+1) except
/// inside the preserve window.
FreqMask make_bandstop_filter(int band_index, int n_bands, std::size_t h, std::size_t w,
                              std::size_t preserve);

/// Stops the union of n_select distinct bands drawn uniformly without replacement.
FreqMask sample_freq_mask(Rng& rng, const FreqMaskConfig& cfg);

/// Same construction from an explicit band list.
FreqMask combine_bands(const std::vector<int>& bands, const FreqMaskConfig& cfg);

/// Zeroes stopped bins. Works for either spectrum layout; throws if the mask
/// is not point symmetric.
Spectrum apply_freq_mask(const Spectrum& spec, const FreqMask& mask);

}  // namespace dualmim
