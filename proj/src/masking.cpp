#include "dualmim/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualmim/error.hpp"

namespace dualmim {

std::size_t SpatialMask::masked_count() const {
    return static_cast<std::size_t>(std::count_if(masked.begin(), masked.end(),
                                                  [](std::uint8_t m) { return m != 0; }));
}

SpatialMask sample_spatial_mask(Rng& rng, std::size_t grid_h, std::size_t grid_w,
                                std::size_t patch, double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "mask ratio must lie in [0, 1]");
    }
    if (grid_h == 0 || grid_w == 0 || patch == 0) {
        throw Error(ErrorCode::invalid_argument, "mask grid and patch size must be >= 1");
    }
    const std::size_t n = grid_h * grid_w;
    // std::round rounds halves away from zero.
    const auto count = static_cast<std::size_t>(std::round(ratio * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
        std::swap(order[i], order[j]);
    }
    SpatialMask mask(grid_h, grid_w, patch);
    for (std::size_t i = 0; i < count; ++i) mask.masked[order[i]] = 1;
    return mask;
}

FloatField apply_spatial_mean_mask(const FloatField& field, const SpatialMask& mask) {
    if (!mask.fits(field)) {
        throw Error(ErrorCode::shape_mismatch, "spatial mask geometry does not match image");
    }
    const double fill = field_mean(field);
    FloatField out = field;
    for (std::size_t y = 0; y < field.height; ++y) {
        for (std::size_t x = 0; x < field.width; ++x) {
            if (mask.pixel_masked(y, x)) out.at(y, x) = fill;
        }
    }
    return out;
}

DualMaskResult dual_mask(const FloatField& field, const SpatialMask& smask, const FreqMask& fmask) {
    if (!smask.fits(field)) {
        throw Error(ErrorCode::shape_mismatch, "spatial mask geometry does not match image");
    }
    if (fmask.height != field.height || fmask.width != field.width) {
        throw Error(ErrorCode::shape_mismatch, "frequency mask geometry does not match image");
    }
    const double fill = field_mean(field);
    FloatField out = idft2(apply_freq_mask(dft2(field), fmask));
    for (std::size_t y = 0; y < field.height; ++y) {
        for (std::size_t x = 0; x < field.width; ++x) {
            if (smask.pixel_masked(y, x)) out.at(y, x) = fill;
        }
    }
    return {std::move(out), DualMaskRecord{smask, fmask, fill}};
}

}  // namespace dualmim
