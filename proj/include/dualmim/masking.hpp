#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/rng.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim {

/// Patch grid over an image; masked(gy, gx) = 1 marks a mean-filled patch.
struct SpatialMask {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t patch = 0;
    std::vector<std::uint8_t> masked;

    SpatialMask() = default;
    SpatialMask(std::size_t gh, std::size_t gw, std::size_t p)
        : grid_h(gh), grid_w(gw), patch(p), masked(gh * gw, 0) {}

    std::size_t masked_count() const;
    bool pixel_masked(std::size_t y, std::size_t x) const {
        return masked[(y / patch) * grid_w + (x / patch)] != 0;
    }
    bool fits(const FloatField& field) const {
        return grid_h * patch == field.height && grid_w * patch == field.width;
    }
};

struct DualMaskRecord {
    SpatialMask spatial;
    FreqMask freq;
    double fill_value = 0.0;
};

/// round(ratio * grid_h * grid_w) patches (half away from zero), chosen
/// uniformly without replacement.
SpatialMask sample_spatial_mask(Rng& rng, std::size_t grid_h, std::size_t grid_w,
                                std::size_t patch, double ratio);

/// Replaces masked patches by the whole-image mean; other pixels pass through.
FloatField apply_spatial_mean_mask(const FloatField& field, const SpatialMask& mask);

struct DualMaskResult {
    FloatField image;
    DualMaskRecord record;
};

/// Frequency-masked reconstruction outside the masked patches, image mean inside.
DualMaskResult dual_mask(const FloatField& field, const SpatialMask& smask, const FreqMask& fmask);

}  // namespace dualmim
