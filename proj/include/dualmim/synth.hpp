#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/rng.hpp"
#include "dualmim/sampling.hpp"

namespace dualmim {

enum class ShapeKind { ellipse, ring, stripes };

struct OrganTemplate {
    std::string name;
    ShapeKind shape = ShapeKind::ellipse;
    double size_min = 0.2;  // shape radius as a fraction of the image size
    double size_max = 0.35;
    double band_lo = 3.0;   // texture band, radial frequency in cycles per image
    double band_hi = 8.0;
    double texture = 0.15;  // texture standard deviation
    double speckle = 0.25;  // multiplicative speckle strength in [0, 1]
    std::size_t count = 1;
};

struct SynthSpec {
    std::vector<OrganTemplate> organs;
    std::size_t image_size = 72;
    std::uint64_t seed = 0;

    /// ellipse/low band, ring/mid band, stripes/high band with 400/100/25 images.
    static SynthSpec defaults();
    void validate() const;
};

/// One image of an organ, values in [0,1] before quantisation.
FloatField render_organ(const OrganTemplate& organ, std::size_t size, Rng& rng);

/// Writes out/<organ>/<organ>_NNNN.png plus labels.txt (label = organ name)
/// and out/manifest.tsv, and returns the manifest. Every image has its own
/// seed derived from (spec.seed, organ, index).
DatasetManifest generate(const SynthSpec& spec, const std::filesystem::path& out);

/// Mean per-bin spectral energy with radius in (lo, hi] divided by the mean
/// over all other bins, DC excluded. Radii in centred coordinates.
double band_energy_ratio(const FloatField& field, double lo, double hi);

}  // namespace dualmim
