#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/rng.hpp"

namespace dualmim {

struct ImageEntry {
    std::string rel_path;  // relative to the manifest root
    std::string label;     // empty when unlabeled
};

struct Organ {
    std::string name;
    std::vector<ImageEntry> images;

    std::size_t count() const { return images.size(); }
};

/// Per-organ image inventory. Organs and images are kept in lexicographic
/// order so manifests built from the same tree are identical.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<Organ> organs;

    std::size_t total() const;
    std::vector<std::size_t> counts() const;
    std::filesystem::path absolute(const ImageEntry& e) const { return root / e.rel_path; }

    /// Throws unless every organ has an image, and paths are unique.
    void validate() const;
};

/// Scans root/<organ>/*.png. An optional root/<organ>/labels.txt holds
/// `filename<TAB>label` lines.
DatasetManifest build_manifest(const std::filesystem::path& root);

/// Line format: organ<TAB>relative-path<TAB>optional-label.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

/// Reads a manifest file; relative paths resolve against `root`, or the
/// file's directory when root is empty.
DatasetManifest read_manifest(const std::filesystem::path& file,
                              const std::filesystem::path& root = {});

struct SamplerWeights {
    std::vector<std::string> organs;
    std::vector<double> weights;  // sums to 1

    double weight_of(const std::string& organ) const;
};

/// Organ-balanced weights: 1/sqrt(N_organ), normalized to sum to 1.
SamplerWeights organ_weights(const DatasetManifest& manifest);
std::vector<double> balanced_weights(const std::vector<std::size_t>& counts);

struct SampledImage {
    std::size_t organ_index = 0;
    std::size_t image_index = 0;
};

/// Organ by weight, then an image uniformly within it (with replacement).
SampledImage sample_image(Rng& rng, const DatasetManifest& manifest, const SamplerWeights& weights);

enum class ResolutionBridge { crop, resize };

struct AugmentConfig {
    std::size_t out_h = 64;
    std::size_t out_w = 64;
    ResolutionBridge bridge = ResolutionBridge::crop;
    bool train = true;  // random crop when true, centre crop otherwise

    double rotate_p = 0.5;
    double rotate_max_deg = 15.0;
    double scale_p = 0.5;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double crop_p = 0.5;
    double crop_min_fraction = 0.8;
    double brightness_p = 0.5;
    double brightness_min = -0.1;
    double brightness_max = 0.1;
    double contrast_p = 0.5;
    double contrast_min = 0.9;
    double contrast_max = 1.1;
    double blur_p = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 1.0;

    /// Every transform disabled; only the resolution bridge remains.
    static AugmentConfig disabled(std::size_t h, std::size_t w);
    void validate() const;
    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// rotate -> scale -> random resized crop -> resolution bridge ->
/// brightness -> contrast -> blur, each applied with its probability.
/// Output is clamped to [0,1] and has shape (out_h, out_w).
FloatField augment(const FloatField& field, Rng& rng, const AugmentConfig& cfg);

FloatField rotate_bilinear(const FloatField& field, double degrees);
FloatField zoom_bilinear(const FloatField& field, double factor);
FloatField gaussian_blur(const FloatField& field, double sigma);

/// Deterministic label-fraction subset of [0, n): the first ceil(fraction*n)
/// entries of a seeded permutation, so smaller fractions nest inside larger.
std::vector<std::size_t> fraction_subset(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace dualmim
