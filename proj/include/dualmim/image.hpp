#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dualmim {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    GrayImage() = default;
    GrayImage(std::size_t h, std::size_t w, std::uint8_t fill = 0)
        : height(h), width(w), data(h * w, fill) {}
    GrayImage(std::size_t h, std::size_t w, std::vector<std::uint8_t> values);

    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Real-valued raster, row-major. Used for images in [0,1] as well as for
/// intermediate quantities (gradients, amplitude maps, weight maps).
struct FloatField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    FloatField() = default;
    FloatField(std::size_t h, std::size_t w, double fill = 0.0)
        : height(h), width(w), data(h * w, fill) {}
    FloatField(std::size_t h, std::size_t w, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

    bool same_shape(const FloatField& o) const { return height == o.height && width == o.width; }

    friend bool operator==(const FloatField&, const FloatField&) = default;
};

/// Decodes a PNG to grayscale. Colour inputs use BT.601 luma
/// (0.299R + 0.587G + 0.114B, rounded); alpha is discarded; 16-bit
/// samples are scaled to 8 bits with rounding.
GrayImage load_png(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG. Lossless, so load_png reproduces the raster.
void save_png(const GrayImage& img, const std::filesystem::path& path);

FloatField normalize(const GrayImage& img);

/// Inverse of normalize: clamps to [0,1] and rounds to the nearest level.
GrayImage quantize(const FloatField& field);

/// Bilinear resampling with half-pixel-centre alignment and edge clamping.
FloatField resize_bilinear(const FloatField& field, std::size_t out_h, std::size_t out_w);

/// Samples the field at continuous pixel coordinates (pixel centres at
/// integer positions) with edge clamping.
double sample_bilinear(const FloatField& field, double y, double x);

double field_mean(const FloatField& field);

}  // namespace dualmim
