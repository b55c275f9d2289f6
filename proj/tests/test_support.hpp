#pragma once

// Shared fixtures and independent reference oracles for the test suites.
// Oracles here follow the defining formulas directly and never call the
// library code path they are used to check.

#include <png.h>
#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "dualmim") {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline FloatField random_field(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    FloatField f(h, w);
    for (double& v : f.data) v = dist(gen);
    return f;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Direct double sum: F(u,v) = sum_x sum_y f(x,y) exp(-i 2 pi (ux/H + vy/W)).
inline std::vector<std::complex<double>> naive_dft2(const FloatField& f) {
    const std::size_t h = f.height, w = f.width;
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t x = 0; x < h; ++x) {
                for (std::size_t y = 0; y < w; ++y) {
                    const double angle = -2.0 * std::numbers::pi *
                                         (static_cast<double>(u * x) / static_cast<double>(h) +
                                          static_cast<double>(v * y) / static_cast<double>(w));
                    acc += f.at(x, y) * std::complex<double>(std::cos(angle), std::sin(angle));
                }
            }
            out[u * w + v] = acc;
        }
    }
    return out;
}

// Inverse double sum with 1/(HW); returns complex values so residue is visible.
inline std::vector<std::complex<double>> naive_idft2(const std::vector<std::complex<double>>& F,
                                                     std::size_t h, std::size_t w) {
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t x = 0; x < h; ++x) {
        for (std::size_t y = 0; y < w; ++y) {
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t u = 0; u < h; ++u) {
                for (std::size_t v = 0; v < w; ++v) {
                    const double angle = 2.0 * std::numbers::pi *
                                         (static_cast<double>(u * x) / static_cast<double>(h) +
                                          static_cast<double>(v * y) / static_cast<double>(w));
                    acc += F[u * w + v] * std::complex<double>(std::cos(angle), std::sin(angle));
                }
            }
            out[x * w + y] = acc / static_cast<double>(h * w);
        }
    }
    return out;
}

// Keep/stop decision for one natural-layout bin, recomputed from the
// band-stop definition without the library's mask construction.
inline bool oracle_bin_stopped(std::size_t u, std::size_t v, std::size_t h, std::size_t w,
                               const std::vector<int>& bands, int n_bands, std::size_t preserve) {
    const long ch = static_cast<long>(h / 2), cw = static_cast<long>(w / 2);
    // natural index -> signed offset from DC
    long du = static_cast<long>(u), dv = static_cast<long>(v);
    if (du >= static_cast<long>(h) - ch) du -= static_cast<long>(h);
    if (dv >= static_cast<long>(w) - cw) dv -= static_cast<long>(w);
    const long lo = -static_cast<long>(preserve / 2), hi = lo + static_cast<long>(preserve) - 1;
    auto in_block = [&](long a, long b) { return a >= lo && a <= hi && b >= lo && b <= hi; };
    if (preserve > 0 && (in_block(du, dv) || in_block(-du, -dv))) return false;
    const double r = std::hypot(static_cast<double>(du), static_cast<double>(dv));
    const double r_max = std::hypot(static_cast<double>(ch), static_cast<double>(cw));
    for (int b : bands) {
        const double f1 = r_max * b / n_bands;
        const double f2 = b + 1 == n_bands ? r_max : r_max * (b + 1) / n_bands;
        if (f1 < r && r <= f2) return true;
    }
    return false;
}

// Writes an 8-bit RGB PNG through libpng for colour-conversion tests.
inline void write_rgb_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
                          const std::vector<std::uint8_t>& rgb) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) {
        png_write_row(png, const_cast<png_bytep>(rgb.data() + y * w * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

// PNG signature + IHDR chunk declaring the given bit depth (with valid CRC).
inline void write_png_header_only(const std::filesystem::path& path, std::uint8_t bit_depth) {
    std::vector<std::uint8_t> bytes = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> chunk = {'I', 'H', 'D', 'R', 0, 0, 0, 1, 0, 0, 0, 1,
                                       bit_depth, 0, 0, 0, 0};
    const std::uint8_t len[4] = {0, 0, 0, 13};
    bytes.insert(bytes.end(), len, len + 4);
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
    const auto crc = static_cast<std::uint32_t>(crc32(0L, chunk.data(), static_cast<uInt>(chunk.size())));
    for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<std::uint8_t>(crc >> s));
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dualmim::testing
