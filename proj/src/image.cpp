#include "dualmim/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "dualmim/error.hpp"

namespace dualmim {

GrayImage::GrayImage(std::size_t h, std::size_t w, std::vector<std::uint8_t> values)
    : height(h), width(w), data(std::move(values)) {
    if (data.size() != h * w) {
        throw Error(ErrorCode::shape_mismatch, "GrayImage data length does not match shape");
    }
}

FloatField::FloatField(std::size_t h, std::size_t w, std::vector<double> values)
    : height(h), width(w), data(std::move(values)) {
    if (data.size() != h * w) {
        throw Error(ErrorCode::shape_mismatch, "FloatField data length does not match shape");
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_handler(png_structp png, png_const_charp) {
    std::longjmp(png_jmpbuf(png), 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

std::uint8_t luma(unsigned r, unsigned g, unsigned b) {
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

}  // namespace

GrayImage load_png(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw Error(ErrorCode::missing_file, "no such file: " + path.string());
    }
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw Error(ErrorCode::missing_file, "cannot open: " + path.string());

    // Signature plus the IHDR chunk: length(4) type(4) w(4) h(4) depth(1) ...
    png_byte head[33];
    const std::size_t got = std::fread(head, 1, sizeof head, file.get());
    if (got < 8 || png_sig_cmp(head, 0, 8) != 0) {
        throw Error(ErrorCode::malformed_png, "not a PNG file: " + path.string());
    }
    // libpng rejects depths above 16 as generic corruption; report them distinctly.
    if (got == sizeof head && std::memcmp(head + 12, "IHDR", 4) == 0 && head[24] > 16) {
        throw Error(ErrorCode::unsupported_bit_depth,
                    "unsupported bit depth " + std::to_string(head[24]) + ": " + path.string());
    }
    std::rewind(file.get());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8) {
        throw Error(ErrorCode::malformed_png, "truncated PNG: " + path.string());
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             png_error_handler, png_warning_handler);
    if (!png) throw Error(ErrorCode::malformed_png, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error(ErrorCode::malformed_png, "libpng init failed");
    }

    // Everything touched after setjmp that must survive longjmp lives here.
    struct Decode {
        png_uint_32 width = 0, height = 0;
        int bit_depth = 0, color_type = 0, channels = 0;
        std::vector<png_byte> pixels;
        std::vector<png_bytep> rows;
        bool depth_error = false;
    };
    auto decode = std::make_unique<Decode>();

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::malformed_png, "corrupt PNG data: " + path.string());
    }

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_get_IHDR(png, info, &decode->width, &decode->height, &decode->bit_depth,
                 &decode->color_type, nullptr, nullptr, nullptr);
    if (decode->bit_depth > 16) {
        decode->depth_error = true;
    } else {
        if (decode->color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (decode->color_type == PNG_COLOR_TYPE_GRAY && decode->bit_depth < 8) {
            png_set_expand_gray_1_2_4_to_8(png);
        }
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (decode->bit_depth == 16) png_set_scale_16(png);
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
        decode->channels = png_get_channels(png, info);
        const std::size_t rowbytes = png_get_rowbytes(png, info);
        decode->pixels.resize(rowbytes * decode->height);
        decode->rows.resize(decode->height);
        for (png_uint_32 y = 0; y < decode->height; ++y) {
            decode->rows[y] = decode->pixels.data() + y * rowbytes;
        }
        png_read_image(png, decode->rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);

    if (decode->depth_error) {
        throw Error(ErrorCode::unsupported_bit_depth,
                    "unsupported bit depth " + std::to_string(decode->bit_depth) + ": " +
                        path.string());
    }
    if (decode->width == 0 || decode->height == 0) {
        throw Error(ErrorCode::malformed_png, "empty PNG: " + path.string());
    }

    GrayImage img(decode->height, decode->width);
    const int ch = decode->channels;
    for (std::size_t y = 0; y < img.height; ++y) {
        const png_byte* row = decode->rows[y];
        for (std::size_t x = 0; x < img.width; ++x) {
            const png_byte* px = row + x * ch;
            img.at(y, x) = ch >= 3 ? luma(px[0], px[1], px[2]) : px[0];
        }
    }
    return img;
}

void save_png(const GrayImage& img, const std::filesystem::path& path) {
    if (img.height == 0 || img.width == 0 || img.data.size() != img.height * img.width) {
        throw Error(ErrorCode::invalid_argument, "cannot save an empty or inconsistent image");
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw Error(ErrorCode::unwritable_path, "cannot write: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              png_error_handler, png_warning_handler);
    if (!png) throw Error(ErrorCode::unwritable_path, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error(ErrorCode::unwritable_path, "libpng init failed");
    }
    std::vector<png_const_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.data.data() + y * img.width;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::unwritable_path, "PNG encoding failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);

    if (std::fflush(file.get()) != 0) {
        throw Error(ErrorCode::unwritable_path, "write failed: " + path.string());
    }
}

FloatField normalize(const GrayImage& img) {
    FloatField out(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
    return out;
}

GrayImage quantize(const FloatField& field) {
    GrayImage out(field.height, field.width);
    for (std::size_t i = 0; i < field.data.size(); ++i) {
        const double v = std::clamp(field.data[i], 0.0, 1.0) * 255.0;
        out.data[i] = static_cast<std::uint8_t>(std::lround(v));
    }
    return out;
}

double sample_bilinear(const FloatField& field, double y, double x) {
    const double maxy = static_cast<double>(field.height - 1);
    const double maxx = static_cast<double>(field.width - 1);
    y = std::clamp(y, 0.0, maxy);
    x = std::clamp(x, 0.0, maxx);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, field.height - 1);
    const std::size_t x1 = std::min(x0 + 1, field.width - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double top = field.at(y0, x0) * (1.0 - fx) + field.at(y0, x1) * fx;
    const double bottom = field.at(y1, x0) * (1.0 - fx) + field.at(y1, x1) * fx;
    return top * (1.0 - fy) + bottom * fy;
}

FloatField resize_bilinear(const FloatField& field, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) {
        throw Error(ErrorCode::invalid_argument, "resize target dimension must be >= 1");
    }
    if (field.height == 0 || field.width == 0) {
        throw Error(ErrorCode::invalid_argument, "cannot resize an empty field");
    }
    if (out_h == field.height && out_w == field.width) return field;

    const double sy = static_cast<double>(field.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(field.width) / static_cast<double>(out_w);
    FloatField out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
        for (std::size_t x = 0; x < out_w; ++x) {
            const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
            out.at(y, x) = sample_bilinear(field, src_y, src_x);
        }
    }
    return out;
}

double field_mean(const FloatField& field) {
    if (field.data.empty()) return 0.0;
    // Neumaier summation keeps the mean accurate for large fields.
    double sum = 0.0;
    double comp = 0.0;
    for (double v : field.data) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    return (sum + comp) / static_cast<double>(field.data.size());
}

}  // namespace dualmim
