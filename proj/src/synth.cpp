#include "dualmim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dualmim/error.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double radius_centered(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
    const double du = static_cast<double>(u) - static_cast<double>(h / 2);
    const double dv = static_cast<double>(v) - static_cast<double>(w / 2);
    return std::sqrt(du * du + dv * dv);
}

// White noise filtered to an annulus of the spectrum, unit variance.
FloatField band_noise(std::size_t n, double lo, double hi, Rng& rng) {
    FloatField white(n, n);
    for (double& v : white.data) v = rng.normal();
    Spectrum s = center_shift(dft2(white));
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            const double r = radius_centered(u, v, n, n);
            if (!(r > lo && r <= hi)) s.set(u, v, {0.0, 0.0});
        }
    }
    FloatField out = idft2(inverse_shift(s));
    double mean = 0.0, var = 0.0;
    for (double v : out.data) mean += v;
    mean /= static_cast<double>(out.size());
    for (double v : out.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(out.size()));
    for (double& v : out.data) v = sd > 0 ? (v - mean) / sd : 0.0;
    return out;
}

double smoothstep_edge(double signed_dist) {
    // ~1 px soft edge; positive distance is inside
    return 1.0 / (1.0 + std::exp(-2.0 * signed_dist));
}

}  // namespace

SynthSpec SynthSpec::defaults() {
    SynthSpec s;
    s.organs = {
        {"ellipse", ShapeKind::ellipse, 0.22, 0.36, 3.0, 8.0, 0.15, 0.25, 400},
        {"ring", ShapeKind::ring, 0.22, 0.36, 11.0, 18.0, 0.15, 0.25, 100},
        {"stripes", ShapeKind::stripes, 0.22, 0.36, 22.0, 32.0, 0.25, 0.25, 25},
    };
    return s;
}

void SynthSpec::validate() const {
    if (organs.empty()) throw Error(ErrorCode::invalid_config, "synthetic corpus needs at least one organ");
    if (image_size < 8) throw Error(ErrorCode::invalid_config, "synthetic image size must be >= 8");
    const double nyquist = static_cast<double>(image_size / 2);
    for (const auto& o : organs) {
        if (o.name.empty() || o.name.find_first_of("/\t\n") != std::string::npos) {
            throw Error(ErrorCode::invalid_config, "bad organ name: '" + o.name + "'");
        }
        if (o.count < 1) throw Error(ErrorCode::invalid_config, "organ " + o.name + " needs count >= 1");
        if (!(o.band_lo >= 0.0 && o.band_hi > o.band_lo && o.band_hi <= nyquist)) {
            throw Error(ErrorCode::invalid_config, "texture band of " + o.name + " must satisfy 0 <= lo < hi <= Nyquist");
        }
        if (!(o.size_min > 0.0 && o.size_max >= o.size_min && o.size_max < 0.5)) {
            throw Error(ErrorCode::invalid_config, "shape size range of " + o.name + " must lie in (0, 0.5)");
        }
        if (!(o.texture >= 0.0)) throw Error(ErrorCode::invalid_config, "texture of " + o.name + " must be >= 0");
        if (!(o.speckle >= 0.0 && o.speckle <= 1.0)) {
            throw Error(ErrorCode::invalid_config, "speckle of " + o.name + " must lie in [0, 1]");
        }
    }
}

FloatField render_organ(const OrganTemplate& organ, std::size_t size, Rng& rng) {
    const double n = static_cast<double>(size);
    // smooth background: level plus a gentle linear gradient
    const double level = rng.uniform(0.25, 0.4);
    const double gy = rng.uniform(-0.08, 0.08), gx = rng.uniform(-0.08, 0.08);

    const double radius = rng.uniform(organ.size_min, organ.size_max) * n;
    const double cy = n / 2 + rng.uniform(-0.1, 0.1) * n, cx = n / 2 + rng.uniform(-0.1, 0.1) * n;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double aspect = rng.uniform(0.6, 0.9);
    const double brightness = rng.uniform(0.6, 0.75);
    const double ct = std::cos(theta), st = std::sin(theta);
    const FloatField texture = band_noise(size, organ.band_lo, organ.band_hi, rng);

    FloatField out(size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double py = static_cast<double>(y) + 0.5 - cy, px = static_cast<double>(x) + 0.5 - cx;
            const double a = ct * px + st * py, b = -st * px + ct * py;  // shape frame
            double inside = 0.0;
            switch (organ.shape) {
                case ShapeKind::ellipse: {
                    const double r = std::sqrt(a * a + (b / aspect) * (b / aspect));
                    inside = smoothstep_edge(radius - r);
                    break;
                }
                case ShapeKind::ring: {
                    const double r = std::sqrt(a * a + b * b);
                    const double inner = 0.55 * radius;
                    inside = smoothstep_edge(std::min(radius - r, r - inner));
                    break;
                }
                case ShapeKind::stripes: {
                    // rectangular lesion with dark bars across it
                    const double d = std::min(radius - std::abs(a), aspect * radius - std::abs(b));
                    const double bars = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * a / (radius / 2.5));
                    inside = smoothstep_edge(d) * (0.35 + 0.65 * bars);
                    break;
                }
            }
            const double bg = level + gy * (py / n) + gx * (px / n);
            double v = bg + (brightness - bg) * inside;
            v += organ.texture * texture.at(y, x);
            const double speckle = 1.0 - organ.speckle + organ.speckle * rng.exponential();
            out.at(y, x) = std::clamp(v * speckle, 0.0, 1.0);
        }
    }
    return out;
}

DatasetManifest generate(const SynthSpec& spec, const std::filesystem::path& out) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec || !std::filesystem::is_directory(out)) {
        throw Error(ErrorCode::unwritable_path, "cannot create output directory: " + out.string());
    }
    DatasetManifest manifest;
    manifest.root = out;
    for (std::size_t o = 0; o < spec.organs.size(); ++o) {
        const OrganTemplate& t = spec.organs[o];
        const auto dir = out / t.name;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw Error(ErrorCode::unwritable_path, "cannot create organ directory: " + dir.string());
        Organ organ{t.name, {}};
        std::string labels;
        for (std::size_t i = 0; i < t.count; ++i) {
            Rng rng(mix(mix(spec.seed) ^ mix(o + 1) ^ (i + 1) * 0xD1B54A32D192ED03ULL));
            char name[96];
            std::snprintf(name, sizeof name, "%s_%04zu.png", t.name.c_str(), i);
            save_png(quantize(render_organ(t, spec.image_size, rng)), dir / name);
            organ.images.push_back({t.name + "/" + name, t.name});
            labels += std::string(name) + "\t" + t.name + "\n";
        }
        std::FILE* f = std::fopen((dir / "labels.txt").c_str(), "wb");
        if (!f) throw Error(ErrorCode::unwritable_path, "cannot write labels in " + dir.string());
        std::fwrite(labels.data(), 1, labels.size(), f);
        std::fclose(f);
        manifest.organs.push_back(std::move(organ));
    }
    std::sort(manifest.organs.begin(), manifest.organs.end(),
              [](const Organ& a, const Organ& b) { return a.name < b.name; });
    write_manifest(manifest, out / "manifest.tsv");
    return manifest;
}

double band_energy_ratio(const FloatField& field, double lo, double hi) {
    const Spectrum s = center_shift(dft2(field));
    const std::size_t h = field.height, w = field.width;
    double in = 0.0, outside = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            const double r = radius_centered(u, v, h, w);
            if (r == 0.0) continue;
            const auto c = s.at(u, v);
            const double e = std::norm(c);
            if (r > lo && r <= hi) {
                in += e;
                ++n_in;
            } else {
                outside += e;
                ++n_out;
            }
        }
    }
    if (n_in == 0 || n_out == 0) throw Error(ErrorCode::invalid_argument, "band covers no bins or all bins");
    return (in / static_cast<double>(n_in)) / (outside / static_cast<double>(n_out));
}

}  // namespace dualmim
