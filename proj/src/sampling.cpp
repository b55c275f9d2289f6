#include "dualmim/sampling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "dualmim/error.hpp"

namespace fs = std::filesystem;

namespace dualmim {

std::size_t DatasetManifest::total() const {
    std::size_t n = 0;
    for (const auto& o : organs) n += o.count();
    return n;
}

std::vector<std::size_t> DatasetManifest::counts() const {
    std::vector<std::size_t> out;
    out.reserve(organs.size());
    for (const auto& o : organs) out.push_back(o.count());
    return out;
}

void DatasetManifest::validate() const {
    if (organs.empty()) throw Error(ErrorCode::empty_dataset, "manifest has no organs");
    std::set<std::string> seen;
    for (const auto& o : organs) {
        if (o.images.empty()) {
            throw Error(ErrorCode::empty_dataset, "organ '" + o.name + "' has no images");
        }
        for (const auto& e : o.images) {
            if (!seen.insert(e.rel_path).second) {
                throw Error(ErrorCode::duplicate_path, "duplicate image path: " + e.rel_path);
            }
        }
    }
}

namespace {

std::map<std::string, std::string> read_labels(const fs::path& file) {
    std::map<std::string, std::string> labels;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw Error(ErrorCode::invalid_config, "bad labels line in " + file.string() + ": " + line);
        }
        labels[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return labels;
}

bool is_png(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(ErrorCode::missing_file, "dataset root is not a directory: " + root.string());
    }
    std::vector<fs::path> organ_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) organ_dirs.push_back(entry.path());
    }
    std::sort(organ_dirs.begin(), organ_dirs.end());
    if (organ_dirs.empty()) {
        throw Error(ErrorCode::empty_dataset, "dataset root has no organ directories: " + root.string());
    }

    DatasetManifest manifest;
    manifest.root = root;
    for (const auto& dir : organ_dirs) {
        Organ organ;
        organ.name = dir.filename().string();
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && is_png(entry.path())) {
                files.push_back(entry.path().filename().string());
            }
        }
        std::sort(files.begin(), files.end());
        std::map<std::string, std::string> labels;
        if (fs::exists(dir / "labels.txt")) labels = read_labels(dir / "labels.txt");
        for (const auto& f : files) {
            auto it = labels.find(f);
            organ.images.push_back({organ.name + "/" + f, it == labels.end() ? "" : it->second});
        }
        manifest.organs.push_back(std::move(organ));
    }
    manifest.validate();
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(ErrorCode::unwritable_path, "cannot write manifest: " + file.string());
    for (const auto& o : manifest.organs) {
        for (const auto& e : o.images) out << o.name << '\t' << e.rel_path << '\t' << e.label << '\n';
    }
    if (!out) throw Error(ErrorCode::unwritable_path, "cannot write manifest: " + file.string());
}

DatasetManifest read_manifest(const fs::path& file, const fs::path& root) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::missing_file, "cannot read manifest: " + file.string());
    DatasetManifest manifest;
    manifest.root = root.empty() ? file.parent_path() : root;
    std::map<std::string, std::size_t> index;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (line.back() == '\t') cols.emplace_back();
        if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty()) {
            throw Error(ErrorCode::invalid_config,
                        file.string() + ":" + std::to_string(lineno) + ": expected organ<TAB>path[<TAB>label]");
        }
        auto [it, inserted] = index.try_emplace(cols[0], manifest.organs.size());
        if (inserted) manifest.organs.push_back({cols[0], {}});
        manifest.organs[it->second].images.push_back({cols[1], cols.size() == 3 ? cols[2] : ""});
    }
    std::sort(manifest.organs.begin(), manifest.organs.end(),
              [](const Organ& a, const Organ& b) { return a.name < b.name; });
    for (auto& o : manifest.organs) {
        std::sort(o.images.begin(), o.images.end(),
                  [](const ImageEntry& a, const ImageEntry& b) { return a.rel_path < b.rel_path; });
    }
    manifest.validate();
    return manifest;
}

double SamplerWeights::weight_of(const std::string& organ) const {
    for (std::size_t i = 0; i < organs.size(); ++i) {
        if (organs[i] == organ) return weights[i];
    }
    throw Error(ErrorCode::invalid_argument, "unknown organ: " + organ);
}

std::vector<double> balanced_weights(const std::vector<std::size_t>& counts) {
    if (counts.empty()) throw Error(ErrorCode::empty_dataset, "no organ counts");
    std::vector<double> w;
    double sum = 0.0;
    for (std::size_t n : counts) {
        if (n == 0) throw Error(ErrorCode::empty_dataset, "organ with zero images");
        w.push_back(1.0 / std::sqrt(static_cast<double>(n)));
        sum += w.back();
    }
    for (double& v : w) v /= sum;
    return w;
}

SamplerWeights organ_weights(const DatasetManifest& manifest) {
    if (manifest.organs.empty()) throw Error(ErrorCode::empty_dataset, "manifest has no organs");
    SamplerWeights out;
    for (const auto& o : manifest.organs) {
        if (o.count() == 0) {
            throw Error(ErrorCode::empty_dataset, "organ '" + o.name + "' has zero images");
        }
        out.organs.push_back(o.name);
    }
    out.weights = balanced_weights(manifest.counts());
    return out;
}

SampledImage sample_image(Rng& rng, const DatasetManifest& manifest, const SamplerWeights& weights) {
    if (weights.weights.size() != manifest.organs.size()) {
        throw Error(ErrorCode::invalid_argument, "sampler weights do not match manifest");
    }
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t organ = manifest.organs.size() - 1;
    for (std::size_t i = 0; i < weights.weights.size(); ++i) {
        acc += weights.weights[i];
        if (u < acc) {
            organ = i;
            break;
        }
    }
    const std::size_t image = static_cast<std::size_t>(rng.uniform_int(manifest.organs[organ].count()));
    return {organ, image};
}

AugmentConfig AugmentConfig::disabled(std::size_t h, std::size_t w) {
    AugmentConfig cfg;
    cfg.out_h = h;
    cfg.out_w = w;
    cfg.train = false;
    cfg.rotate_p = cfg.scale_p = cfg.crop_p = 0.0;
    cfg.brightness_p = cfg.contrast_p = cfg.blur_p = 0.0;
    return cfg;
}

void AugmentConfig::validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!(prob(rotate_p) && prob(scale_p) && prob(crop_p) && prob(brightness_p) && prob(contrast_p) && prob(blur_p))) {
        throw Error(ErrorCode::invalid_config, "augmentation probabilities must lie in [0, 1]");
    }
    if (out_h == 0 || out_w == 0) throw Error(ErrorCode::invalid_config, "training resolution must be >= 1");
    if (scale_min <= 0.0 || scale_max < scale_min || brightness_max < brightness_min ||
        contrast_min < 0.0 || contrast_max < contrast_min || blur_sigma_min <= 0.0 ||
        blur_sigma_max < blur_sigma_min || crop_min_fraction <= 0.0 || crop_min_fraction > 1.0 ||
        rotate_max_deg < 0.0) {
        throw Error(ErrorCode::invalid_config, "augmentation ranges are degenerate");
    }
}

FloatField rotate_bilinear(const FloatField& field, double degrees) {
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (static_cast<double>(field.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(field.width) - 1.0) / 2.0;
    FloatField out(field.height, field.width);
    for (std::size_t y = 0; y < field.height; ++y) {
        for (std::size_t x = 0; x < field.width; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            // inverse rotation maps output coordinates back to the source
            out.at(y, x) = sample_bilinear(field, cy + c * dy - s * dx, cx + s * dy + c * dx);
        }
    }
    return out;
}

FloatField zoom_bilinear(const FloatField& field, double factor) {
    const double cy = (static_cast<double>(field.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(field.width) - 1.0) / 2.0;
    FloatField out(field.height, field.width);
    for (std::size_t y = 0; y < field.height; ++y) {
        for (std::size_t x = 0; x < field.width; ++x) {
            out.at(y, x) = sample_bilinear(field, cy + (static_cast<double>(y) - cy) / factor,
                                           cx + (static_cast<double>(x) - cx) / factor);
        }
    }
    return out;
}

namespace {

// Resamples the window [y0, y0+wh) x [x0, x0+ww) to (out_h, out_w) with
// half-pixel-centre alignment.
FloatField crop_resample(const FloatField& field, double y0, double x0, double wh, double ww,
                         std::size_t out_h, std::size_t out_w) {
    FloatField out(out_h, out_w);
    const double sy = wh / static_cast<double>(out_h), sx = ww / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            out.at(y, x) = sample_bilinear(field, y0 + (static_cast<double>(y) + 0.5) * sy - 0.5,
                                           x0 + (static_cast<double>(x) + 0.5) * sx - 0.5);
        }
    }
    return out;
}

FloatField crop_exact(const FloatField& field, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    FloatField out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.at(y, x) = field.at(y0 + y, x0 + x);
    }
    return out;
}

}  // namespace

FloatField gaussian_blur(const FloatField& field, double sigma) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "blur sigma must be > 0");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    const long h = static_cast<long>(field.height), w = static_cast<long>(field.width);
    FloatField tmp(field.height, field.width), out(field.height, field.width);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long xx = std::clamp(x + k, 0L, w - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * field.data[static_cast<std::size_t>(y * w + xx)];
            }
            tmp.data[static_cast<std::size_t>(y * w + x)] = acc;
        }
    }
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long yy = std::clamp(y + k, 0L, h - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.data[static_cast<std::size_t>(yy * w + x)];
            }
            out.data[static_cast<std::size_t>(y * w + x)] = acc;
        }
    }
    return out;
}

FloatField augment(const FloatField& field, Rng& rng, const AugmentConfig& cfg) {
    cfg.validate();
    if (cfg.bridge == ResolutionBridge::crop && (field.height < cfg.out_h || field.width < cfg.out_w)) {
        throw Error(ErrorCode::invalid_argument, "crop target exceeds field size");
    }
    FloatField f = field;
    if (rng.bernoulli(cfg.rotate_p)) {
        f = rotate_bilinear(f, rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg));
    }
    if (rng.bernoulli(cfg.scale_p)) {
        f = zoom_bilinear(f, rng.uniform(cfg.scale_min, cfg.scale_max));
    }
    if (rng.bernoulli(cfg.crop_p)) {
        const double frac = rng.uniform(cfg.crop_min_fraction, 1.0);
        const double wh = frac * static_cast<double>(f.height), ww = frac * static_cast<double>(f.width);
        const double y0 = rng.uniform(0.0, static_cast<double>(f.height) - wh);
        const double x0 = rng.uniform(0.0, static_cast<double>(f.width) - ww);
        f = crop_resample(f, y0, x0, wh, ww, f.height, f.width);
    }
    if (cfg.bridge == ResolutionBridge::resize) {
        f = resize_bilinear(f, cfg.out_h, cfg.out_w);
    } else if (f.height != cfg.out_h || f.width != cfg.out_w) {
        const std::size_t dy = f.height - cfg.out_h, dx = f.width - cfg.out_w;
        const std::size_t y0 = cfg.train ? static_cast<std::size_t>(rng.uniform_int(dy + 1)) : dy / 2;
        const std::size_t x0 = cfg.train ? static_cast<std::size_t>(rng.uniform_int(dx + 1)) : dx / 2;
        f = crop_exact(f, y0, x0, cfg.out_h, cfg.out_w);
    }
    if (rng.bernoulli(cfg.brightness_p)) {
        const double delta = rng.uniform(cfg.brightness_min, cfg.brightness_max);
        for (double& v : f.data) v = std::clamp(v + delta, 0.0, 1.0);
    }
    if (rng.bernoulli(cfg.contrast_p)) {
        const double factor = rng.uniform(cfg.contrast_min, cfg.contrast_max);
        const double m = field_mean(f);
        for (double& v : f.data) v = std::clamp((v - m) * factor + m, 0.0, 1.0);
    }
    if (rng.bernoulli(cfg.blur_p)) {
        f = gaussian_blur(f, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    for (double& v : f.data) v = std::clamp(v, 0.0, 1.0);
    return f;
}

std::vector<std::size_t> fraction_subset(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "label fraction must lie in (0, 1]");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);
    }
    // Guard against 0.2 * 10 evaluating to 2.0000000000000004.
    const double want = fraction * static_cast<double>(n);
    auto take = static_cast<std::size_t>(std::ceil(want - 1e-9));
    take = std::min(take, n);
    order.resize(take);
    return order;
}

}  // namespace dualmim
