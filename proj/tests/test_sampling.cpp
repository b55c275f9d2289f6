#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "dualmim/error.hpp"
#include "dualmim/sampling.hpp"
#include "test_support.hpp"

using namespace dualmim;
using dualmim::testing::TempDir;
using dualmim::testing::random_field;

namespace {

void write_organ(const std::filesystem::path& root, const std::string& organ, std::size_t n) {
    std::filesystem::create_directories(root / organ);
    for (std::size_t i = 0; i < n; ++i) {
        GrayImage img(2, 2);
        img.data[0] = static_cast<std::uint8_t>(i);
        char name[32];
        std::snprintf(name, sizeof name, "img_%03zu.png", i);
        save_png(img, root / organ / name);
    }
}

// Synthetic manifest without touching disk.
DatasetManifest counts_manifest(const std::vector<std::pair<std::string, std::size_t>>& counts) {
    DatasetManifest m;
    m.root = "/nonexistent";
    for (const auto& [name, n] : counts) {
        Organ o{name, {}};
        for (std::size_t i = 0; i < n; ++i) o.images.push_back({name + "/" + std::to_string(i) + ".png", ""});
        m.organs.push_back(std::move(o));
    }
    return m;
}

bool within_3sigma(std::size_t hits, std::size_t n, double p) {
    const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    return std::abs(static_cast<double>(hits) - static_cast<double>(n) * p) <= 3.0 * sigma;
}

}  // namespace

TEST(Manifest, CountsFollowDirectoryTree) {
    TempDir dir;
    write_organ(dir.path(), "A", 3);
    write_organ(dir.path(), "B", 1);
    const DatasetManifest m = build_manifest(dir.path());
    ASSERT_EQ(m.organs.size(), 2u);
    EXPECT_EQ(m.organs[0].name, "A");
    EXPECT_EQ(m.counts(), (std::vector<std::size_t>{3, 1}));
    EXPECT_EQ(m.total(), 4u);
    EXPECT_EQ(m.organs[0].images[0].rel_path, "A/img_000.png");
}

TEST(Manifest, EmptyRootIsError) {
    TempDir dir;
    try {
        build_manifest(dir.path());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::empty_dataset);
    }
}

TEST(Manifest, EmptyOrganIsError) {
    TempDir dir;
    write_organ(dir.path(), "A", 2);
    std::filesystem::create_directories(dir.path() / "B");
    try {
        build_manifest(dir.path());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::empty_dataset);
    }
}

TEST(Manifest, DuplicatePathRejected) {
    DatasetManifest m = counts_manifest({{"A", 2}});
    m.organs[0].images[1] = m.organs[0].images[0];
    try {
        m.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::duplicate_path);
    }
}

TEST(Manifest, RebuildIsIdentical) {
    TempDir dir;
    write_organ(dir.path(), "liver", 4);
    write_organ(dir.path(), "breast", 2);
    const auto a = build_manifest(dir.path());
    const auto b = build_manifest(dir.path());
    write_manifest(a, dir / "a.tsv");
    write_manifest(b, dir / "b.tsv");
    EXPECT_EQ(dualmim::testing::read_bytes(dir / "a.tsv"), dualmim::testing::read_bytes(dir / "b.tsv"));
}

TEST(Manifest, LabelsAndRoundTrip) {
    TempDir dir;
    write_organ(dir.path(), "A", 2);
    {
        std::ofstream lab(dir.path() / "A" / "labels.txt");
        lab << "img_000.png\tbenign\nimg_001.png\tmalignant\n";
    }
    const auto m = build_manifest(dir.path());
    EXPECT_EQ(m.organs[0].images[1].label, "malignant");
    write_manifest(m, dir / "m.tsv");
    const auto back = read_manifest(dir / "m.tsv");
    ASSERT_EQ(back.organs.size(), 1u);
    EXPECT_EQ(back.organs[0].images[0].rel_path, "A/img_000.png");
    EXPECT_EQ(back.organs[0].images[0].label, "benign");
    EXPECT_TRUE(std::filesystem::exists(back.absolute(back.organs[0].images[0])));
}

TEST(OrganWeights, InverseSqrtExample) {
    const auto w = organ_weights(counts_manifest({{"A", 100}, {"B", 400}}));
    EXPECT_NEAR(w.weight_of("A"), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w.weight_of("B"), 1.0 / 3.0, 1e-15);
}

TEST(OrganWeights, EqualCountsGiveUniform) {
    const auto w = organ_weights(counts_manifest({{"A", 7}, {"B", 7}, {"C", 7}}));
    for (double v : w.weights) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(OrganWeights, ZeroCountOrganRejected) {
    auto m = counts_manifest({{"A", 3}});
    m.organs.push_back({"B", {}});
    EXPECT_THROW(organ_weights(m), Error);
}

TEST(OrganWeights, SumToOneAndReorderInvariant) {
    const auto a = organ_weights(counts_manifest({{"A", 3}, {"B", 50}, {"C", 1000}}));
    const auto b = organ_weights(counts_manifest({{"C", 1000}, {"A", 3}, {"B", 50}}));
    double sum = 0.0;
    for (double v : a.weights) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (const char* o : {"A", "B", "C"}) EXPECT_NEAR(a.weight_of(o), b.weight_of(o), 1e-15);
}

TEST(OrganWeights, DoublingCountsLeavesWeightsUnchanged) {
    const auto a = organ_weights(counts_manifest({{"A", 3}, {"B", 50}}));
    const auto b = organ_weights(counts_manifest({{"A", 6}, {"B", 100}}));
    EXPECT_NEAR(a.weights[0], b.weights[0], 1e-14);
    EXPECT_NEAR(a.weights[1], b.weights[1], 1e-14);
}

// Twelve-organ table built from the published organ shares of a 2,187,915
// image corpus. Eight shares are published; the remaining four organs split
// the leftover share equally. The oracle evaluates 1/sqrt(N) in long double
// with the normalization done as a separate pass.
TEST(OrganWeights, TwelveOrganTable) {
    const double total = 2187915.0;
    std::vector<std::pair<std::string, double>> shares = {
        {"breast", 91.74},  {"thyroid", 3.29},      {"fetal_body", 0.93}, {"neck", 0.51},
        {"abdomen", 0.43},  {"fetal_head", 0.39},   {"fetal_abdomen", 0.19}, {"muscle", 0.07}};
    double known = 0.0;
    for (const auto& s : shares) known += s.second;
    for (const char* o : {"carotid", "liver", "kidney", "heart"}) shares.push_back({o, (100.0 - known) / 4.0});

    std::vector<std::pair<std::string, std::size_t>> counts;
    for (const auto& [name, pct] : shares) {
        counts.push_back({name, static_cast<std::size_t>(std::llround(total * pct / 100.0))});
    }
    std::vector<std::size_t> n;
    std::vector<long double> raw;
    for (const auto& c : counts) {
        n.push_back(c.second);
        raw.push_back(1.0L / std::sqrt(static_cast<long double>(c.second)));
    }
    long double z = 0.0L;
    for (auto r : raw) z += r;

    const auto w = balanced_weights(n);
    for (std::size_t i = 0; i < counts.size(); ++i) {
        EXPECT_NEAR(w[i], static_cast<double>(raw[i] / z), 1e-9) << counts[i].first;
    }
}

TEST(SampleImage, SingleOrganAlwaysChosen) {
    const auto m = counts_manifest({{"only", 4}});
    const auto w = organ_weights(m);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_image(rng, m, w).organ_index, 0u);
}

TEST(SampleImage, OrganFrequencyWithinBinomialBound) {
    const auto m = counts_manifest({{"A", 100}, {"B", 400}});
    const auto w = organ_weights(m);
    Rng rng(11);
    std::size_t a = 0;
    const std::size_t n = 30000;
    for (std::size_t i = 0; i < n; ++i) a += sample_image(rng, m, w).organ_index == 0;
    EXPECT_TRUE(within_3sigma(a, n, 2.0 / 3.0)) << a;
}

TEST(SampleImage, WithinOrganUniform) {
    const auto m = counts_manifest({{"A", 5}});
    const auto w = organ_weights(m);
    Rng rng(12);
    std::vector<std::size_t> hits(5, 0);
    const std::size_t n = 25000;
    for (std::size_t i = 0; i < n; ++i) ++hits[sample_image(rng, m, w).image_index];
    for (auto h : hits) EXPECT_TRUE(within_3sigma(h, n, 0.2)) << h;
}

TEST(SampleImage, SeedReproducible) {
    const auto m = counts_manifest({{"A", 3}, {"B", 9}, {"C", 27}});
    const auto w = organ_weights(m);
    Rng r1(99), r2(99);
    for (int i = 0; i < 500; ++i) {
        const auto a = sample_image(r1, m, w), b = sample_image(r2, m, w);
        EXPECT_EQ(a.organ_index, b.organ_index);
        EXPECT_EQ(a.image_index, b.image_index);
    }
}

TEST(Augment, DisabledIsIdentityApartFromBridge) {
    const FloatField f = random_field(16, 16, 1);
    Rng rng(0);
    EXPECT_EQ(augment(f, rng, AugmentConfig::disabled(16, 16)), f);

    // Centre crop at eval time.
    const FloatField c = augment(f, rng, AugmentConfig::disabled(8, 8));
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(c.at(y, x), f.at(y + 4, x + 4));

    auto cfg = AugmentConfig::disabled(8, 8);
    cfg.bridge = ResolutionBridge::resize;
    EXPECT_EQ(augment(f, rng, cfg), resize_bilinear(f, 8, 8));
}

TEST(Augment, BrightnessClamps) {
    FloatField f(8, 8);
    std::fill(f.data.begin(), f.data.end(), 0.95);
    auto cfg = AugmentConfig::disabled(8, 8);
    cfg.brightness_p = 1.0;
    cfg.brightness_min = cfg.brightness_max = 0.1;
    Rng rng(5);
    const FloatField out = augment(f, rng, cfg);
    for (double v : out.data) EXPECT_EQ(v, 1.0);
}

TEST(Augment, CropTargetTooLargeIsError) {
    const FloatField f = random_field(8, 8, 2);
    Rng rng(0);
    EXPECT_THROW(augment(f, rng, AugmentConfig::disabled(9, 9)), Error);
}

TEST(Augment, DeterministicAndInRange) {
    const FloatField f = random_field(40, 40, 3);
    AugmentConfig cfg;
    cfg.out_h = cfg.out_w = 32;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng a(seed), b(seed);
        const FloatField x = augment(f, a, cfg), y = augment(f, b, cfg);
        EXPECT_EQ(x, y);
        ASSERT_EQ(x.height, 32u);
        ASSERT_EQ(x.width, 32u);
        for (double v : x.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Augment, AllTransformsApplied) {
    AugmentConfig cfg;
    cfg.out_h = cfg.out_w = 16;
    cfg.rotate_p = cfg.scale_p = cfg.crop_p = cfg.brightness_p = cfg.contrast_p = cfg.blur_p = 1.0;
    const FloatField f = random_field(20, 20, 4);
    Rng rng(8);
    const FloatField out = augment(f, rng, cfg);
    EXPECT_EQ(out.height, 16u);
}

TEST(Augment, InvalidProbabilityRejected) {
    AugmentConfig cfg;
    cfg.blur_p = 1.5;
    EXPECT_THROW(cfg.validate(), Error);
}

// Kernel weights at distance 1 are exp(-1/(2 sigma^2)); at sigma = 0.05 that
// is ~1e-87, so the blurred field equals the input to rounding.
TEST(GaussianBlur, SmallSigmaIsDelta) {
    const FloatField f = random_field(12, 12, 5);
    const FloatField g = gaussian_blur(f, 0.05);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g.data[i], f.data[i], 1e-6);
}

TEST(GaussianBlur, PreservesConstantAndMatchesDirectSum) {
    FloatField c(9, 9);
    std::fill(c.data.begin(), c.data.end(), 0.3);
    for (double v : gaussian_blur(c, 1.2).data) EXPECT_NEAR(v, 0.3, 1e-14);

    // Interior pixel against a direct 2D Gaussian-weighted sum.
    const FloatField f = random_field(15, 15, 6);
    const double sigma = 0.8;
    const int r = 3;
    double num = 0.0, den = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double wgt = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            num += wgt * f.at(7 + dy, 7 + dx);
            den += wgt;
        }
    }
    EXPECT_NEAR(gaussian_blur(f, sigma).at(7, 7), num / den, 1e-12);
}

TEST(Geometry, ZeroRotationAndUnitZoomAreIdentity) {
    const FloatField f = random_field(10, 10, 7);
    const FloatField r = rotate_bilinear(f, 0.0), z = zoom_bilinear(f, 1.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        EXPECT_NEAR(r.data[i], f.data[i], 1e-12);
        EXPECT_NEAR(z.data[i], f.data[i], 1e-12);
    }
}

TEST(Geometry, QuarterTurnPermutesPixels) {
    const FloatField f = random_field(6, 6, 8);
    const FloatField r = rotate_bilinear(f, 90.0);
    std::multiset<long long> a, b;
    for (double v : f.data) a.insert(std::llround(v * 1e9));
    for (double v : r.data) b.insert(std::llround(v * 1e9));
    EXPECT_EQ(a, b);
}

TEST(FractionSubset, SizeNestingAndDeterminism) {
    const std::size_t n = 37;
    std::vector<std::vector<std::size_t>> subs;
    for (double f : {0.2, 0.4, 0.6, 0.8, 1.0}) {
        auto s = fraction_subset(n, f, 2024);
        EXPECT_EQ(s.size(), static_cast<std::size_t>(std::ceil(f * n - 1e-9)));
        EXPECT_EQ(s, fraction_subset(n, f, 2024));
        subs.push_back(std::move(s));
    }
    for (std::size_t i = 0; i + 1 < subs.size(); ++i) {
        EXPECT_TRUE(std::equal(subs[i].begin(), subs[i].end(), subs[i + 1].begin()));
    }
    auto all = subs.back();
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(fraction_subset(10, 0.2, 1).size(), 2u);
    EXPECT_THROW(fraction_subset(10, 0.0, 1), Error);
    EXPECT_THROW(fraction_subset(10, 1.5, 1), Error);
}
