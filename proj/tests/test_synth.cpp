#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "dualmim/error.hpp"
#include "dualmim/synth.hpp"
#include "test_support.hpp"

using namespace dualmim;
using dualmim::testing::read_bytes;
using dualmim::testing::TempDir;

namespace {

SynthSpec small_spec(std::uint64_t seed = 1) {
    SynthSpec s = SynthSpec::defaults();
    s.seed = seed;
    s.image_size = 32;
    for (auto& o : s.organs) {
        o.count = 3;
        o.band_lo /= 72.0 / 32.0;
        o.band_hi /= 72.0 / 32.0;
    }
    return s;
}

}  // namespace

TEST(Synth, DefaultsDescribeThreeOrgans) {
    const SynthSpec s = SynthSpec::defaults();
    ASSERT_EQ(s.organs.size(), 3u);
    EXPECT_EQ(s.organs[0].count, 400u);
    EXPECT_EQ(s.organs[1].count, 100u);
    EXPECT_EQ(s.organs[2].count, 25u);
    EXPECT_NO_THROW(s.validate());
    // bands are disjoint and ordered
    EXPECT_LT(s.organs[0].band_hi, s.organs[1].band_lo);
    EXPECT_LT(s.organs[1].band_hi, s.organs[2].band_lo);
}

TEST(Synth, GenerateWritesManifestAndLabels) {
    TempDir dir;
    const SynthSpec spec = small_spec();
    const DatasetManifest m = generate(spec, dir.path());
    ASSERT_EQ(m.organs.size(), 3u);
    EXPECT_EQ(m.total(), 9u);
    for (const auto& o : m.organs) {
        EXPECT_TRUE(std::filesystem::exists(dir.path() / o.name / "labels.txt"));
        for (const auto& e : o.images) {
            EXPECT_EQ(e.label, o.name);
            const GrayImage img = load_png(m.absolute(e));
            EXPECT_EQ(img.height, 32u);
            EXPECT_EQ(img.width, 32u);
        }
    }
    const DatasetManifest back = read_manifest(dir.path() / "manifest.tsv");
    EXPECT_EQ(back.total(), 9u);
    const DatasetManifest scanned = build_manifest(dir.path());
    EXPECT_EQ(scanned.counts(), m.counts());
}

TEST(Synth, SameSeedSameBytes) {
    TempDir a, b, c;
    generate(small_spec(5), a.path());
    generate(small_spec(5), b.path());
    generate(small_spec(6), c.path());
    const std::string rel = "ring/ring_0001.png";
    EXPECT_EQ(read_bytes(a / rel), read_bytes(b / rel));
    EXPECT_EQ(read_bytes(a / "manifest.tsv"), read_bytes(b / "manifest.tsv"));
    EXPECT_NE(read_bytes(a / rel), read_bytes(c / rel));
}

// Each image has its own seed, so growing one organ leaves the rest alone.
TEST(Synth, ImagesIndependentOfCounts) {
    TempDir a, b;
    SynthSpec s = small_spec(2);
    generate(s, a.path());
    s.organs[0].count = 5;
    generate(s, b.path());
    for (const char* rel : {"ellipse/ellipse_0002.png", "stripes/stripes_0000.png"}) {
        EXPECT_EQ(read_bytes(a / rel), read_bytes(b / rel)) << rel;
    }
}

TEST(Synth, RenderedValuesInUnitRange) {
    Rng rng(3);
    for (const auto& o : SynthSpec::defaults().organs) {
        const FloatField f = render_organ(o, 48, rng);
        for (double v : f.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

// Every organ's texture band carries clearly more energy per bin than the rest.
TEST(Synth, TextureBandStandsOut) {
    const SynthSpec spec = SynthSpec::defaults();
    for (const auto& o : spec.organs) {
        Rng rng(17);
        for (int i = 0; i < 6; ++i) {
            const FloatField f = render_organ(o, spec.image_size, rng);
            EXPECT_GT(band_energy_ratio(f, o.band_lo, o.band_hi), 2.0) << o.name << " image " << i;
        }
    }
}

TEST(Synth, ValidationErrors) {
    auto expect_invalid = [](auto mutate) {
        SynthSpec s = small_spec();
        mutate(s);
        try {
            s.validate();
            ADD_FAILURE() << "accepted";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::invalid_config);
        }
    };
    expect_invalid([](SynthSpec& s) { s.organs.clear(); });
    expect_invalid([](SynthSpec& s) { s.image_size = 4; });
    expect_invalid([](SynthSpec& s) { s.organs[0].name = "a/b"; });
    expect_invalid([](SynthSpec& s) { s.organs[0].count = 0; });
    expect_invalid([](SynthSpec& s) { s.organs[0].band_hi = 100.0; });
    expect_invalid([](SynthSpec& s) { s.organs[0].band_lo = s.organs[0].band_hi; });
    expect_invalid([](SynthSpec& s) { s.organs[0].size_max = 0.7; });
    expect_invalid([](SynthSpec& s) { s.organs[0].speckle = 1.5; });
    expect_invalid([](SynthSpec& s) { s.organs[0].texture = -1.0; });
}

// A single plane wave at radius 3: all off-DC energy sits at (0, +-3).
TEST(BandEnergy, PlaneWaveOracle) {
    const std::size_t n = 16;
    FloatField f(n, n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) f.at(y, x) = 0.5 + 0.3 * std::cos(2.0 * std::numbers::pi * 3.0 * x / n);
    EXPECT_GT(band_energy_ratio(f, 2.5, 3.5), 1e12);
    EXPECT_LT(band_energy_ratio(f, 4.0, 8.0), 1e-12);
    // energy check with the direct transform: the two peaks hold all AC energy
    const auto F = dualmim::testing::naive_dft2(f);
    EXPECT_NEAR(std::abs(F[3]), 0.3 * n * n / 2.0, 1e-9);
    EXPECT_NEAR(std::abs(F[n - 3]), 0.3 * n * n / 2.0, 1e-9);
}

TEST(BandEnergy, WhiteNoiseNearOne) {
    const FloatField f = dualmim::testing::random_field(64, 64, 4);
    const double r = band_energy_ratio(f, 5.0, 20.0);
    EXPECT_GT(r, 0.8);
    EXPECT_LT(r, 1.25);
}
