#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dualmim/error.hpp"
#include "dualmim/gradcheck.hpp"
#include "dualmim/model.hpp"
#include "test_support.hpp"

using namespace dualmim;
using dualmim::testing::random_field;

namespace {

using Mat = std::vector<std::vector<double>>;

ModelConfig toy(std::size_t classes = 0) {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.depth = 1;
    c.decoder_depth = 1;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    c.classes = classes;
    return c;
}

void jitter(ModelState& s, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (auto& p : s.params)
        for (double& v : p.value.data) v += scale * rng.normal();
}

// ---- straight-line reference forward pass --------------------------------

struct Ref {
    const ModelState& s;

    const std::vector<double>& w(const std::string& n) const { return s.param(n).value.data; }

    Mat lin(const Mat& x, const std::string& name) const {
        const auto& W = w(name + ".weight");
        const auto& b = w(name + ".bias");
        const std::size_t out = b.size(), in = x[0].size();
        Mat y(x.size(), std::vector<double>(out));
        for (std::size_t n = 0; n < x.size(); ++n)
            for (std::size_t o = 0; o < out; ++o) {
                double a = b[o];
                for (std::size_t i = 0; i < in; ++i) a += W[o * in + i] * x[n][i];
                y[n][o] = a;
            }
        return y;
    }

    Mat ln(const Mat& x, const std::string& name) const {
        if (!s.config.layer_norm) return x;
        const auto& g = w(name + ".gamma");
        const auto& b = w(name + ".beta");
        Mat y = x;
        for (auto& row : y) {
            double m = 0, v = 0;
            for (double e : row) m += e;
            m /= row.size();
            for (double e : row) v += (e - m) * (e - m);
            v /= row.size();
            for (std::size_t i = 0; i < row.size(); ++i) row[i] = g[i] * (row[i] - m) / std::sqrt(v + 1e-6) + b[i];
        }
        return y;
    }

    Mat attention(const Mat& x, const std::string& p) const {
        const std::size_t d = s.config.embed_dim, H = s.config.heads, dh = d / H, n = x.size();
        const Mat qkv = lin(x, p + ".attn.qkv");
        Mat ctx(n, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> sc(n);
                double z = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    double a = 0;
                    for (std::size_t t = 0; t < dh; ++t) a += qkv[i][h * dh + t] * qkv[j][d + h * dh + t];
                    sc[j] = std::exp(a / std::sqrt(double(dh)));
                    z += sc[j];
                }
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t t = 0; t < dh; ++t) ctx[i][h * dh + t] += sc[j] / z * qkv[j][2 * d + h * dh + t];
            }
        }
        return lin(ctx, p + ".attn.proj");
    }

    Mat block(Mat x, const std::string& p) const {
        const Mat a = attention(ln(x, p + ".ln1"), p);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += a[i][j];
        Mat h = lin(ln(x, p + ".ln2"), p + ".mlp.fc1");
        for (auto& r : h)
            for (double& v : r) v = 0.5 * v * (1 + std::erf(v / std::sqrt(2.0)));
        const Mat m = lin(h, p + ".mlp.fc2");
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += m[i][j];
        return x;
    }

    Mat encode(const FloatField& img) const {
        const std::size_t P = s.config.patch_size, g = s.config.grid();
        Mat patches;
        for (std::size_t gy = 0; gy < g; ++gy)
            for (std::size_t gx = 0; gx < g; ++gx) {
                std::vector<double> r;
                for (std::size_t y = 0; y < P; ++y)
                    for (std::size_t x = 0; x < P; ++x) r.push_back(img.at(gy * P + y, gx * P + x));
                patches.push_back(r);
            }
        Mat x = lin(patches, "embed.proj");
        const auto& pos = w("embed.pos");
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += pos[i * x[i].size() + j];
        for (std::size_t b = 1; b <= s.config.depth; ++b) x = block(x, "enc." + std::to_string(b));
        return ln(x, "enc.norm");
    }

    FloatField decode(Mat x) const {
        for (std::size_t b = 1; b <= s.config.decoder_depth; ++b) x = block(x, "dec." + std::to_string(b));
        const Mat out = lin(ln(x, "dec.norm"), "head");
        const std::size_t P = s.config.patch_size, g = s.config.grid();
        FloatField f(s.config.image_size, s.config.image_size);
        for (std::size_t gy = 0; gy < g; ++gy)
            for (std::size_t gx = 0; gx < g; ++gx)
                for (std::size_t y = 0; y < P; ++y)
                    for (std::size_t x2 = 0; x2 < P; ++x2) f.at(gy * P + y, gx * P + x2) = out[gy * g + gx][y * P + x2];
        return f;
    }
};

}  // namespace

TEST(ModelInit, SameSeedBitIdentical) {
    Rng a(5), b(5);
    const ModelState x = init_model(ModelConfig{}, a), y = init_model(ModelConfig{}, b);
    ASSERT_EQ(x.params.size(), y.params.size());
    for (std::size_t i = 0; i < x.params.size(); ++i) EXPECT_EQ(x.params[i].value, y.params[i].value);
}

TEST(ModelInit, ParameterCountFormula) {
    ModelConfig c{224, 16, 64, 2, 1, 4, 4.0, 0, true};
    Rng rng(0);
    const ModelState s = init_model(c, rng);
    const std::size_t D = 64, P = 16 * 16, N = 14 * 14, Hd = 256;
    const std::size_t embed = D * P + D + N * D;
    const std::size_t block = 2 * (2 * D) + (3 * D * D + 3 * D) + (D * D + D) + (Hd * D + Hd) + (D * Hd + D);
    const std::size_t norms = 2 * (2 * D);
    const std::size_t head = P * D + P;
    EXPECT_EQ(s.parameter_count(), embed + 3 * block + norms + head);
    EXPECT_EQ(s.parameter_count(), 195840u);
}

TEST(ModelInit, InitStatistics) {
    Rng rng(1);
    const ModelState s = init_model(ModelConfig{}, rng);
    for (const auto& p : s.params) {
        const bool is_bias = p.name.ends_with("bias") || p.name.ends_with("beta");
        for (double v : p.value.data) {
            if (is_bias) EXPECT_EQ(v, 0.0) << p.name;
            else if (p.name.ends_with("gamma")) EXPECT_EQ(v, 1.0);
            else EXPECT_LE(std::abs(v), 0.04) << p.name;
        }
    }
    const auto& w = s.param("enc.1.mlp.fc1.weight").value.data;
    double m = 0, v = 0;
    for (double x : w) m += x;
    m /= w.size();
    for (double x : w) v += (x - m) * (x - m);
    // std of a normal truncated at 2 sigma is 0.02 * 0.8796
    EXPECT_NEAR(std::sqrt(v / w.size()), 0.02 * 0.8796, 0.001);
}

TEST(ModelInit, InvalidConfigs) {
    Rng rng(0);
    ModelConfig c;
    c.heads = 3;
    EXPECT_THROW(init_model(c, rng), Error);
    c = ModelConfig{};
    c.image_size = 60;
    EXPECT_THROW(init_model(c, rng), Error);
    c = ModelConfig{};
    c.depth = 0;
    EXPECT_THROW(init_model(c, rng), Error);
}

TEST(ModelInit, LayerIndicesContiguous) {
    Rng rng(0);
    const ModelState s = init_model(toy(3), rng);
    std::vector<int> seen(s.max_layer() + 1, 0);
    for (const auto& p : s.params) seen[p.layer] = 1;
    for (int v : seen) EXPECT_EQ(v, 1);
    EXPECT_EQ(s.param("embed.pos").layer, 0);
    EXPECT_EQ(s.param("enc.1.attn.qkv.weight").layer, 1);
    EXPECT_EQ(s.param("dec.1.attn.qkv.weight").layer, 2);
    EXPECT_EQ(s.param("head.weight").layer, 3);
    EXPECT_EQ(s.param("cls.weight").layer, 3);
}

TEST(Encode, ZeroInputNormFreeGivesZero) {
    ModelConfig c = toy();
    c.layer_norm = false;
    Rng rng(2);
    ModelState s = init_model(c, rng);
    std::fill(s.param("embed.pos").value.data.begin(), s.param("embed.pos").value.data.end(), 0.0);
    const std::vector<FloatField> batch{FloatField(8, 8)};
    const auto feats = encode(s, batch);
    for (double v : feats[0].tokens.data) EXPECT_EQ(v, 0.0);
}

TEST(Encode, BatchPermutationPermutesOutputs) {
    Rng rng(3);
    ModelState s = init_model(toy(), rng);
    jitter(s, 3);
    const std::vector<FloatField> a{random_field(8, 8, 1), random_field(8, 8, 2), random_field(8, 8, 3)};
    const std::vector<FloatField> b{a[2], a[0], a[1]};
    const auto fa = encode(s, a), fb = encode(s, b);
    EXPECT_EQ(fa[0].tokens.data, fb[1].tokens.data);
    EXPECT_EQ(fa[1].tokens.data, fb[2].tokens.data);
    EXPECT_EQ(fa[2].tokens.data, fb[0].tokens.data);
}

TEST(Encode, ShapeMismatch) {
    Rng rng(0);
    const ModelState s = init_model(toy(), rng);
    const std::vector<FloatField> bad{FloatField(8, 4)};
    EXPECT_THROW(encode(s, bad), Error);
}

TEST(Encode, SingleHeadAttentionMatchesReference) {
    ModelConfig c;
    c.image_size = 4;
    c.patch_size = 2;
    c.embed_dim = 4;
    c.depth = 1;
    c.decoder_depth = 1;
    c.heads = 1;
    c.mlp_ratio = 2.0;
    Rng rng(4);
    ModelState s = init_model(c, rng);
    jitter(s, 4, 0.5);
    const FloatField img = random_field(4, 4, 9);
    const Mat ref = Ref{s}.encode(img);
    const auto got = encode(s, std::vector<FloatField>{img});
    ASSERT_EQ(got[0].tokens.rows, 4u);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got[0].tokens.at(i, j), ref[i][j], 1e-9);
}

TEST(Decode, EndToEndMatchesReference) {
    Rng rng(5);
    ModelState s = init_model(toy(), rng);
    jitter(s, 5);
    const FloatField img = random_field(8, 8, 10);
    const Ref ref{s};
    const FloatField want = ref.decode(ref.encode(img));
    const auto fwd = forward_mim(s, std::vector<FloatField>{img});
    ASSERT_EQ(fwd.reconstructions[0].height, 8u);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(fwd.reconstructions[0].data[i], want.data[i], 1e-9);
    // decode(encode(x)) is the same computation
    const auto feats = encode(s, std::vector<FloatField>{img});
    EXPECT_EQ(decode(s, feats)[0], fwd.reconstructions[0]);
    EXPECT_EQ(forward_mim(s, std::vector<FloatField>{img}).reconstructions[0], fwd.reconstructions[0]);
}

TEST(Backward, FiniteDifferencesOverEveryParameter) {
    GradcheckConfig cfg;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        cfg.seed = seed;
        const GradcheckResult r = gradcheck_model(cfg);
        Rng rng(0);
        EXPECT_EQ(r.checked, init_model(cfg.model, rng).parameter_count());
        EXPECT_EQ(r.skipped_kinks, 0u);
        EXPECT_LT(r.worst.rel_error, 1e-4) << r.worst.name << "[" << r.worst.index << "]";
    }
}

TEST(Backward, FiniteDifferencesWithoutLayerNorm) {
    GradcheckConfig cfg;
    cfg.model.layer_norm = false;
    cfg.seed = 7;
    const GradcheckResult r = gradcheck_model(cfg);
    EXPECT_LT(r.worst.rel_error, 1e-4) << r.worst.name;
}

TEST(Backward, CorruptedGradientIsCaught) {
    GradcheckConfig cfg;
    const GradcheckResult r = gradcheck_model(cfg, [](Gradients& g) { g.grads[5].data[0] *= 1.01; });
    EXPECT_GT(r.worst.rel_error, 1e-3);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
    Rng rng(6);
    ModelState s = init_model(toy(), rng);
    jitter(s, 6);
    FloatField img = random_field(8, 8, 11);
    const FloatField up = random_field(8, 8, 12);
    auto objective = [&](const FloatField& x) {
        const FloatField r = forward_mim(s, std::vector<FloatField>{x}).reconstructions[0];
        double acc = 0;
        for (std::size_t i = 0; i < r.size(); ++i) acc += up.data[i] * r.data[i];
        return acc;
    };
    const auto fwd = forward_mim(s, std::vector<FloatField>{img});
    const auto back = backward_mim(s, fwd.trace, std::vector<FloatField>{up});
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double orig = img.data[i], h = 1e-5;
        img.data[i] = orig + h;
        const double a = objective(img);
        img.data[i] = orig - h;
        const double b = objective(img);
        img.data[i] = orig;
        const double num = (a - b) / (2 * h);
        EXPECT_LT(relative_error(back.inputs[0].data[i], num, 1e-6), 1e-5);
    }
}

TEST(Backward, ClassifierGradientsMatchFiniteDifferences) {
    Rng rng(7);
    ModelState s = init_model(toy(3), rng);
    jitter(s, 7);
    const std::vector<FloatField> batch{random_field(8, 8, 13), random_field(8, 8, 14)};
    const std::vector<std::vector<double>> up{{0.3, -1.0, 0.7}, {-0.2, 0.5, 0.1}};
    auto objective = [&]() {
        const auto sc = classify(s, batch);
        double acc = 0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t k = 0; k < 3; ++k) acc += up[b][k] * sc[b][k];
        return acc;
    };
    const auto fwd = forward_classify(s, batch);
    const auto back = backward_classify(s, fwd.trace, up);
    // The objective is linear in cls.*; check the rest with a fourth-order stencil.
    double worst = 0;
    for (std::size_t pi = 0; pi < s.params.size(); ++pi) {
        auto& p = s.params[pi];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double orig = p.value.data[k], h = 1e-3;
            double f[4];
            const double off[4] = {h, -h, 2 * h, -2 * h};
            for (int j = 0; j < 4; ++j) {
                p.value.data[k] = orig + off[j];
                f[j] = objective();
            }
            p.value.data[k] = orig;
            const double num = (8 * (f[0] - f[1]) - (f[2] - f[3])) / (12 * h);
            worst = std::max(worst, relative_error(back.params.grads[pi].data[k], num, 1e-6));
        }
    }
    EXPECT_LT(worst, 1e-4);
    // decoder weights do not take part in classification
    for (double v : back.params.grads[s.index_of("dec.1.mlp.fc1.weight")].data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, FrozenParametersGetZeroGradients) {
    Rng rng(8);
    ModelState s = init_model(toy(2), rng);
    jitter(s, 8);
    s.param("enc.1.mlp.fc2.weight").frozen = true;
    const std::vector<FloatField> batch{random_field(8, 8, 15)};
    const auto fwd = forward_mim(s, batch);
    const auto back = backward_mim(s, fwd.trace, std::vector<FloatField>{random_field(8, 8, 16)});
    for (double v : back.params.grads[s.index_of("enc.1.mlp.fc2.weight")].data) EXPECT_EQ(v, 0.0);
    double other = 0;
    for (double v : back.params.grads[s.index_of("enc.1.mlp.fc1.weight")].data) other += std::abs(v);
    EXPECT_GT(other, 0.0);
}

TEST(Backward, StaleTraceRejected) {
    Rng rng(9);
    ModelState s = init_model(toy(), rng);
    const std::vector<FloatField> batch{random_field(8, 8, 17)};
    const auto fwd = forward_mim(s, batch);
    ++s.version;
    try {
        backward_mim(s, fwd.trace, batch);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::stale_cache);
    }
    const ModelState copy = s;
    const auto fwd2 = forward_mim(s, batch);
    EXPECT_THROW(backward_mim(copy, fwd2.trace, batch), Error);
}

// With every block weight zeroed, no position term and no normalization,
// the network is affine: rec = head(embed(patch)). The input gradient of
// sum(rec) is then independent of the input and identical for each patch.
TEST(Backward, AffineSubmodelInputGradientIsShiftInvariant) {
    ModelConfig c = toy();
    c.layer_norm = false;
    Rng rng(10);
    ModelState s = init_model(c, rng);
    jitter(s, 10);
    for (auto& p : s.params) {
        if (p.name.starts_with("enc.") || p.name.starts_with("dec.") || p.name == "embed.pos") {
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
        }
    }
    const FloatField ones = [] {
        FloatField f(8, 8);
        std::fill(f.data.begin(), f.data.end(), 1.0);
        return f;
    }();
    FloatField x = random_field(8, 8, 18), shifted = x;
    for (double& v : shifted.data) v += 0.25;
    auto grad_at = [&](const FloatField& in) {
        const auto fwd = forward_mim(s, std::vector<FloatField>{in});
        return backward_mim(s, fwd.trace, std::vector<FloatField>{ones}).inputs[0];
    };
    const FloatField g1 = grad_at(x), g2 = grad_at(shifted);
    // closed form per patch pixel i: sum_o sum_d Whead[o,d] Wembed[d,i]
    const auto& we = s.param("embed.proj.weight").value.data;
    const auto& wh = s.param("head.weight").value.data;
    for (std::size_t i = 0; i < 16; ++i) {
        double want = 0;
        for (std::size_t o = 0; o < 16; ++o)
            for (std::size_t d = 0; d < 8; ++d) want += wh[o * 8 + d] * we[d * 16 + i];
        for (std::size_t gy = 0; gy < 2; ++gy)
            for (std::size_t gx = 0; gx < 2; ++gx) {
                const std::size_t y = gy * 4 + i / 4, xx = gx * 4 + i % 4;
                EXPECT_NEAR(g1.at(y, xx), want, 1e-12);
                EXPECT_NEAR(g2.at(y, xx), want, 1e-12);
            }
    }
}

TEST(Features, ExtractEqualsEncodeAndBlocksEncoderGradients) {
    Rng rng(11);
    ModelState s = init_model(toy(), rng);
    jitter(s, 11);
    const std::vector<FloatField> batch{random_field(8, 8, 19)};
    const auto fe = extract_features(s, batch);
    EXPECT_EQ(fe.features[0].tokens.data, encode(s, batch)[0].tokens.data);
    std::vector<FeatureMap> up = fe.features;
    const auto back = backward_features(s, fe.trace, up);
    EXPECT_TRUE(back.inputs.empty());
    for (const auto& g : back.params.grads)
        for (double v : g.data) EXPECT_EQ(v, 0.0);
}

TEST(Classify, ShapesZeroHeadAndMissingHead) {
    Rng rng(12);
    ModelState s = init_model(toy(4), rng);
    jitter(s, 12);
    const std::vector<FloatField> batch{random_field(8, 8, 20)};
    EXPECT_EQ(classify(s, batch)[0].size(), 4u);
    for (auto* n : {"cls.weight", "cls.bias"}) {
        auto& d = s.param(n).value.data;
        std::fill(d.begin(), d.end(), 0.0);
    }
    const auto scores = classify(s, batch);
    for (double v : scores[0]) EXPECT_EQ(v, 0.0);

    Rng rng2(0);
    const ModelState no_head = init_model(toy(), rng2);
    EXPECT_THROW(classify(no_head, batch), Error);
}

TEST(Classify, FrozenEncoderYieldsHeadOnlyGradients) {
    Rng rng(13);
    ModelState s = init_model(toy(2), rng);
    jitter(s, 13);
    const std::vector<FloatField> batch{random_field(8, 8, 21)};
    const auto fwd = forward_classify(s, batch, true);
    const auto back = backward_classify(s, fwd.trace, std::vector<std::vector<double>>{{1.0, -1.0}});
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        double sum = 0;
        for (double v : back.params.grads[i].data) sum += std::abs(v);
        if (s.params[i].name.starts_with("cls.")) EXPECT_GT(sum, 0.0);
        else EXPECT_EQ(sum, 0.0) << s.params[i].name;
    }
}

TEST(LayerwiseLr, DecayValues) {
    Rng rng(0);
    const ModelState s = init_model(toy(), rng);
    for (double m : layerwise_lr_multipliers(s, 1.0)) EXPECT_EQ(m, 1.0);
    const auto m = layerwise_lr_multipliers(s, 0.75);
    EXPECT_DOUBLE_EQ(m[s.index_of("enc.1.mlp.fc1.weight")], 0.5625);
    EXPECT_DOUBLE_EQ(m[s.index_of("dec.1.mlp.fc1.weight")], 0.75);
    EXPECT_DOUBLE_EQ(m[s.index_of("head.weight")], 1.0);
    EXPECT_DOUBLE_EQ(m[s.index_of("embed.proj.weight")], 0.421875);
    EXPECT_THROW(layerwise_lr_multipliers(s, 0.0), Error);
    EXPECT_THROW(layerwise_lr_multipliers(s, 1.5), Error);
}

TEST(LayerwiseLr, MonotoneAndShallowestIsSmallest) {
    Rng rng(0);
    ModelConfig c;
    c.depth = 4;
    c.decoder_depth = 2;
    const ModelState s = init_model(c, rng);
    for (double decay : {0.3, 0.75, 0.99}) {
        const auto m = layerwise_lr_multipliers(s, decay);
        for (std::size_t i = 0; i < s.params.size(); ++i)
            for (std::size_t j = 0; j < s.params.size(); ++j)
                if (s.params[i].layer < s.params[j].layer) EXPECT_LE(m[i], m[j]);
        const auto argmin = std::min_element(m.begin(), m.end()) - m.begin();
        EXPECT_EQ(s.params[argmin].layer, 0);
    }
}

TEST(Patches, RoundTrip) {
    const FloatField f = random_field(12, 12, 22);
    EXPECT_EQ(patches_to_image(image_to_patches(f, 4), 12, 4), f);
    const Matrix p = image_to_patches(f, 4);
    EXPECT_EQ(p.at(4, 5), f.at(4 + 1, 4 + 1));  // token (1,1), pixel (1,1)
}
