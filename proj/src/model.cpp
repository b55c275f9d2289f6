#include "dualmim/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dualmim/error.hpp"

namespace dualmim {

namespace {

constexpr double kLayerNormEps = 1e-6;

}  // namespace

std::size_t ModelConfig::hidden_dim() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
}

void ModelConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || embed_dim == 0 || depth == 0 ||
        decoder_depth == 0 || heads == 0) {
        throw Error(ErrorCode::invalid_config, "model sizes and counts must be >= 1");
    }
    if (image_size % patch_size != 0) {
        throw Error(ErrorCode::invalid_config, "image size must be divisible by patch size");
    }
    if (embed_dim % heads != 0) {
        throw Error(ErrorCode::invalid_config, "embed dim must be divisible by head count");
    }
    if (!(mlp_ratio > 0.0) || hidden_dim() == 0) {
        throw Error(ErrorCode::invalid_config, "mlp ratio must give a hidden width >= 1");
    }
    if (classes == 1) throw Error(ErrorCode::invalid_config, "classification head needs >= 2 classes");
}

std::size_t ModelState::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) return i;
    }
    throw Error(ErrorCode::invalid_argument, "no parameter named " + name);
}

bool ModelState::has(const std::string& name) const {
    return std::any_of(params.begin(), params.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ModelState::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

int ModelState::max_layer() const {
    int m = 0;
    for (const auto& p : params) m = std::max(m, p.layer);
    return m;
}

void ModelState::set_encoder_frozen(bool frozen) {
    for (auto& p : params) {
        if (p.encoder) p.frozen = frozen;
    }
}

bool ModelState::all_finite() const {
    for (const auto& p : params) {
        for (double v : p.value.data) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

Gradients Gradients::zeros_like(const ModelState& state) {
    Gradients g;
    g.grads.reserve(state.params.size());
    for (const auto& p : state.params) g.grads.emplace_back(p.value.shape);
    return g;
}

void Gradients::add(const Gradients& other) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i].data[j] += other.grads[i].data[j];
    }
}

namespace {

double truncated_normal(Rng& rng, double std) {
    double z;
    do {
        z = rng.normal();
    } while (std::abs(z) > 2.0);
    return z * std;
}

void add_param(ModelState& s, Rng& rng, std::string name, std::vector<std::size_t> shape, int layer,
               bool encoder, char init) {
    Parameter p{std::move(name), Tensor(std::move(shape)), layer, false, encoder};
    if (init == 'n') {
        for (double& v : p.value.data) v = truncated_normal(rng, 0.02);
    } else if (init == '1') {
        std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
    }
    s.params.push_back(std::move(p));
}

void add_block(ModelState& s, Rng& rng, const std::string& prefix, int layer, bool encoder) {
    const ModelConfig& c = s.config;
    const std::size_t d = c.embed_dim, hd = c.hidden_dim();
    if (c.layer_norm) {
        add_param(s, rng, prefix + ".ln1.gamma", {d}, layer, encoder, '1');
        add_param(s, rng, prefix + ".ln1.beta", {d}, layer, encoder, '0');
    }
    add_param(s, rng, prefix + ".attn.qkv.weight", {3 * d, d}, layer, encoder, 'n');
    add_param(s, rng, prefix + ".attn.qkv.bias", {3 * d}, layer, encoder, '0');
    add_param(s, rng, prefix + ".attn.proj.weight", {d, d}, layer, encoder, 'n');
    add_param(s, rng, prefix + ".attn.proj.bias", {d}, layer, encoder, '0');
    if (c.layer_norm) {
        add_param(s, rng, prefix + ".ln2.gamma", {d}, layer, encoder, '1');
        add_param(s, rng, prefix + ".ln2.beta", {d}, layer, encoder, '0');
    }
    add_param(s, rng, prefix + ".mlp.fc1.weight", {hd, d}, layer, encoder, 'n');
    add_param(s, rng, prefix + ".mlp.fc1.bias", {hd}, layer, encoder, '0');
    add_param(s, rng, prefix + ".mlp.fc2.weight", {d, hd}, layer, encoder, 'n');
    add_param(s, rng, prefix + ".mlp.fc2.bias", {d}, layer, encoder, '0');
}

}  // namespace

ModelState init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelState s;
    s.config = cfg;
    const std::size_t d = cfg.embed_dim;
    add_param(s, rng, "embed.proj.weight", {d, cfg.patch_dim()}, 0, true, 'n');
    add_param(s, rng, "embed.proj.bias", {d}, 0, true, '0');
    add_param(s, rng, "embed.pos", {cfg.tokens(), d}, 0, true, 'n');
    for (std::size_t i = 1; i <= cfg.depth; ++i) {
        add_block(s, rng, "enc." + std::to_string(i), static_cast<int>(i), true);
    }
    if (cfg.layer_norm) {
        add_param(s, rng, "enc.norm.gamma", {d}, static_cast<int>(cfg.depth), true, '1');
        add_param(s, rng, "enc.norm.beta", {d}, static_cast<int>(cfg.depth), true, '0');
    }
    for (std::size_t j = 1; j <= cfg.decoder_depth; ++j) {
        add_block(s, rng, "dec." + std::to_string(j), static_cast<int>(cfg.depth + j), false);
    }
    const int head = cfg.head_layer();
    if (cfg.layer_norm) {
        add_param(s, rng, "dec.norm.gamma", {d}, head, false, '1');
        add_param(s, rng, "dec.norm.beta", {d}, head, false, '0');
    }
    add_param(s, rng, "head.weight", {cfg.patch_dim(), d}, head, false, 'n');
    add_param(s, rng, "head.bias", {cfg.patch_dim()}, head, false, '0');
    if (cfg.classes >= 2) {
        add_param(s, rng, "cls.weight", {cfg.classes, d}, head, false, 'n');
        add_param(s, rng, "cls.bias", {cfg.classes}, head, false, '0');
    }
    return s;
}

Matrix image_to_patches(const FloatField& image, std::size_t patch) {
    const std::size_t gh = image.height / patch, gw = image.width / patch;
    Matrix out(gh * gw, patch * patch);
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double* row = out.row(gy * gw + gx);
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    row[py * patch + px] = image.at(gy * patch + py, gx * patch + px);
                }
            }
        }
    }
    return out;
}

FloatField patches_to_image(const Matrix& patches, std::size_t image_size, std::size_t patch) {
    const std::size_t g = image_size / patch;
    FloatField out(image_size, image_size);
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            const double* row = patches.row(gy * g + gx);
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    out.at(gy * patch + py, gx * patch + px) = row[py * patch + px];
                }
            }
        }
    }
    return out;
}

namespace {

// ---------------------------------------------------------------------------
// Dense primitives. Linear weights are stored [out, in].
// ---------------------------------------------------------------------------

Matrix linear(const Matrix& x, const Tensor& w, const Tensor& b) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    Matrix y(x.rows, out_dim);
    for (std::size_t n = 0; n < x.rows; ++n) {
        const double* xr = x.row(n);
        double* yr = y.row(n);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wr = w.data.data() + o * in_dim;
            double acc = b.data[o];
            for (std::size_t i = 0; i < in_dim; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return y;
}

// Accumulates dW, db and returns dx (when want_dx).
Matrix linear_backward(const Matrix& x, const Matrix& dy, const Tensor& w, Tensor* dw, Tensor* db,
                       bool want_dx) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    Matrix dx;
    if (want_dx) dx = Matrix(x.rows, in_dim);
    for (std::size_t n = 0; n < x.rows; ++n) {
        const double* xr = x.row(n);
        const double* dyr = dy.row(n);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            if (dw) {
                double* dwr = dw->data.data() + o * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) dwr[i] += g * xr[i];
            }
            if (db) db->data[o] += g;
            if (want_dx) {
                const double* wr = w.data.data() + o * in_dim;
                double* dxr = dx.row(n);
                for (std::size_t i = 0; i < in_dim; ++i) dxr[i] += g * wr[i];
            }
        }
    }
    return dx;
}

Matrix layer_norm(const Matrix& x, const Tensor& gamma, const Tensor& beta, detail::LayerNormCache& cache) {
    const std::size_t d = x.cols;
    Matrix y(x.rows, d);
    cache.xhat = Matrix(x.rows, d);
    cache.inv_std.assign(x.rows, 0.0);
    for (std::size_t n = 0; n < x.rows; ++n) {
        const double* xr = x.row(n);
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std[n] = inv;
        double* hr = cache.xhat.row(n);
        double* yr = y.row(n);
        for (std::size_t i = 0; i < d; ++i) {
            hr[i] = (xr[i] - mean) * inv;
            yr[i] = gamma.data[i] * hr[i] + beta.data[i];
        }
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Tensor& gamma, const detail::LayerNormCache& cache,
                           Tensor* dgamma, Tensor* dbeta) {
    const std::size_t d = dy.cols;
    Matrix dx(dy.rows, d);
    std::vector<double> dxhat(d);
    for (std::size_t n = 0; n < dy.rows; ++n) {
        const double* dyr = dy.row(n);
        const double* hr = cache.xhat.row(n);
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (dgamma) dgamma->data[i] += dyr[i] * hr[i];
            if (dbeta) dbeta->data[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma.data[i];
            mean_d += dxhat[i];
            mean_dh += dxhat[i] * hr[i];
        }
        mean_d /= static_cast<double>(d);
        mean_dh /= static_cast<double>(d);
        double* dxr = dx.row(n);
        for (std::size_t i = 0; i < d; ++i) {
            dxr[i] = cache.inv_std[n] * (dxhat[i] - mean_d - hr[i] * mean_dh);
        }
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
}

// ---------------------------------------------------------------------------
// Parameter lookup
// ---------------------------------------------------------------------------

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

struct BlockIndex {
    std::size_t ln1_g = kNone, ln1_b = kNone, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_g = kNone, ln2_b = kNone, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct ModelIndex {
    std::size_t embed_w, embed_b, pos;
    std::vector<BlockIndex> encoder, decoder;
    std::size_t enc_norm_g = kNone, enc_norm_b = kNone;
    std::size_t dec_norm_g = kNone, dec_norm_b = kNone;
    std::size_t head_w, head_b;
    std::size_t cls_w = kNone, cls_b = kNone;
};

BlockIndex block_index(const ModelState& s, const std::string& p) {
    BlockIndex b;
    if (s.config.layer_norm) {
        b.ln1_g = s.index_of(p + ".ln1.gamma");
        b.ln1_b = s.index_of(p + ".ln1.beta");
        b.ln2_g = s.index_of(p + ".ln2.gamma");
        b.ln2_b = s.index_of(p + ".ln2.beta");
    }
    b.qkv_w = s.index_of(p + ".attn.qkv.weight");
    b.qkv_b = s.index_of(p + ".attn.qkv.bias");
    b.proj_w = s.index_of(p + ".attn.proj.weight");
    b.proj_b = s.index_of(p + ".attn.proj.bias");
    b.fc1_w = s.index_of(p + ".mlp.fc1.weight");
    b.fc1_b = s.index_of(p + ".mlp.fc1.bias");
    b.fc2_w = s.index_of(p + ".mlp.fc2.weight");
    b.fc2_b = s.index_of(p + ".mlp.fc2.bias");
    return b;
}

ModelIndex model_index(const ModelState& s) {
    ModelIndex m;
    m.embed_w = s.index_of("embed.proj.weight");
    m.embed_b = s.index_of("embed.proj.bias");
    m.pos = s.index_of("embed.pos");
    for (std::size_t i = 1; i <= s.config.depth; ++i) m.encoder.push_back(block_index(s, "enc." + std::to_string(i)));
    for (std::size_t j = 1; j <= s.config.decoder_depth; ++j) m.decoder.push_back(block_index(s, "dec." + std::to_string(j)));
    if (s.config.layer_norm) {
        m.enc_norm_g = s.index_of("enc.norm.gamma");
        m.enc_norm_b = s.index_of("enc.norm.beta");
        m.dec_norm_g = s.index_of("dec.norm.gamma");
        m.dec_norm_b = s.index_of("dec.norm.beta");
    }
    m.head_w = s.index_of("head.weight");
    m.head_b = s.index_of("head.bias");
    if (s.has("cls.weight")) {
        m.cls_w = s.index_of("cls.weight");
        m.cls_b = s.index_of("cls.bias");
    }
    return m;
}

const Tensor& value(const ModelState& s, std::size_t i) { return s.params[i].value; }

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

Matrix block_forward(const ModelState& s, const BlockIndex& b, const Matrix& x, detail::BlockCache& c) {
    const ModelConfig& cfg = s.config;
    const std::size_t n = x.rows, d = cfg.embed_dim, heads = cfg.heads, dh = cfg.head_dim();
    c.x_in = x;
    c.h1 = cfg.layer_norm ? layer_norm(x, value(s, b.ln1_g), value(s, b.ln1_b), c.ln1) : x;
    c.qkv = linear(c.h1, value(s, b.qkv_w), value(s, b.qkv_b));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.ctx = Matrix(n, d);
    c.probs.assign(heads, Matrix(n, n));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
        Matrix& p = c.probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            const double* qi = c.qkv.row(i) + qo;
            double* pr = p.row(i);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                const double* kj = c.qkv.row(j) + ko;
                double acc = 0.0;
                for (std::size_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
                pr[j] = acc * scale;
                mx = std::max(mx, pr[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                pr[j] = std::exp(pr[j] - mx);
                sum += pr[j];
            }
            for (std::size_t j = 0; j < n; ++j) pr[j] /= sum;
            double* out = c.ctx.row(i) + qo;
            for (std::size_t j = 0; j < n; ++j) {
                const double* vj = c.qkv.row(j) + vo;
                const double pj = pr[j];
                for (std::size_t t = 0; t < dh; ++t) out[t] += pj * vj[t];
            }
        }
    }
    const Matrix attn_out = linear(c.ctx, value(s, b.proj_w), value(s, b.proj_b));
    c.x_mid = x;
    for (std::size_t i = 0; i < c.x_mid.data.size(); ++i) c.x_mid.data[i] += attn_out.data[i];

    c.h2 = cfg.layer_norm ? layer_norm(c.x_mid, value(s, b.ln2_g), value(s, b.ln2_b), c.ln2) : c.x_mid;
    c.pre_act = linear(c.h2, value(s, b.fc1_w), value(s, b.fc1_b));
    c.act = c.pre_act;
    for (double& v : c.act.data) v = gelu(v);
    const Matrix mlp_out = linear(c.act, value(s, b.fc2_w), value(s, b.fc2_b));
    Matrix y = c.x_mid;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += mlp_out.data[i];
    return y;
}

Tensor* grad_slot(Gradients* g, std::size_t idx) { return g ? &g->grads[idx] : nullptr; }

// Returns d loss / d block input. Parameter gradients go to g (if non-null).
Matrix block_backward(const ModelState& s, const BlockIndex& b, const detail::BlockCache& c,
                      const Matrix& dy, Gradients* g) {
    const ModelConfig& cfg = s.config;
    const std::size_t n = dy.rows, d = cfg.embed_dim, heads = cfg.heads, dh = cfg.head_dim();

    // MLP branch
    Matrix dact = linear_backward(c.act, dy, value(s, b.fc2_w), grad_slot(g, b.fc2_w), grad_slot(g, b.fc2_b), true);
    for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(c.pre_act.data[i]);
    Matrix dh2 = linear_backward(c.h2, dact, value(s, b.fc1_w), grad_slot(g, b.fc1_w), grad_slot(g, b.fc1_b), true);
    Matrix dmid = cfg.layer_norm
                      ? layer_norm_backward(dh2, value(s, b.ln2_g), c.ln2, grad_slot(g, b.ln2_g), grad_slot(g, b.ln2_b))
                      : dh2;
    for (std::size_t i = 0; i < dmid.data.size(); ++i) dmid.data[i] += dy.data[i];

    // Attention branch
    const Matrix dctx = linear_backward(c.ctx, dmid, value(s, b.proj_w), grad_slot(g, b.proj_w), grad_slot(g, b.proj_b), true);
    Matrix dqkv(n, 3 * d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dp(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
        const Matrix& p = c.probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            const double* dout = dctx.row(i) + qo;
            const double* pr = p.row(i);
            // dP = dout . v ; dv += P^T dout
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double* vj = c.qkv.row(j) + vo;
                double* dvj = dqkv.row(j) + vo;
                double acc = 0.0;
                for (std::size_t t = 0; t < dh; ++t) {
                    acc += dout[t] * vj[t];
                    dvj[t] += pr[j] * dout[t];
                }
                dp[j] = acc;
                dot += acc * pr[j];
            }
            // softmax backward, then scores = q k^T * scale
            const double* qi = c.qkv.row(i) + qo;
            double* dqi = dqkv.row(i) + qo;
            for (std::size_t j = 0; j < n; ++j) {
                const double ds = pr[j] * (dp[j] - dot) * scale;
                if (ds == 0.0) continue;
                const double* kj = c.qkv.row(j) + ko;
                double* dkj = dqkv.row(j) + ko;
                for (std::size_t t = 0; t < dh; ++t) {
                    dqi[t] += ds * kj[t];
                    dkj[t] += ds * qi[t];
                }
            }
        }
    }
    Matrix dh1 = linear_backward(c.h1, dqkv, value(s, b.qkv_w), grad_slot(g, b.qkv_w), grad_slot(g, b.qkv_b), true);
    Matrix dx = cfg.layer_norm
                    ? layer_norm_backward(dh1, value(s, b.ln1_g), c.ln1, grad_slot(g, b.ln1_g), grad_slot(g, b.ln1_b))
                    : dh1;
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dmid.data[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Encoder / decoder stacks
// ---------------------------------------------------------------------------

void check_image(const ModelConfig& cfg, const FloatField& img) {
    if (img.height != cfg.image_size || img.width != cfg.image_size) {
        throw Error(ErrorCode::shape_mismatch, "input image does not match model image size");
    }
}

void encode_sample(const ModelState& s, const ModelIndex& m, const FloatField& img, detail::SampleTrace& t) {
    check_image(s.config, img);
    t.patches = image_to_patches(img, s.config.patch_size);
    Matrix x = linear(t.patches, value(s, m.embed_w), value(s, m.embed_b));
    const Tensor& pos = value(s, m.pos);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += pos.data[i];
    t.encoder.resize(m.encoder.size());
    for (std::size_t i = 0; i < m.encoder.size(); ++i) x = block_forward(s, m.encoder[i], x, t.encoder[i]);
    t.features = s.config.layer_norm
                     ? layer_norm(x, value(s, m.enc_norm_g), value(s, m.enc_norm_b), t.encoder_norm)
                     : x;
}

Matrix decode_sample(const ModelState& s, const ModelIndex& m, const Matrix& features, detail::SampleTrace& t) {
    Matrix x = features;
    t.decoder.resize(m.decoder.size());
    for (std::size_t i = 0; i < m.decoder.size(); ++i) x = block_forward(s, m.decoder[i], x, t.decoder[i]);
    t.decoder_out = s.config.layer_norm
                        ? layer_norm(x, value(s, m.dec_norm_g), value(s, m.dec_norm_b), t.decoder_norm)
                        : x;
    return linear(t.decoder_out, value(s, m.head_w), value(s, m.head_b));
}

// d loss / d encoder features -> parameter grads of the encoder, and input pixel grads.
FloatField encoder_backward(const ModelState& s, const ModelIndex& m, const detail::SampleTrace& t,
                            Matrix dfeat, Gradients& g) {
    Matrix dx = s.config.layer_norm
                    ? layer_norm_backward(dfeat, value(s, m.enc_norm_g), t.encoder_norm, &g.grads[m.enc_norm_g],
                                          &g.grads[m.enc_norm_b])
                    : std::move(dfeat);
    for (std::size_t i = m.encoder.size(); i-- > 0;) dx = block_backward(s, m.encoder[i], t.encoder[i], dx, &g);
    Tensor& dpos = g.grads[m.pos];
    for (std::size_t i = 0; i < dx.data.size(); ++i) dpos.data[i] += dx.data[i];
    const Matrix dpatch =
        linear_backward(t.patches, dx, value(s, m.embed_w), &g.grads[m.embed_w], &g.grads[m.embed_b], true);
    return patches_to_image(dpatch, s.config.image_size, s.config.patch_size);
}

FeatureMap to_feature_map(const ModelConfig& cfg, Matrix tokens) {
    return {cfg.grid(), cfg.grid(), std::move(tokens)};
}

void check_trace(const ModelState& s, const ForwardTrace& t, ForwardTrace::Kind kind, std::size_t batch) {
    if (t.state != &s || t.state_version != s.version) {
        throw Error(ErrorCode::stale_cache, "forward trace does not belong to the current model state");
    }
    if (t.kind != kind) throw Error(ErrorCode::stale_cache, "forward trace is of a different kind");
    if (t.samples.size() != batch) throw Error(ErrorCode::shape_mismatch, "upstream batch size differs from trace");
}

ForwardTrace new_trace(const ModelState& s, ForwardTrace::Kind kind, bool frozen, std::size_t batch) {
    ForwardTrace t;
    t.kind = kind;
    t.encoder_frozen = frozen;
    t.state = &s;
    t.state_version = s.version;
    t.samples.resize(batch);
    return t;
}

void zero_frozen(const ModelState& s, Gradients& g) {
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        if (s.params[i].frozen) std::fill(g.grads[i].data.begin(), g.grads[i].data.end(), 0.0);
    }
}

}  // namespace

std::vector<FeatureMap> encode(const ModelState& state, std::span<const FloatField> batch) {
    const ModelIndex m = model_index(state);
    std::vector<FeatureMap> out;
    out.reserve(batch.size());
    for (const auto& img : batch) {
        detail::SampleTrace t;
        encode_sample(state, m, img, t);
        out.push_back(to_feature_map(state.config, std::move(t.features)));
    }
    return out;
}

std::vector<FloatField> decode(const ModelState& state, std::span<const FeatureMap> features) {
    const ModelIndex m = model_index(state);
    std::vector<FloatField> out;
    out.reserve(features.size());
    for (const auto& f : features) {
        if (f.tokens.rows != state.config.tokens() || f.tokens.cols != state.config.embed_dim) {
            throw Error(ErrorCode::shape_mismatch, "feature map does not match model config");
        }
        detail::SampleTrace t;
        out.push_back(patches_to_image(decode_sample(state, m, f.tokens, t), state.config.image_size,
                                       state.config.patch_size));
    }
    return out;
}

MimForward forward_mim(const ModelState& state, std::span<const FloatField> batch) {
    const ModelIndex m = model_index(state);
    MimForward out;
    out.trace = new_trace(state, ForwardTrace::Kind::mim, false, batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto& t = out.trace.samples[b];
        encode_sample(state, m, batch[b], t);
        out.reconstructions.push_back(
            patches_to_image(decode_sample(state, m, t.features, t), state.config.image_size, state.config.patch_size));
    }
    return out;
}

FeatureForward extract_features(const ModelState& state, std::span<const FloatField> batch) {
    const ModelIndex m = model_index(state);
    FeatureForward out;
    out.trace = new_trace(state, ForwardTrace::Kind::features, true, batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto& t = out.trace.samples[b];
        encode_sample(state, m, batch[b], t);
        out.features.push_back(to_feature_map(state.config, t.features));
    }
    return out;
}

std::vector<double> pool_features(const FeatureMap& features) {
    const Matrix& t = features.tokens;
    std::vector<double> pooled(t.cols, 0.0);
    for (std::size_t n = 0; n < t.rows; ++n) {
        for (std::size_t i = 0; i < t.cols; ++i) pooled[i] += t.at(n, i);
    }
    for (double& v : pooled) v /= static_cast<double>(t.rows);
    return pooled;
}

std::vector<double> head_scores(const ModelState& state, std::span<const double> pooled) {
    if (!state.has("cls.weight")) throw Error(ErrorCode::invalid_config, "classification head not configured");
    const Tensor& w = state.param("cls.weight").value;
    const Tensor& b = state.param("cls.bias").value;
    const std::size_t c = w.shape[0], d = w.shape[1];
    if (pooled.size() != d) throw Error(ErrorCode::shape_mismatch, "pooled feature width differs from head");
    std::vector<double> scores(c);
    for (std::size_t k = 0; k < c; ++k) {
        double acc = b.data[k];
        for (std::size_t i = 0; i < d; ++i) acc += w.data[k * d + i] * pooled[i];
        scores[k] = acc;
    }
    return scores;
}

ClassifyForward forward_classify(const ModelState& state, std::span<const FloatField> batch, bool freeze_encoder) {
    if (!state.has("cls.weight")) throw Error(ErrorCode::invalid_config, "classification head not configured");
    const ModelIndex m = model_index(state);
    ClassifyForward out;
    out.trace = new_trace(state, ForwardTrace::Kind::classify, freeze_encoder, batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto& t = out.trace.samples[b];
        encode_sample(state, m, batch[b], t);
        t.pooled = pool_features(to_feature_map(state.config, t.features));
        out.scores.push_back(head_scores(state, t.pooled));
    }
    return out;
}

std::vector<std::vector<double>> classify(const ModelState& state, std::span<const FloatField> batch) {
    return forward_classify(state, batch).scores;
}

BackwardResult backward_mim(const ModelState& state, const ForwardTrace& trace, std::span<const FloatField> grad_out) {
    check_trace(state, trace, ForwardTrace::Kind::mim, grad_out.size());
    const ModelIndex m = model_index(state);
    const ModelConfig& cfg = state.config;
    BackwardResult r{Gradients::zeros_like(state), {}};
    Gradients& g = r.params;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
        const auto& t = trace.samples[b];
        check_image(cfg, grad_out[b]);
        const Matrix dpatch = image_to_patches(grad_out[b], cfg.patch_size);
        Matrix dx = linear_backward(t.decoder_out, dpatch, value(state, m.head_w), &g.grads[m.head_w],
                                    &g.grads[m.head_b], true);
        if (cfg.layer_norm) {
            dx = layer_norm_backward(dx, value(state, m.dec_norm_g), t.decoder_norm, &g.grads[m.dec_norm_g],
                                     &g.grads[m.dec_norm_b]);
        }
        for (std::size_t i = m.decoder.size(); i-- > 0;) dx = block_backward(state, m.decoder[i], t.decoder[i], dx, &g);
        r.inputs.push_back(encoder_backward(state, m, t, std::move(dx), g));
    }
    zero_frozen(state, g);
    return r;
}

BackwardResult backward_classify(const ModelState& state, const ForwardTrace& trace,
                                 std::span<const std::vector<double>> grad_scores) {
    check_trace(state, trace, ForwardTrace::Kind::classify, grad_scores.size());
    const ModelIndex m = model_index(state);
    const ModelConfig& cfg = state.config;
    BackwardResult r{Gradients::zeros_like(state), {}};
    Gradients& g = r.params;
    const Tensor& w = value(state, m.cls_w);
    const std::size_t c = w.shape[0], d = w.shape[1];
    for (std::size_t b = 0; b < grad_scores.size(); ++b) {
        const auto& t = trace.samples[b];
        const auto& gs = grad_scores[b];
        if (gs.size() != c) throw Error(ErrorCode::shape_mismatch, "score gradient width differs from class count");
        std::vector<double> dpool(d, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            g.grads[m.cls_b].data[k] += gs[k];
            for (std::size_t i = 0; i < d; ++i) {
                g.grads[m.cls_w].data[k * d + i] += gs[k] * t.pooled[i];
                dpool[i] += gs[k] * w.data[k * d + i];
            }
        }
        if (trace.encoder_frozen) continue;
        Matrix dfeat(cfg.tokens(), d);
        const double inv = 1.0 / static_cast<double>(cfg.tokens());
        for (std::size_t n = 0; n < cfg.tokens(); ++n) {
            for (std::size_t i = 0; i < d; ++i) dfeat.at(n, i) = dpool[i] * inv;
        }
        r.inputs.push_back(encoder_backward(state, m, t, std::move(dfeat), g));
    }
    zero_frozen(state, g);
    return r;
}

BackwardResult backward_features(const ModelState& state, const ForwardTrace& trace,
                                 std::span<const FeatureMap> grad_features) {
    check_trace(state, trace, ForwardTrace::Kind::features, grad_features.size());
    BackwardResult r{Gradients::zeros_like(state), {}};
    if (trace.encoder_frozen) return r;
    const ModelIndex m = model_index(state);
    for (std::size_t b = 0; b < grad_features.size(); ++b) {
        r.inputs.push_back(encoder_backward(state, m, trace.samples[b], grad_features[b].tokens, r.params));
    }
    zero_frozen(state, r.params);
    return r;
}

std::vector<double> layerwise_lr_multipliers(const ModelState& state, double decay) {
    if (!(decay > 0.0 && decay <= 1.0)) throw Error(ErrorCode::invalid_argument, "layer decay must lie in (0, 1]");
    const int top = state.max_layer();
    std::vector<double> out;
    out.reserve(state.params.size());
    for (const auto& p : state.params) out.push_back(std::pow(decay, top - p.layer));
    return out;
}

}  // namespace dualmim
