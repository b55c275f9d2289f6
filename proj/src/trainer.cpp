#include "dualmim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "dualmim/checkpoint.hpp"
#include "dualmim/error.hpp"
#include "dualmim/masking.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::pretrain: return "pretrain";
        case TrainMode::finetune_full: return "finetune-full";
        case TrainMode::finetune_frozen: return "finetune-frozen";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "pretrain") return TrainMode::pretrain;
    if (text == "finetune-full") return TrainMode::finetune_full;
    if (text == "finetune-frozen") return TrainMode::finetune_frozen;
    throw Error(ErrorCode::invalid_config, "unknown training mode: " + text);
}

void TrainConfig::validate() const {
    model.validate();
    augment.validate();
    if (steps == 0 || batch == 0) throw Error(ErrorCode::invalid_config, "steps and batch must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::invalid_config, "learning rate must be finite and >= 0");
    if (!(lambda >= 0.0)) throw Error(ErrorCode::invalid_config, "lambda must be >= 0");
    if (!(alpha > 0.0)) throw Error(ErrorCode::invalid_config, "alpha must be > 0");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw Error(ErrorCode::invalid_config, "mask ratio must lie in [0, 1]");
    if (n_bands < 1 || n_select < 0 || n_select > n_bands) {
        throw Error(ErrorCode::invalid_config, "need 1 <= n_bands and 0 <= n_select <= n_bands");
    }
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
        throw Error(ErrorCode::invalid_config, "label fraction must lie in (0, 1]");
    }
    if (!(layer_decay > 0.0 && layer_decay <= 1.0)) throw Error(ErrorCode::invalid_config, "layer decay must lie in (0, 1]");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error(ErrorCode::invalid_config, "val fraction must lie in [0, 1)");
    if (augment.out_h != model.image_size || augment.out_w != model.image_size) {
        throw Error(ErrorCode::invalid_config, "augmentation output must match the model image size");
    }
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
    if (step < cfg.warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
    if (step >= cfg.steps || cfg.steps <= cfg.warmup) return step >= cfg.steps ? 0.0 : cfg.lr;
    const double progress = static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState AdamState::zeros_like(const ModelState& state) {
    AdamState a;
    for (const auto& p : state.params) {
        a.m.emplace_back(p.value.shape);
        a.v.emplace_back(p.value.shape);
    }
    return a;
}

void adam_step(ModelState& state, AdamState& adam, const Gradients& grads, double lr,
               const std::vector<double>& multipliers) {
    const std::size_t n = state.params.size();
    if (grads.grads.size() != n || adam.m.size() != n || adam.v.size() != n ||
        (!multipliers.empty() && multipliers.size() != n)) {
        throw Error(ErrorCode::shape_mismatch, "gradients, optimizer moments and parameters differ in count");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (grads.grads[i].size() != state.params[i].value.size()) {
            throw Error(ErrorCode::shape_mismatch, "gradient shape differs for " + state.params[i].name);
        }
        if (state.params[i].frozen) continue;
        for (double g : grads.grads[i].data) {
            if (!std::isfinite(g)) throw Error(ErrorCode::non_finite, "non-finite gradient for " + state.params[i].name);
        }
    }
    ++adam.t;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.t));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < n; ++i) {
        Parameter& p = state.params[i];
        if (p.frozen) continue;
        const double rate = lr * (multipliers.empty() ? 1.0 : multipliers[i]);
        auto& m = adam.m[i].data;
        auto& v = adam.v[i].data;
        const auto& g = grads.grads[i].data;
        for (std::size_t k = 0; k < g.size(); ++k) {
            m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
            v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
            const double mhat = m[k] / c1, vhat = v[k] / c2;
            p.value.data[k] -= rate * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
    ++state.version;
}

ImageCache::ImageCache(const DatasetManifest& manifest) : manifest_(&manifest) {
    for (const auto& o : manifest.organs) cache_.emplace_back(o.count());
}

const FloatField& ImageCache::get(std::size_t organ, std::size_t image) {
    auto& slot = cache_.at(organ).at(image);
    if (!slot) slot = normalize(load_png(manifest_->absolute(manifest_->organs[organ].images[image])));
    return *slot;
}

FloatField eval_view(const FloatField& image, const TrainConfig& cfg) {
    AugmentConfig a = AugmentConfig::disabled(cfg.model.image_size, cfg.model.image_size);
    a.bridge = cfg.augment.bridge;
    Rng unused(0);
    return augment(image, unused, a);
}

namespace {

FreqMaskConfig freq_config(const TrainConfig& cfg) {
    FreqMaskConfig f;
    f.height = f.width = cfg.model.image_size;
    f.n_bands = cfg.n_bands;
    f.n_select = cfg.n_select;
    f.preserve = cfg.preserve;
    return f;
}

struct MaskedBatch {
    std::vector<FloatField> inputs;
    std::vector<FloatField> targets;
    std::vector<SpatialMask> masks;
};

// One spatial and one frequency mask per image.
void mask_into(MaskedBatch& batch, const FloatField& target, Rng& rng, const TrainConfig& cfg) {
    const std::size_t g = cfg.model.grid();
    SpatialMask sm = sample_spatial_mask(rng, g, g, cfg.model.patch_size, cfg.mask_ratio);
    const FreqMask fm = cfg.freq_mask ? sample_freq_mask(rng, freq_config(cfg)) : FreqMask(cfg.model.image_size, cfg.model.image_size);
    batch.inputs.push_back(dual_mask(target, sm, fm).image);
    batch.targets.push_back(target);
    batch.masks.push_back(std::move(sm));
}

struct BatchLoss {
    LossValue value;
    std::vector<FloatField> grads;
};

BatchLoss batch_loss(const std::vector<FloatField>& recs, const MaskedBatch& b, const TrainConfig& cfg) {
    BatchLoss out;
    const double inv = 1.0 / static_cast<double>(recs.size());
    out.value.lambda = cfg.lambda;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        TotalLoss t = total_loss(recs[i], b.targets[i], cfg.lambda, cfg.alpha,
                                 cfg.l1_masked_only ? &b.masks[i] : nullptr);
        out.value.spatial += t.value.spatial * inv;
        out.value.frequency += t.value.frequency * inv;
        for (double& g : t.grad.data) g *= inv;
        out.grads.push_back(std::move(t.grad));
    }
    out.value.total = out.value.spatial + cfg.lambda * out.value.frequency;
    return out;
}

std::string format_record(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\n", r.step, r.lr, r.loss.total, r.loss.spatial,
                  r.loss.frequency);
    return buf;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, std::size_t step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "checkpoint_%06zu.ckpt", step);
    return dir / buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainingState start_pretraining(const TrainConfig& cfg) {
    cfg.validate();
    TrainingState st;
    st.config = cfg;
    st.rng = Rng(cfg.seed);
    Rng init_rng = st.rng.fork();
    st.model = init_model(cfg.model, init_rng);
    st.adam = AdamState::zeros_like(st.model);
    return st;
}

TrainReport pretrain(TrainingState& st, const DatasetManifest& manifest, const RunOptions& opts) {
    const TrainConfig& cfg = st.config;
    cfg.validate();
    manifest.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const SamplerWeights weights = organ_weights(manifest);
    ImageCache images(manifest);

    std::ofstream log;
    if (!opts.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opts.out_dir, ec);
        const auto log_path = opts.out_dir / "metrics.tsv";
        // A fresh run truncates; a resumed run appends after the completed steps.
        log.open(log_path, st.step == 0 ? std::ios::trunc : std::ios::app);
        if (!log) throw Error(ErrorCode::unwritable_path, "cannot write metrics log: " + log_path.string());
    }

    TrainReport report;
    const std::size_t end = std::min(cfg.steps, opts.stop_after.value_or(cfg.steps));
    while (st.step < end) {
        const std::size_t step = st.step;
        const double lr = cosine_lr(step, cfg);
        MaskedBatch batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const SampledImage s = sample_image(st.rng, manifest, weights);
            const FloatField view = augment(images.get(s.organ_index, s.image_index), st.rng, cfg.augment);
            mask_into(batch, view, st.rng, cfg);
        }
        MimForward fwd = forward_mim(st.model, batch.inputs);
        BatchLoss loss = batch_loss(fwd.reconstructions, batch, cfg);
        if (!std::isfinite(loss.value.total)) {
            throw Error(ErrorCode::non_finite, "non-finite loss at step " + std::to_string(step));
        }
        const BackwardResult back = backward_mim(st.model, fwd.trace, loss.grads);
        adam_step(st.model, st.adam, back.params, lr);
        ++st.step;

        StepRecord rec{step, lr, loss.value};
        if (log) {
            log << format_record(rec);
            log.flush();
        }
        report.records.push_back(rec);
        if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 &&
            st.step < cfg.steps) {
            save_checkpoint(st, checkpoint_name(opts.out_dir, st.step));
        }
    }
    if (!opts.out_dir.empty()) {
        report.checkpoint = st.step >= cfg.steps ? opts.out_dir / "final.ckpt" : checkpoint_name(opts.out_dir, st.step);
        save_checkpoint(st, report.checkpoint);
    }
    report.wall_seconds = seconds_since(t0);
    return report;
}

TrainReport pretrain(const TrainConfig& cfg, const DatasetManifest& manifest, const RunOptions& opts) {
    TrainingState st = start_pretraining(cfg);
    return pretrain(st, manifest, opts);
}

ReconEval evaluate_reconstruction(const ModelState& state, const TrainConfig& cfg,
                                  const std::vector<FloatField>& images, std::uint64_t seed) {
    if (images.empty()) throw Error(ErrorCode::empty_dataset, "no images to evaluate");
    Rng rng(seed);
    MaskedBatch batch;
    for (const auto& img : images) mask_into(batch, img, rng, cfg);
    const MimForward fwd = forward_mim(state, batch.inputs);
    ReconEval out;
    out.loss = batch_loss(fwd.reconstructions, batch, cfg).value;
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (batch.masks[i].masked_count() == 0) continue;
        sum += l1_spatial(fwd.reconstructions[i], batch.targets[i], &batch.masks[i]).value;
        ++counted;
    }
    out.masked_l1 = counted ? sum / static_cast<double>(counted) : 0.0;
    return out;
}

void add_class_head(ModelState& state, std::size_t classes, Rng& rng) {
    if (classes < 2) throw Error(ErrorCode::invalid_config, "classification head needs >= 2 classes");
    state.params.erase(std::remove_if(state.params.begin(), state.params.end(),
                                      [](const Parameter& p) { return p.name.starts_with("cls."); }),
                       state.params.end());
    state.config.classes = classes;
    const std::size_t d = state.config.embed_dim;
    const int layer = state.config.head_layer();
    Parameter w{"cls.weight", Tensor({classes, d}), layer, false, false};
    for (double& v : w.value.data) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = 0.02 * z;
    }
    state.params.push_back(std::move(w));
    state.params.push_back({"cls.bias", Tensor({classes}), layer, false, false});
    ++state.version;
}

LabeledSplit split_labeled(const DatasetManifest& manifest, const TrainConfig& cfg) {
    LabeledSplit s;
    std::set<std::string> names;
    for (std::size_t o = 0; o < manifest.organs.size(); ++o) {
        for (std::size_t i = 0; i < manifest.organs[o].count(); ++i) {
            const auto& label = manifest.organs[o].images[i].label;
            if (label.empty()) {
                throw Error(ErrorCode::label_mismatch, "image without a label: " + manifest.organs[o].images[i].rel_path);
            }
            names.insert(label);
            s.items.emplace_back(o, i);
        }
    }
    s.class_names.assign(names.begin(), names.end());
    if (s.class_names.size() < 2) throw Error(ErrorCode::label_mismatch, "fine-tuning needs at least two classes");
    if (cfg.model.classes != 0 && cfg.model.classes != s.class_names.size()) {
        throw Error(ErrorCode::label_mismatch, "configured class count " + std::to_string(cfg.model.classes) +
                                                   " differs from the " + std::to_string(s.class_names.size()) +
                                                   " labels in the manifest");
    }
    for (const auto& [o, i] : s.items) {
        const auto& label = manifest.organs[o].images[i].label;
        s.labels.push_back(static_cast<std::size_t>(
            std::lower_bound(s.class_names.begin(), s.class_names.end(), label) - s.class_names.begin()));
    }
    // Split first, then subsample the training part, so the validation set
    // is the same for every label fraction.
    const std::vector<std::size_t> order = fraction_subset(s.items.size(), 1.0, cfg.seed ^ 0x5eedULL);
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(order.size())));
    s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    if (train.empty()) throw Error(ErrorCode::empty_dataset, "no training items left after the validation split");
    for (std::size_t k : fraction_subset(train.size(), cfg.label_fraction, cfg.seed)) s.train.push_back(train[k]);
    return s;
}

double cross_entropy(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels,
                     std::vector<std::vector<double>>* grad) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw Error(ErrorCode::label_mismatch, "scores and labels differ in count");
    }
    const double inv = 1.0 / static_cast<double>(scores.size());
    double loss = 0.0;
    if (grad) grad->assign(scores.size(), {});
    for (std::size_t b = 0; b < scores.size(); ++b) {
        const auto& s = scores[b];
        if (labels[b] >= s.size()) throw Error(ErrorCode::label_mismatch, "label exceeds class count");
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double v : s) z += std::exp(v - mx);
        loss += (std::log(z) + mx - s[labels[b]]) * inv;
        if (grad) {
            auto& g = (*grad)[b];
            g.resize(s.size());
            for (std::size_t k = 0; k < s.size(); ++k) {
                g[k] = (std::exp(s[k] - mx) / z - (k == labels[b] ? 1.0 : 0.0)) * inv;
            }
        }
    }
    return loss;
}

std::size_t argmax(const std::vector<double>& scores) {
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

namespace {

struct ClassifierEval {
    ConfusionMatrix cm;
    double acc = 0.0;
};

template <typename ScoreFn>
ClassifierEval evaluate_items(const std::vector<std::size_t>& items, const LabeledSplit& split, std::size_t classes,
                              ScoreFn&& scores_of) {
    ClassifierEval e{ConfusionMatrix(classes), 0.0};
    for (std::size_t idx : items) e.cm.add(split.labels[idx], argmax(scores_of(idx)));
    if (!items.empty()) {
        std::uint64_t hit = 0;
        for (std::size_t c = 0; c < classes; ++c) hit += e.cm.at(c, c);
        e.acc = static_cast<double>(hit) / static_cast<double>(items.size());
    }
    return e;
}

void standardize(std::map<std::size_t, std::vector<double>>& pooled, const std::vector<std::size_t>& train,
                 std::vector<double>& mean, std::vector<double>& scale) {
    const std::size_t d = pooled.at(train.front()).size();
    mean.assign(d, 0.0);
    scale.assign(d, 0.0);
    for (std::size_t idx : train)
        for (std::size_t i = 0; i < d; ++i) mean[i] += pooled.at(idx)[i];
    for (double& m : mean) m /= static_cast<double>(train.size());
    for (std::size_t idx : train)
        for (std::size_t i = 0; i < d; ++i) scale[i] += (pooled.at(idx)[i] - mean[i]) * (pooled.at(idx)[i] - mean[i]);
    for (double& s : scale) s = 1.0 / std::max(std::sqrt(s / static_cast<double>(train.size())), 1e-8);
    for (auto& [idx, f] : pooled)
        for (std::size_t i = 0; i < d; ++i) f[i] = (f[i] - mean[i]) * scale[i];
}

// head(W, b) on standardised features == head(W * scale, b - W * scale * mean) on raw ones
void fold_standardization(ModelState& s, const std::vector<double>& mean, const std::vector<double>& scale) {
    auto& w = s.param("cls.weight").value;
    auto& b = s.param("cls.bias").value;
    const std::size_t c = w.shape[0], d = w.shape[1];
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < d; ++i) {
            w.data[k * d + i] *= scale[i];
            b.data[k] -= w.data[k * d + i] * mean[i];
        }
    }
}

}  // namespace

TrainReport finetune(const TrainConfig& cfg_in, const ModelState& init, const DatasetManifest& manifest,
                     ModelState* out, const RunOptions& opts) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.mode == TrainMode::pretrain) throw Error(ErrorCode::invalid_config, "finetune needs a finetune mode");
    ModelConfig arch = init.config;
    arch.classes = 0;
    ModelConfig want = cfg.model;
    want.classes = 0;
    if (!(arch == want)) throw Error(ErrorCode::invalid_config, "checkpoint model config differs from the run config");
    manifest.validate();

    const auto t0 = std::chrono::steady_clock::now();
    const LabeledSplit split = split_labeled(manifest, cfg);
    const std::size_t classes = split.class_names.size();
    Rng rng(cfg.seed ^ 0xF17E7ULL);
    ModelState state = init;
    state.version = 0;
    Rng head_rng = rng.fork();
    add_class_head(state, classes, head_rng);
    const bool frozen = cfg.mode == TrainMode::finetune_frozen;
    state.set_encoder_frozen(frozen);
    for (auto& p : state.params) {
        if (!p.encoder && !p.name.starts_with("cls.")) p.frozen = true;  // decoder plays no part
    }
    AdamState adam = AdamState::zeros_like(state);
    const std::vector<double> mult = frozen ? std::vector<double>{} : layerwise_lr_multipliers(state, cfg.layer_decay);
    ImageCache images(manifest);
    auto view_of = [&](std::size_t idx) -> FloatField {
        const auto [o, i] = split.items[idx];
        return eval_view(images.get(o, i), cfg);
    };

    // Frozen mode: the encoder never changes, so pooled features are computed
    // once and standardised with training-set statistics.
    std::map<std::size_t, std::vector<double>> pooled;
    std::vector<double> feat_mean, feat_scale;
    if (frozen) {
        std::vector<std::size_t> all = split.train;
        all.insert(all.end(), split.val.begin(), split.val.end());
        for (std::size_t idx : all) {
            const std::vector<FloatField> one{view_of(idx)};
            pooled[idx] = pool_features(encode(state, one)[0]);
        }
        standardize(pooled, split.train, feat_mean, feat_scale);
    }
    auto scores_of = [&](const ModelState& s, std::size_t idx) {
        if (frozen) return head_scores(s, pooled.at(idx));
        const std::vector<FloatField> one{view_of(idx)};
        return classify(s, one)[0];
    };

    TrainReport report;
    report.train_indices = split.train;
    report.class_names = split.class_names;
    const std::vector<std::size_t>& select = split.val.empty() ? split.train : split.val;
    double best_acc = -1.0;
    ModelState best = state;

    auto consider = [&](std::size_t step) {
        const ClassifierEval e =
            evaluate_items(select, split, classes, [&](std::size_t idx) { return scores_of(state, idx); });
        if (e.acc > best_acc) {
            best_acc = e.acc;
            best = state;
            report.best_step = step;
        }
    };

    const std::size_t cls_w = state.index_of("cls.weight"), cls_b = state.index_of("cls.bias");
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double lr = cosine_lr(step, cfg);
        std::vector<std::size_t> idx(cfg.batch), labels(cfg.batch);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            idx[b] = split.train[static_cast<std::size_t>(rng.uniform_int(split.train.size()))];
            labels[b] = split.labels[idx[b]];
        }
        std::vector<std::vector<double>> grad_scores;
        double loss = 0.0;
        Gradients grads = Gradients::zeros_like(state);
        if (frozen) {
            std::vector<std::vector<double>> scores;
            for (std::size_t k : idx) scores.push_back(head_scores(state, pooled.at(k)));
            loss = cross_entropy(scores, labels, &grad_scores);
            const std::size_t d = state.config.embed_dim;
            for (std::size_t b = 0; b < idx.size(); ++b) {
                const auto& f = pooled.at(idx[b]);
                for (std::size_t c = 0; c < classes; ++c) {
                    grads.grads[cls_b].data[c] += grad_scores[b][c];
                    for (std::size_t i = 0; i < d; ++i) grads.grads[cls_w].data[c * d + i] += grad_scores[b][c] * f[i];
                }
            }
        } else {
            std::vector<FloatField> batch;
            for (std::size_t k : idx) {
                const auto [o, i] = split.items[k];
                AugmentConfig a = cfg.augment;
                a.train = true;
                batch.push_back(augment(images.get(o, i), rng, a));
            }
            const ClassifyForward fwd = forward_classify(state, batch);
            loss = cross_entropy(fwd.scores, labels, &grad_scores);
            grads = backward_classify(state, fwd.trace, grad_scores).params;
        }
        if (!std::isfinite(loss)) throw Error(ErrorCode::non_finite, "non-finite loss at step " + std::to_string(step));
        adam_step(state, adam, grads, lr, mult);
        report.records.push_back({step, lr, LossValue{loss, loss, 0.0, 0.0}});
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) consider(step + 1);
    }
    if (cfg.eval_every == 0 || cfg.steps % cfg.eval_every != 0) consider(cfg.steps);

    const ClassifierEval train_eval =
        evaluate_items(split.train, split, classes, [&](std::size_t idx) { return scores_of(best, idx); });
    report.train_accuracy = train_eval.acc;
    if (!split.val.empty()) {
        const ClassifierEval val =
            evaluate_items(split.val, split, classes, [&](std::size_t idx) { return scores_of(best, idx); });
        report.validation = classification_metrics(val.cm);
    }
    if (frozen) fold_standardization(best, feat_mean, feat_scale);
    if (!opts.out_dir.empty()) {
        TrainingState ts;
        ts.config = cfg;
        ts.config.model = best.config;
        ts.model = best;
        ts.adam = AdamState::zeros_like(best);
        ts.rng = rng;
        ts.step = cfg.steps;
        report.checkpoint = opts.out_dir / "best.ckpt";
        save_checkpoint(ts, report.checkpoint);
    }
    if (out) *out = std::move(best);
    report.wall_seconds = seconds_since(t0);
    return report;
}

}  // namespace dualmim
