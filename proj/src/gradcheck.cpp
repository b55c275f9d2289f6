#include "dualmim/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dualmim/error.hpp"
#include "dualmim/losses.hpp"
#include "dualmim/masking.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim {

double relative_error(double analytic, double numeric, double floor) {
    const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / den;
}

namespace {

// Loss with the focal weights frozen at the base point; also records the
// sign pattern of the L1 residuals so kink crossings can be detected.
struct FixedLoss {
    std::vector<FloatField> targets;
    std::vector<Spectrum> target_spectra;
    std::vector<FloatField> weights;
    double lambda = 0.0;

    double operator()(const std::vector<FloatField>& recs, std::vector<signed char>* signs) const {
        double total = 0.0;
        if (signs) signs->clear();
        for (std::size_t b = 0; b < recs.size(); ++b) {
            const FieldLoss l1 = l1_spatial(recs[b], targets[b]);
            total += l1.value;
            if (lambda != 0.0) {
                total += lambda * focal_freq_loss_weighted(dft2(recs[b]), target_spectra[b], weights[b]).value;
            }
            if (signs) {
                for (std::size_t i = 0; i < recs[b].size(); ++i) {
                    const double d = recs[b].data[i] - targets[b].data[i];
                    signs->push_back(static_cast<signed char>((d > 0) - (d < 0)));
                }
            }
        }
        return total;
    }
};

void track_worst(GradcheckResult& r, GradcheckEntry e) {
    ++r.checked;
    if (r.entries.empty() || e.rel_error > r.worst.rel_error) r.worst = e;
    r.entries.push_back(std::move(e));
}

}  // namespace

GradcheckResult gradcheck_model(const GradcheckConfig& cfg, const std::function<void(Gradients&)>& corrupt) {
    cfg.model.validate();
    if (cfg.batch == 0 || !(cfg.step > 0.0)) throw Error(ErrorCode::invalid_argument, "gradcheck needs batch >= 1 and step > 0");
    Rng rng(cfg.seed);
    ModelState state = init_model(cfg.model, rng);
    // Larger weights than the training init so every path carries signal.
    for (auto& p : state.params) {
        for (double& v : p.value.data) v += 0.3 * rng.normal();
    }

    const std::size_t n = cfg.model.image_size, g = cfg.model.grid();
    FreqMaskConfig fcfg;
    fcfg.height = fcfg.width = n;
    fcfg.preserve = std::min<std::size_t>(2, n);
    std::vector<FloatField> inputs;
    FixedLoss loss;
    loss.lambda = cfg.lambda;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        FloatField u(n, n);
        for (double& v : u.data) v = rng.uniform();
        const SpatialMask sm = sample_spatial_mask(rng, g, g, cfg.model.patch_size, cfg.mask_ratio);
        inputs.push_back(dual_mask(u, sm, sample_freq_mask(rng, fcfg)).image);
        loss.targets.push_back(u);
        loss.target_spectra.push_back(dft2(u));
    }

    MimForward fwd = forward_mim(state, inputs);
    // Keep every L1 residual clear of zero so no kink falls inside the stencil.
    constexpr double margin = 0.02;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        FloatField& u = loss.targets[b];
        const FloatField& rec = fwd.reconstructions[b];
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double d = rec.data[i] - u.data[i];
            if (std::abs(d) < margin) u.data[i] = rec.data[i] + (d >= 0 ? -margin : margin);
        }
        loss.target_spectra[b] = dft2(u);
    }
    std::vector<FloatField> upstream;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        loss.weights.push_back(focal_weight_map(dft2(fwd.reconstructions[b]), loss.target_spectra[b], cfg.alpha));
        upstream.push_back(total_loss(fwd.reconstructions[b], loss.targets[b], cfg.lambda, cfg.alpha).grad);
    }
    BackwardResult back = backward_mim(state, fwd.trace, upstream);
    if (corrupt) corrupt(back.params);

    std::vector<signed char> base_signs, signs;
    loss(fwd.reconstructions, &base_signs);

    GradcheckResult r;
    for (std::size_t pi = 0; pi < state.params.size(); ++pi) {
        auto& p = state.params[pi];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double orig = p.value.data[k];
            // fourth-order central stencil: f'(x) ~ [8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))] / 12h
            double f[4];
            bool kink = false;
            const double offsets[4] = {cfg.step, -cfg.step, 2 * cfg.step, -2 * cfg.step};
            for (int j = 0; j < 4; ++j) {
                p.value.data[k] = orig + offsets[j];
                f[j] = loss(forward_mim(state, inputs).reconstructions, &signs);
                kink = kink || signs != base_signs;
            }
            p.value.data[k] = orig;
            if (kink) {
                ++r.skipped_kinks;
                continue;
            }
            const double numeric = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * cfg.step);
            const double analytic = back.params.grads[pi].data[k];
            track_worst(r, {p.name, k, analytic, numeric, relative_error(analytic, numeric, cfg.floor)});
        }
    }
    return r;
}

GradcheckResult gradcheck_loss(std::size_t size, double lambda, double alpha, std::uint64_t seed, double step,
                               double floor) {
    Rng rng(seed);
    FloatField u(size, size), rec(size, size);
    for (double& v : u.data) v = rng.uniform();
    for (double& v : rec.data) v = rng.uniform();
    FixedLoss loss;
    loss.lambda = lambda;
    loss.targets = {u};
    loss.target_spectra = {dft2(u)};
    loss.weights = {focal_weight_map(dft2(rec), loss.target_spectra[0], alpha)};
    const FloatField grad = total_loss(rec, u, lambda, alpha).grad;

    std::vector<signed char> base_signs, signs;
    std::vector<FloatField> recs{rec};
    loss(recs, &base_signs);
    GradcheckResult r;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        recs[0].data[i] = rec.data[i] + step;
        const double up = loss(recs, &signs);
        bool kink = signs != base_signs;
        recs[0].data[i] = rec.data[i] - step;
        const double down = loss(recs, &signs);
        kink = kink || signs != base_signs;
        recs[0].data[i] = rec.data[i];
        if (kink) {
            ++r.skipped_kinks;
            continue;
        }
        const double numeric = (up - down) / (2.0 * step);
        track_worst(r, {"u_rec", i, grad.data[i], numeric, relative_error(grad.data[i], numeric, floor)});
    }
    return r;
}

}  // namespace dualmim
