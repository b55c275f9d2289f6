#pragma once

#include "dualmim/image.hpp"
#include "dualmim/masking.hpp"
#include "dualmim/spectral.hpp"

namespace dualmim {

struct LossValue {
    double total = 0.0;
    double spatial = 0.0;
    double frequency = 0.0;
    double lambda = 0.0;
};

struct FieldLoss {
    double value = 0.0;
    FloatField grad;  // d value / d u_rec
};

struct SpectrumLoss {
    double value = 0.0;
    Spectrum grad;  // d value / d (Re, Im) of f_rec, per bin
};

struct TotalLoss {
    LossValue value;
    FloatField grad;
};

/// Mean absolute error. When `region` is given, the mean runs over the
/// pixels of its masked patches only (zero loss if none are masked).
/// Gradient uses sign(0) = 0.
FieldLoss l1_spatial(const FloatField& u_rec, const FloatField& u,
                     const SpatialMask* region = nullptr);

/// |F - F_rec|^alpha per bin, scaled so the largest weight is 1. An all-zero
/// map stays all-zero.
FloatField focal_weight_map(const Spectrum& f_rec, const Spectrum& f, double alpha);

/// (1/HW) sum w |F_rec - F|^2 with `weights` treated as constants.
SpectrumLoss focal_freq_loss_weighted(const Spectrum& f_rec, const Spectrum& f,
                                      const FloatField& weights);

/// Focal frequency loss with the weight map computed from the inputs and
/// detached from the gradient.
SpectrumLoss focal_freq_loss(const Spectrum& f_rec, const Spectrum& f, double alpha);

/// Pulls a gradient with respect to DFT(u) back to a gradient with respect
/// to the real field u (adjoint of the unnormalized forward transform).
FloatField dft2_adjoint(const Spectrum& grad);

/// L_spa + lambda * L_freq and its gradient with respect to u_rec. With
/// `l1_region` set, the spatial term is restricted to those patches.
TotalLoss total_loss(const FloatField& u_rec, const FloatField& u, double lambda, double alpha,
                     const SpatialMask* l1_region = nullptr);

}  // namespace dualmim
