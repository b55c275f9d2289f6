#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualmim/model.hpp"

namespace dualmim {

/// Finite-difference check of the reconstruction loss through the model.
/// The focal weight map is computed once at the unperturbed point and held
/// fixed, which is exactly what the analytic gradient differentiates.
struct GradcheckConfig {
    ModelConfig model{8, 4, 8, 1, 1, 2, 2.0, 0, true};
    std::size_t batch = 2;
    double lambda = 0.4;
    double alpha = 1.0;
    double step = 1e-3;   // fourth-order stencil, so truncation error is O(step^4)
    double floor = 1e-6;  // denominator floor of the relative error
    double mask_ratio = 0.4;
    std::uint64_t seed = 0;
};

struct GradcheckEntry {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckResult {
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;  // an L1 residual changed sign within +-step
    GradcheckEntry worst;
    std::vector<GradcheckEntry> entries;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// `corrupt` may tamper with the analytic gradients before comparison
/// (used to demonstrate that the checker catches a broken backward pass).
GradcheckResult gradcheck_model(const GradcheckConfig& cfg,
                                const std::function<void(Gradients&)>& corrupt = {});

/// Finite differences of total_loss with respect to each reconstructed
/// pixel (weight map held fixed), on random fields of the given size.
GradcheckResult gradcheck_loss(std::size_t size, double lambda, double alpha, std::uint64_t seed,
                               double step = 1e-5, double floor = 1e-8);

}  // namespace dualmim
