#pragma once

#include <filesystem>

#include "dualmim/trainer.hpp"

namespace dualmim {

inline constexpr int kCheckpointVersion = 1;

/// Text header ("DUALMIM-CHECKPOINT <version>"), the resolved config block,
/// step counter, generator state and Adam step, then one record per
/// parameter: a text line `name layer frozen encoder ndim dims...` followed
/// by value, first-moment and second-moment data as little-endian doubles.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& file);
TrainingState load_checkpoint(const std::filesystem::path& file);

}  // namespace dualmim
