#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualmim/losses.hpp"
#include "dualmim/metrics.hpp"
#include "dualmim/model.hpp"
#include "dualmim/rng.hpp"
#include "dualmim/sampling.hpp"

namespace dualmim {

enum class TrainMode { pretrain, finetune_full, finetune_frozen };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
    TrainMode mode = TrainMode::pretrain;
    std::uint64_t seed = 0;
    std::size_t steps = 200;
    std::size_t batch = 8;
    double lr = 1e-3;
    std::size_t warmup = 20;

    // reconstruction objective
    double lambda = 0.4;
    double alpha = 1.0;
    bool l1_masked_only = false;

    // masking
    double mask_ratio = 0.4;
    bool freq_mask = true;  // false: spatial-only masking
    int n_bands = 7;
    int n_select = 2;
    std::size_t preserve = 10;

    // fine-tuning
    double label_fraction = 1.0;
    double layer_decay = 0.75;
    double val_fraction = 0.2;
    std::size_t eval_every = 50;

    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

    ModelConfig model;
    AugmentConfig augment;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear warmup from 0 to cfg.lr over cfg.warmup steps, then a half cosine
/// that reaches 0 at step cfg.steps.
double cosine_lr(std::size_t step, const TrainConfig& cfg);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;

    static AdamState zeros_like(const ModelState& state);
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One bias-corrected Adam update with effective rate lr * multipliers[i].
/// Frozen parameters are skipped entirely. Every gradient is checked for
/// finiteness before anything is modified. Bumps state.version.
void adam_step(ModelState& state, AdamState& adam, const Gradients& grads, double lr,
               const std::vector<double>& multipliers = {});

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    LossValue loss;
};

struct TrainReport {
    std::vector<StepRecord> records;
    double wall_seconds = 0.0;
    std::filesystem::path checkpoint;
    // fine-tuning only
    std::optional<ClassificationMetrics> validation;
    double train_accuracy = 0.0;
    std::size_t best_step = 0;
    std::vector<std::size_t> train_indices;
    std::vector<std::string> class_names;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainingState {
    TrainConfig config;
    ModelState model;
    AdamState adam;
    Rng rng;
    std::size_t step = 0;  // number of completed steps
};

struct RunOptions {
    std::filesystem::path out_dir;     // checkpoints and metrics log go here; empty = no files
    std::optional<std::size_t> stop_after;  // stop once this many steps are complete
};

/// Fresh pre-training state: model initialised from a generator forked off the seed.
TrainingState start_pretraining(const TrainConfig& cfg);

/// Runs (or continues) pre-training until cfg.steps or opts.stop_after.
/// The metrics log is appended to, so a resumed run extends the same file.
TrainReport pretrain(TrainingState& st, const DatasetManifest& manifest, const RunOptions& opts = {});
TrainReport pretrain(const TrainConfig& cfg, const DatasetManifest& manifest, const RunOptions& opts = {});

/// Per-image mean of the masked-patch L1 between reconstruction and input
/// for a deterministic evaluation set of dual-masked draws.
struct ReconEval {
    double masked_l1 = 0.0;
    LossValue loss;
};
ReconEval evaluate_reconstruction(const ModelState& state, const TrainConfig& cfg,
                                  const std::vector<FloatField>& images, std::uint64_t seed);

/// Adds (or replaces) a linear class head.
void add_class_head(ModelState& state, std::size_t classes, Rng& rng);

/// Deterministic train/validation split of a labelled manifest followed by
/// the label-fraction subset of the training part.
struct LabeledSplit {
    std::vector<std::string> class_names;
    std::vector<std::pair<std::size_t, std::size_t>> items;  // (organ, image) in manifest order
    std::vector<std::size_t> labels;                         // parallel to items
    std::vector<std::size_t> train;                          // indices into items, after the fraction subset
    std::vector<std::size_t> val;
};
LabeledSplit split_labeled(const DatasetManifest& manifest, const TrainConfig& cfg);

/// Fine-tunes from `init` (a pre-trained state, or a fresh init for the
/// random-feature baseline). Keeps the state with the best validation
/// accuracy; `out` receives it.
TrainReport finetune(const TrainConfig& cfg, const ModelState& init, const DatasetManifest& manifest,
                     ModelState* out = nullptr, const RunOptions& opts = {});

/// Loads and normalises every image of a manifest once.
class ImageCache {
public:
    explicit ImageCache(const DatasetManifest& manifest);
    const FloatField& get(std::size_t organ, std::size_t image);

private:
    const DatasetManifest* manifest_;
    std::vector<std::vector<std::optional<FloatField>>> cache_;
};

/// Eval-time view of an image at the model resolution (centre crop or resize).
FloatField eval_view(const FloatField& image, const TrainConfig& cfg);

/// Softmax cross-entropy averaged over the batch, with its score gradients.
double cross_entropy(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels,
                     std::vector<std::vector<double>>* grad);

std::size_t argmax(const std::vector<double>& scores);

}  // namespace dualmim
