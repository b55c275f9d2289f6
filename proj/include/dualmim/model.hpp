#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dualmim/image.hpp"
#include "dualmim/rng.hpp"
#include "dualmim/tensor.hpp"

namespace dualmim {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t depth = 2;          // encoder blocks
    std::size_t decoder_depth = 1;  // decoder blocks
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    std::size_t classes = 0;  // 0 = no classification head
    bool layer_norm = true;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size; }
    std::size_t hidden_dim() const;
    std::size_t head_dim() const { return embed_dim / heads; }

    /// Layer index shared by the reconstruction and classification heads.
    int head_layer() const { return static_cast<int>(depth + decoder_depth + 1); }

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    int layer = 0;  // 0 = patch embedding, then encoder blocks, decoder, heads
    bool frozen = false;
    bool encoder = false;
};

/// All learnable weights of the encoder-decoder plus their layer metadata.
/// `version` increases whenever an optimizer mutates the values; forward
/// traces remember it so a backward pass over stale activations is refused.
struct ModelState {
    ModelConfig config;
    std::vector<Parameter> params;
    std::uint64_t version = 0;

    std::size_t index_of(const std::string& name) const;
    Parameter& param(const std::string& name) { return params[index_of(name)]; }
    const Parameter& param(const std::string& name) const { return params[index_of(name)]; }
    bool has(const std::string& name) const;

    std::size_t parameter_count() const;
    int max_layer() const;
    void set_encoder_frozen(bool frozen);
    bool all_finite() const;
};

ModelState init_model(const ModelConfig& cfg, Rng& rng);

/// Token activations for one image: (grid_h * grid_w) x embed_dim.
struct FeatureMap {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    Matrix tokens;
};

/// Per-parameter gradients, parallel to ModelState::params.
struct Gradients {
    std::vector<Tensor> grads;

    static Gradients zeros_like(const ModelState& state);
    void add(const Gradients& other);
};

struct BackwardResult {
    Gradients params;
    std::vector<FloatField> inputs;  // d loss / d input pixels (empty when the encoder is frozen)
};

namespace detail {

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

struct BlockCache {
    Matrix x_in;
    LayerNormCache ln1;
    Matrix h1;
    Matrix qkv;
    std::vector<Matrix> probs;  // per head, tokens x tokens
    Matrix ctx;
    Matrix x_mid;
    LayerNormCache ln2;
    Matrix h2;
    Matrix pre_act;
    Matrix act;
};

struct SampleTrace {
    Matrix patches;
    std::vector<BlockCache> encoder;
    LayerNormCache encoder_norm;
    Matrix features;
    std::vector<BlockCache> decoder;
    LayerNormCache decoder_norm;
    Matrix decoder_out;
    std::vector<double> pooled;
};

}  // namespace detail

/// Retained activations of one forward pass.
struct ForwardTrace {
    enum class Kind { mim, classify, features };
    Kind kind = Kind::mim;
    bool encoder_frozen = false;
    const ModelState* state = nullptr;
    std::uint64_t state_version = 0;
    std::vector<detail::SampleTrace> samples;
};

struct MimForward {
    std::vector<FloatField> reconstructions;
    ForwardTrace trace;
};

struct ClassifyForward {
    std::vector<std::vector<double>> scores;
    ForwardTrace trace;
};

struct FeatureForward {
    std::vector<FeatureMap> features;
    ForwardTrace trace;
};

/// Patchify, project, add position embeddings and run the encoder blocks
/// (pre-norm attention and MLP with residuals). Every patch is encoded.
std::vector<FeatureMap> encode(const ModelState& state, std::span<const FloatField> batch);

/// Decoder blocks, then a per-token linear head to patch pixels, un-patchified.
std::vector<FloatField> decode(const ModelState& state, std::span<const FeatureMap> features);

MimForward forward_mim(const ModelState& state, std::span<const FloatField> batch);

/// Encoder output with the freeze flag set: backward through these features
/// never produces encoder gradients.
FeatureForward extract_features(const ModelState& state, std::span<const FloatField> batch);

/// Mean-pooled encoder tokens through the linear class head.
ClassifyForward forward_classify(const ModelState& state, std::span<const FloatField> batch,
                                 bool freeze_encoder = false);
std::vector<std::vector<double>> classify(const ModelState& state, std::span<const FloatField> batch);

/// Scores from already pooled features (linear head only).
std::vector<double> head_scores(const ModelState& state, std::span<const double> pooled);

/// Mean over tokens of a feature map.
std::vector<double> pool_features(const FeatureMap& features);

BackwardResult backward_mim(const ModelState& state, const ForwardTrace& trace,
                            std::span<const FloatField> grad_out);
BackwardResult backward_classify(const ModelState& state, const ForwardTrace& trace,
                                 std::span<const std::vector<double>> grad_scores);
BackwardResult backward_features(const ModelState& state, const ForwardTrace& trace,
                                 std::span<const FeatureMap> grad_features);

/// decay^(L - layer) per parameter, where L is the deepest (head) layer.
std::vector<double> layerwise_lr_multipliers(const ModelState& state, double decay);

FloatField patches_to_image(const Matrix& patches, std::size_t image_size, std::size_t patch);
Matrix image_to_patches(const FloatField& image, std::size_t patch);

}  // namespace dualmim
