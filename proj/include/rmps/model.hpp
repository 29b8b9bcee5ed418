#pragma once

#include "rmps/adapter.hpp"
#include "rmps/backbone.hpp"
#include "rmps/config.hpp"
#include "rmps/decoder.hpp"
#include "rmps/match_loss.hpp"
#include "rmps/prompt_codec.hpp"

#include <optional>
#include <span>

namespace rmps {

struct Model {
    ModelConfig cfg;
    BackboneWeights backbone;
    PromptEncoderWeights prompt_encoder;
    Tensor query_embed;                           // [N x d], shared by image and video passes
    DecoderWeights decoder;                       // shared decoder, or the object decoder when decoupled
    std::optional<DecoderWeights> prompt_decoder; // decoupled architectures only
    AdapterWeights adapters;

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    ParamList parameters() const;
};

/// Initializes one of the four meta-architectures. Weights: truncated normal
/// (sigma 0.02), norm affines (1, 0), query embeddings normal (sigma 1).
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

std::size_t count_params(const Model& model);

/// Final (inference) outputs plus every supervision point.
struct ModelOutput {
    FeatureMap features;
    std::vector<PredictionSet> supervision; // initial, 3 stages, then the adapted prediction if any
    std::optional<MaskLogits> object_masks; // final
    Tensor class_logits;                    // final, [N x C+1]
    Tensor object_queries;                  // final refined object queries
    std::optional<MaskLogits> prompt_masks; // final, one row per prompt
};

FeatureMap model_features(const Model& model, const Tensor& image);
FeatureMap model_features_video(const Model& model, std::span<const Tensor> frames);

/// Runs the decoder(s) and adapters on precomputed features. `objects`
/// selects the object branch; prompts may be empty.
ModelOutput model_forward(const Model& model, const FeatureMap& features, bool objects,
                          std::span<const VisualPrompt> prompts);

} // namespace rmps
