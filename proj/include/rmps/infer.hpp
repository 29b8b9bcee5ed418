#pragma once

#include "rmps/config.hpp"
#include "rmps/model.hpp"
#include "rmps/synth_data.hpp"

#include <optional>
#include <span>
#include <vector>

namespace rmps {

struct Segment {
    std::size_t id = 0;
    std::size_t class_id = 0;
    bool is_thing = false;
    double score = 0.0;
};

/// Segment-id map at full resolution; 0 is void.
struct PanopticResult {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::size_t> ids;
    std::vector<Segment> segments;

    const Segment* find(std::size_t id) const;
    /// Ids renumbered 1, 2, ... in order of first appearance in the map.
    PanopticResult canonical() const;
};

struct EntityPrediction {
    Tensor mask_logits;               // [h x w] (or [T x h x w]) at stride 4
    std::vector<double> class_probs;  // C + 1 entries, last is no-object
    double score = 0.0;               // max non-void probability
    std::size_t label = 0;            // its class
    std::optional<std::size_t> instance_id;
};

/// Softmax probabilities, scores and labels for each query.
std::vector<EntityPrediction> entity_predictions(const Tensor& class_logits, const MaskLogits& masks);

/// Merge step on raw outputs: class logits [N x C+1], mask logits
/// [N x h x w] upsampled bilinearly to height x width.
PanopticResult panoptic_merge(const Tensor& class_logits, const Tensor& mask_logits, std::size_t height,
                              std::size_t width, std::size_t thing_classes, const InferConfig& cfg);

PanopticResult infer_panoptic(const Model& model, const Tensor& image, const InferConfig& cfg);

/// Ground-truth entities as a panoptic result (things get one id each,
/// stuff one id per class).
PanopticResult scene_panoptic(const Scene& scene);

struct TrackedInstance {
    std::size_t id = 0;
    std::size_t class_id = 0;
    double score = 0.0;
    std::vector<std::vector<double>> masks; // per frame, H x W binary (empty frame = all zeros)
    std::vector<bool> present;
};

/// Links per-window query identities: window-2 query j inherits the track of
/// window-1 query i when Hungarian on (1 - cosine) pairs them with
/// similarity >= threshold. Returns, for each current query, the index of
/// the previous query it continues, if any.
std::vector<std::optional<std::size_t>> link_queries(const Tensor& previous, const Tensor& current, double threshold);

std::vector<TrackedInstance> infer_vis(const Model& model, std::span<const Tensor> frames, const InferConfig& cfg);

/// Binary H x W masks, one per prompt, in prompt order.
std::vector<std::vector<double>> infer_interactive(const Model& model, const Tensor& image,
                                                   std::span<const VisualPrompt> prompts, const InferConfig& cfg);

/// Prompt on frame 0, decoded against the whole clip as one tube.
std::vector<std::vector<double>> infer_prompt_video(const Model& model, std::span<const Tensor> frames,
                                                    const VisualPrompt& prompt, const InferConfig& cfg);

/// Bilinear upsampling of [n x h x w] logits to [n x H x W].
Tensor upsample_logits(const Tensor& logits, std::size_t height, std::size_t width);

} // namespace rmps
