#pragma once

#include "rmps/config.hpp"
#include "rmps/prompt_codec.hpp"
#include "rmps/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rmps {

inline constexpr std::size_t kThingClasses = 3; // circle, square, triangle
inline constexpr std::size_t kStuffClasses = 2; // upper band, lower band
inline constexpr std::size_t kUpperStuffClass = 3;
inline constexpr std::size_t kLowerStuffClass = 4;

enum class ShapeKind { circle = 0, square = 1, triangle = 2 };

struct SceneConfig {
    std::size_t size = 64; // H = W
    std::size_t min_things = 1;
    std::size_t max_things = 4;
    double noise_sigma = 0.02;
    bool scale_jitter = false;

    static SceneConfig from(const RunConfig& run);
    void validate() const;
};

/// Binary mask stored as 0/1 doubles, row-major H x W.
struct EntityGT {
    std::vector<double> mask;
    std::size_t class_id = 0;
    bool is_thing = false;
    std::size_t instance_id = 0; // 0 for stuff

    std::size_t area() const;
};

struct ThingLayout {
    ShapeKind kind = ShapeKind::circle;
    double cx = 0, cy = 0; // center in pixels
    double radius = 0;     // circle radius, square half-side, triangle circumradius
    std::array<double, 3> color{};
    std::size_t instance_id = 0;
};

/// Everything needed to re-render a scene, so pseudo-video frames are exact
/// translations of the source scene.
struct SceneLayout {
    std::size_t size = 0;
    std::size_t split_row = 0; // rows [0, split) are the upper band
    std::array<double, 3> upper_color{};
    std::array<double, 3> lower_color{};
    std::vector<ThingLayout> things; // paint order, last on top
    std::vector<double> noise;       // 3 x H x W, fixed per scene
};

struct Scene {
    std::uint64_t seed = 0;
    std::size_t size = 0;
    Tensor image; // [3 x H x W] in [0, 1]
    std::vector<EntityGT> entities;
    SceneLayout layout;

    std::size_t thing_count() const;
};

struct ClipSample {
    std::vector<Scene> frames;
    std::vector<std::array<int, 2>> velocities; // per thing in layout order, (dx, dy) pixels/frame
};

struct PromptSample {
    VisualPrompt prompt;
    std::size_t entity = 0; // index into Scene::entities
    std::vector<double> target;
};

enum class PromptMode { train, test };

struct PromptSampling {
    std::vector<PromptSample> prompts;
    std::vector<std::string> warnings;
};

Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg);
/// Renders a layout (image, masks). Thing masks take the topmost shape whose
/// 4x4 supersampled coverage is at least one half.
Scene render_layout(const SceneLayout& layout, std::uint64_t seed);

/// Per-thing constant velocities from {-3..3}^2, re-drawn (deterministically)
/// until every frame keeps each thing visible and connected, falling back to
/// a static clip.
ClipSample gen_pseudo_video(const Scene& scene, std::size_t frames, std::uint64_t seed);
ClipSample translate_clip(const Scene& scene, std::size_t frames, const std::vector<std::array<int, 2>>& velocities);

/// train: up to `max_entities` random entities, each with one uniform interior
/// point and its tight box. test: one center point per entity (centroid, or
/// the distance-to-boundary maximum when the centroid is outside the mask).
PromptSampling sample_prompts(const Scene& scene, PromptMode mode, std::uint64_t seed, std::size_t max_entities = 3);

/// Interior pixel farthest (Euclidean) from any pixel outside the mask,
/// treating the image exterior as outside; ties go to the first in row-major
/// order. Returns (row, col).
std::array<std::size_t, 2> distance_transform_argmax(const std::vector<double>& mask, std::size_t height,
                                                     std::size_t width);

/// Points are pixel centers; boxes use edge coordinates (cmin, rmin, cmax+1, rmax+1).
VisualPrompt center_point_prompt(const std::vector<double>& mask, std::size_t height, std::size_t width);
VisualPrompt tight_box_prompt(const std::vector<double>& mask, std::size_t height, std::size_t width);

enum class BatchKind { panoptic, video, prompt };

std::string to_string(BatchKind kind);

struct Batch {
    BatchKind kind = BatchKind::panoptic;
    std::size_t index = 0;
    Scene scene;             // panoptic and prompt batches
    ClipSample clip;         // video batches
    std::vector<PromptSample> prompts;
};

/// Infinite deterministic stream with a cyclic type schedule: in every cycle
/// of r_pan + r_vid + r_prompt batches the types appear in that order.
class DatasetStream {
  public:
    DatasetStream(const RunConfig& cfg, std::uint64_t seed);

    Batch next();
    /// `size` samples of the type scheduled at the current position, drawn
    /// from sample indices position*size ... position*size + size-1. With
    /// size 1 this equals next().
    std::vector<Batch> next_group(std::size_t size);
    BatchKind kind_at(std::size_t index) const;
    std::size_t position() const { return index_; }
    void seek(std::size_t index) { index_ = index; }

  private:
    Batch make(BatchKind kind, std::size_t sample) const;

    SceneConfig scene_cfg_;
    std::array<std::size_t, 3> ratio_;
    std::size_t clip_frames_;
    std::size_t max_prompt_entities_;
    std::uint64_t seed_;
    std::size_t index_ = 0;
};

/// Mixes (seed, stream, index) into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Run-length encoding of a binary mask in row-major order, alternating runs
/// starting with zeros.
std::vector<std::size_t> rle_encode(const std::vector<double>& mask);
std::vector<double> rle_decode(const std::vector<std::size_t>& runs, std::size_t total);

/// Writes `<stem>.ppm` and `<stem>.gt.txt` (one entity per line:
/// class is_thing instance_id run-lengths...).
void dump_scene(const Scene& scene, const std::string& dir, const std::string& stem);

} // namespace rmps
