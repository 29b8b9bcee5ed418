#pragma once

#include "rmps/config.hpp"
#include "rmps/model.hpp"
#include "rmps/synth_data.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rmps {

/// AdamW moments keyed by parameter name.
struct OptimizerState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// Learning rate for 1-based step `step`: linear warmup over `warmup` steps,
/// then x0.1 from decay_at[0]*steps and x0.01 from decay_at[1]*steps.
double learning_rate(const TrainConfig& cfg, std::size_t step);

/// Stride-4 targets for one batch.
LossTargets panoptic_targets(const Scene& scene, MaskTargetRule rule = MaskTargetRule::nearest,
                             std::size_t stride = FeatureMap::stride);
/// One tube per entity (things by instance id, stuff by class) across all frames.
LossTargets video_targets(const ClipSample& clip, MaskTargetRule rule = MaskTargetRule::nearest,
                          std::size_t stride = FeatureMap::stride);
LossTargets prompt_targets(const std::vector<PromptSample>& prompts, std::size_t size,
                           MaskTargetRule rule = MaskTargetRule::nearest, std::size_t stride = FeatureMap::stride);

/// Forward pass and loss for one single-type batch; leaves the tape ready
/// for backward.
LossResult batch_loss(const Model& model, const Batch& batch, const LossWeights& weights);

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    BatchKind kind = BatchKind::panoptic;
};

/// Decoupled-weight-decay Adam step; weight decay applies to tensors of rank >= 2.
void adamw_update(Model& model, OptimizerState& state, const TrainConfig& cfg, double lr);

/// One optimizer step on the mean loss of `group`, whose samples all share
/// one data type.
StepResult train_step(Model& model, std::span<const Batch> group, OptimizerState& state, const RunConfig& cfg);
StepResult train_step(Model& model, const Batch& batch, OptimizerState& state, const RunConfig& cfg);

using StepCallback = std::function<void(std::size_t step, const StepResult&)>;

/// Runs `steps` steps from the state's current step, drawing cfg.train.batch
/// samples per step from a stream seeded with cfg.train.seed positioned at
/// that step.
std::vector<StepResult> train(Model& model, OptimizerState& state, const RunConfig& cfg, std::size_t steps,
                              const StepCallback& callback = {});

} // namespace rmps
