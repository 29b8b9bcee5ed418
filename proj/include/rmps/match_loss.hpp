#pragma once

#include "rmps/config.hpp"
#include "rmps/hungarian.hpp"
#include "rmps/tensor.hpp"

#include <span>
#include <vector>

namespace rmps {

/// Ground truth at feature resolution. Masks are rows in [0, 1] over the
/// flattened (frames x h x w) positions of the predictions they supervise.
struct LossTargets {
    Tensor masks;                     // [G x P]; undefined when G = 0
    std::vector<std::size_t> classes; // G entries
    Tensor prompt_masks;              // [K x P]; undefined without prompts

    std::size_t count() const { return classes.size(); }
};

/// Predictions of one supervision point. Undefined tensors mean the branch
/// did not run.
struct PredictionSet {
    Tensor class_logits; // [N x C+1]
    Tensor object_masks; // [N x P]
    Tensor prompt_masks; // [K x P]
};

/// Nearest-neighbour downsampling of an H x W mask by `stride`, sampling
/// pixel (stride*u + stride/2, stride*v + stride/2).
std::vector<double> downsample_nearest(std::span<const double> mask, std::size_t height, std::size_t width,
                                       std::size_t stride);

/// Fraction of each stride x stride cell covered by the mask.
std::vector<double> downsample_area(std::span<const double> mask, std::size_t height, std::size_t width,
                                    std::size_t stride);

std::vector<double> downsample_mask(std::span<const double> mask, std::size_t height, std::size_t width,
                                    std::size_t stride, MaskTargetRule rule);

/// Mean binary cross-entropy with logits over all pixels.
Tensor mask_ce_loss(const Tensor& logits, const Tensor& target);

/// Weighted mean softmax cross-entropy. Queries labelled `no_object` carry
/// weight `no_object_weight`, all others weight 1.
Tensor cls_loss(const Tensor& logits, std::span<const std::size_t> labels, std::size_t no_object,
                double no_object_weight);

/// cost[i, j] = cls * (-softmax(logits_i)[class_j]) + ce * CE(mask_i, gt_j) + dice * Dice(mask_i, gt_j).
CostMatrix build_cost_matrix(const Tensor& class_logits, const Tensor& mask_logits, const LossTargets& targets,
                             const LossWeights& weights);

struct LossTerms {
    double cls = 0.0;
    double ce = 0.0;
    double dice = 0.0;
    double prompt_ce = 0.0;
    double prompt_dice = 0.0;
};

struct LossResult {
    Tensor total;                         // scalar on tape
    std::vector<LossTerms> per_stage;     // unweighted components
    std::vector<Assignment> assignments;  // one per supervised stage with objects
};

/// Loss of one supervision point: Hungarian matching for objects, fixed
/// prompt-to-target pairing for prompts (mask terms only).
Tensor stage_loss(const PredictionSet& pred, const LossTargets& targets, const LossWeights& weights,
                  LossTerms* terms = nullptr, Assignment* assignment = nullptr);

/// Mean of stage_loss over every supervision point.
LossResult total_loss(std::span<const PredictionSet> stages, const LossTargets& targets, const LossWeights& weights);

} // namespace rmps
