#pragma once

#include "rmps/config.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace rmps {

/// FLOPs are 2 x multiply-adds. Norms, activations, softmax, bias adds and
/// resampling are not counted.
std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n);
std::uint64_t conv_flops(std::uint64_t k, std::uint64_t cin, std::uint64_t cout, std::uint64_t out_h, std::uint64_t out_w);

struct FlopsReport {
    std::vector<std::pair<std::string, std::uint64_t>> components;
    std::uint64_t backbone = 0;
    std::uint64_t decoder = 0;
    std::uint64_t adapters = 0;
    std::uint64_t total = 0;
    std::uint64_t params = 0; // analytic parameter count of the configured model

    std::uint64_t component(const std::string& name) const;
};

/// Query update of one decoder stage for n queries over `positions` pixels.
std::uint64_t query_update_flops(DecoderKind kind, std::uint64_t n, std::uint64_t positions, std::uint64_t d);
/// Full stage: query update, self-attention, FFN, mask prediction and classifier.
std::uint64_t decoder_stage_flops(DecoderKind kind, std::uint64_t n, std::uint64_t positions, std::uint64_t d,
                                  std::uint64_t classes_plus_one);

/// Analytic counts for `cfg` with its decoder replaced by `kind`, on a
/// height x width input of `frames` frames with `prompts` prompt queries.
FlopsReport count_flops(const ModelConfig& cfg, DecoderKind kind, std::size_t height, std::size_t width,
                        std::size_t frames = 1, std::size_t prompts = 0);

/// Closed-form parameter count, independent of any built model.
std::uint64_t analytic_param_count(const ModelConfig& cfg);
std::uint64_t analytic_backbone_params(const ModelConfig& cfg);

} // namespace rmps
