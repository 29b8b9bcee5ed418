#pragma once

#include "rmps/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rmps {

struct LatencyReport {
    std::size_t warmup = 0;
    std::size_t iterations = 0;
    std::vector<double> samples_ms;
    double median_ms = 0.0;
    double p90_ms = 0.0;
    std::size_t threads = 1;
    std::string build_mode;
};

/// Median of the samples (mean of the middle pair for even counts) and
/// nearest-rank 90th percentile.
double median(std::vector<double> samples);
double percentile_nearest_rank(std::vector<double> samples, double q);

/// Times `fn` after `warmup` untimed calls. Throws InputError for fewer than
/// 20 timed iterations or 5 warmups.
LatencyReport measure_latency(const std::function<void()>& fn, std::size_t iterations, std::size_t warmup);

/// Decoder-and-adapter forward on fixed features, without the tape.
LatencyReport measure_decoder_latency(const Model& model, const FeatureMap& features, std::size_t iterations,
                                      std::size_t warmup);
/// Backbone plus decoder on one image, without the tape.
LatencyReport measure_model_latency(const Model& model, const Tensor& image, std::size_t iterations, std::size_t warmup);

std::string build_mode();

} // namespace rmps
