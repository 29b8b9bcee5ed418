#include "rmps/latency.hpp"

#include "rmps/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace rmps {

double median(std::vector<double> s) {
    if (s.empty()) return 0.0;
    std::sort(s.begin(), s.end());
    const std::size_t n = s.size();
    return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

double percentile_nearest_rank(std::vector<double> s, double q) {
    if (s.empty()) return 0.0;
    std::sort(s.begin(), s.end());
    const auto rank = std::size_t(std::ceil(q * double(s.size())));
    return s[std::clamp<std::size_t>(rank, 1, s.size()) - 1];
}

std::string build_mode() {
#ifdef NDEBUG
    return "release";
#else
    return "debug";
#endif
}

LatencyReport measure_latency(const std::function<void()>& fn, std::size_t iterations, std::size_t warmup) {
    if (iterations < 20) throw InputError("measure_latency: at least 20 timed iterations required");
    if (warmup < 5) throw InputError("measure_latency: at least 5 warmup iterations required");
    LatencyReport r;
    r.warmup = warmup;
    r.iterations = iterations;
    r.threads = std::size_t(Eigen::nbThreads());
    r.build_mode = build_mode();
    for (std::size_t i = 0; i < warmup; ++i) fn();
    for (std::size_t i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    r.median_ms = median(r.samples_ms);
    r.p90_ms = percentile_nearest_rank(r.samples_ms, 0.9);
    return r;
}

LatencyReport measure_decoder_latency(const Model& model, const FeatureMap& features, std::size_t iterations,
                                      std::size_t warmup) {
    return measure_latency(
        [&] {
            NoGradGuard guard;
            ModelOutput out = model_forward(model, features, true, {});
            (void)out;
        },
        iterations, warmup);
}

LatencyReport measure_model_latency(const Model& model, const Tensor& image, std::size_t iterations, std::size_t warmup) {
    return measure_latency(
        [&] {
            NoGradGuard guard;
            ModelOutput out = model_forward(model, model_features(model, image), true, {});
            (void)out;
        },
        iterations, warmup);
}

} // namespace rmps
