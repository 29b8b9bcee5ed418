#include "doctest.h"
#include "helpers.hpp"

#include "rmps/error.hpp"
#include "rmps/flops.hpp"
#include "rmps/latency.hpp"
#include "rmps/model.hpp"

#include <numeric>

using namespace rmps;
using namespace rmps::testing;

namespace {

ModelConfig bench_cfg(MetaArch arch = MetaArch::c) {
    ModelConfig c;
    c.d = 64;
    c.n_queries = 20;
    c.arch = arch;
    c.adapter = {AdapterKind::dc, AdapterKind::ca};
    return c;
}

// Per-stage query update from the stated formulas, written out term by term.
std::uint64_t update_oracle(DecoderKind kind, std::uint64_t n, std::uint64_t hw, std::uint64_t d) {
    const std::uint64_t pool = 2 * n * hw * d;
    const std::uint64_t combine = 3 * n * d;
    if (kind == DecoderKind::pool_dc) return pool + combine;
    if (kind == DecoderKind::pool_dcg) return pool + 2 * (2 * n * d * d) + combine;
    // q projection, k and v projections over pixels, logits, weighted values, output projection.
    return 2 * n * d * d + 2 * (2 * hw * d * d) + 2 * n * hw * d + 2 * n * hw * d + 2 * n * d * d;
}

} // namespace

TEST_CASE("FLOP convention") {
    CHECK(matmul_flops(2, 3, 4) == 48);
    CHECK(conv_flops(3, 2, 5, 4, 4) == 2 * 9 * 2 * 5 * 16);
}

TEST_CASE("query update counts follow the formulas") {
    for (auto kind : {DecoderKind::pool_dc, DecoderKind::pool_dcg, DecoderKind::per_pixel_ca})
        for (std::uint64_t hw : {16, 256, 1024}) CHECK(query_update_flops(kind, 20, hw, 64) == update_oracle(kind, 20, hw, 64));
}

TEST_CASE("decoder ordering at the benchmark configuration") {
    const ModelConfig cfg = bench_cfg();
    // 64 x 64 input -> 16 x 16 stride-4 features.
    for (std::size_t scale : {1, 2}) {
        const std::size_t side = 64 * scale;
        const auto ca = count_flops(cfg, DecoderKind::per_pixel_ca, side, side);
        const auto dcg = count_flops(cfg, DecoderKind::pool_dcg, side, side);
        const auto dc = count_flops(cfg, DecoderKind::pool_dc, side, side);
        CHECK(ca.decoder > dcg.decoder);
        CHECK(dcg.decoder > dc.decoder);
        CHECK(ca.component("decoder.stage1") > dcg.component("decoder.stage1"));
        // Only the two gate projections separate the pooled variants.
        const std::uint64_t n = cfg.n_queries, d = cfg.d;
        CHECK(dcg.component("decoder.stage2") - dc.component("decoder.stage2") == 2 * (2 * n * d * d));
        CHECK(dcg.decoder - dc.decoder == 3 * 2 * (2 * n * d * d));
        CHECK(ca.backbone == dc.backbone);
    }
}

TEST_CASE("report totals equal the component sum") {
    for (auto arch : {MetaArch::a, MetaArch::b, MetaArch::c, MetaArch::d})
        for (std::size_t k : {0, 3}) {
            const auto r = count_flops(bench_cfg(arch), DecoderKind::pool_dcg, 64, 64, 2, k);
            std::uint64_t sum = 0;
            for (const auto& [name, v] : r.components) sum += v;
            CHECK(sum == r.total);
            CHECK(r.total == r.backbone + r.decoder + r.adapters);
            CHECK(r.params == analytic_param_count(bench_cfg(arch)));
        }
}

TEST_CASE("linear layer parameters") {
    Initializer init(1);
    ParamList ps;
    Linear::init(init, 64, 64).collect("l", ps);
    CHECK(total_elements(ps) == 64 * 64 + 64);
}

TEST_CASE("meta-architecture parameter ordering") {
    std::array<std::uint64_t, 4> p{};
    const MetaArch archs[] = {MetaArch::a, MetaArch::b, MetaArch::c, MetaArch::d};
    for (std::size_t i = 0; i < 4; ++i) {
        ModelConfig cfg = bench_cfg(archs[i]);
        p[i] = analytic_param_count(cfg);
        CHECK(count_params(build_model(cfg, 1)) == p[i]);
    }
    CHECK(p[0] < p[2]);
    CHECK(p[2] < p[1]);
    CHECK(p[1] < p[3]);

    ModelConfig none = bench_cfg(MetaArch::c);
    none.adapter = {AdapterKind::none, AdapterKind::none};
    CHECK(analytic_param_count(none) == p[0]);
}

TEST_CASE("median and nearest-rank percentile") {
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 3, 2}) == 2.5);
    std::vector<double> s(20);
    std::iota(s.begin(), s.end(), 1.0);
    CHECK(percentile_nearest_rank(s, 0.9) == 18.0);
    CHECK(percentile_nearest_rank({5.0}, 0.9) == 5.0);
}

TEST_CASE("latency harness contract") {
    std::size_t calls = 0;
    LatencyReport r = measure_latency([&] { ++calls; }, 20, 5);
    CHECK(calls == 25);
    CHECK(r.samples_ms.size() == 20);
    CHECK(r.median_ms <= r.p90_ms);
    CHECK(r.threads >= 1);
    CHECK_FALSE(r.build_mode.empty());
    CHECK_THROWS_AS(measure_latency([] {}, 19, 5), InputError);
    CHECK_THROWS_AS(measure_latency([] {}, 20, 4), InputError);
}

TEST_CASE("repeated medians are stable") {
    std::mt19937_64 rng(1);
    Tensor a = random_tensor(rng, {96, 96}), b = random_tensor(rng, {96, 96});
    auto work = [&] {
        NoGradGuard g;
        volatile double sink = matmul(a, b)[0];
        (void)sink;
    };
    const double m1 = measure_latency(work, 40, 10).median_ms;
    const double m2 = measure_latency(work, 40, 10).median_ms;
    INFO("m1=" << m1 << " m2=" << m2);
    CHECK(std::fabs(m1 - m2) <= 0.25 * m1);
}
