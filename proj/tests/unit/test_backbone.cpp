#include "doctest.h"
#include "helpers.hpp"

#include "rmps/backbone.hpp"
#include "rmps/flops.hpp"

using namespace rmps;
using namespace rmps::testing;

namespace {

ModelConfig toy() {
    ModelConfig cfg;
    cfg.d = 64;
    cfg.image_size = 64;
    return cfg;
}

std::size_t backbone_params(const BackboneWeights& w) {
    ParamList ps;
    w.collect("backbone", ps);
    return total_elements(ps);
}

} // namespace

TEST_CASE("64x64 input gives a 16x16x64 map") {
    Initializer init(1);
    BackboneWeights w = BackboneWeights::init(init, toy());
    std::mt19937_64 rng(2);
    FeatureMap f = backbone_forward(random_uniform(rng, {3, 64, 64}, 0.0, 1.0), w);
    CHECK(f.mode == FeatureMode::image);
    CHECK(f.height == 16);
    CHECK(f.width == 16);
    CHECK(f.channels == 64);
    CHECK(f.data().shape() == Shape{16, 16, 64});
}

TEST_CASE("zero image with zero biases gives a zero map") {
    Initializer init(3);
    BackboneWeights w = BackboneWeights::init(init, toy());
    ParamList ps;
    w.collect("backbone", ps);
    for (auto& p : ps)
        if (p.name.ends_with(".bias") || p.name.ends_with(".beta"))
            for (auto& v : p.tensor.mutable_data()) v = 0.0;
    FeatureMap f = backbone_forward(Tensor::zeros({3, 64, 64}), w);
    for (double v : f.pixels.data()) CHECK(v == 0.0);
}

TEST_CASE("parameter count matches the closed form") {
    Initializer init(4);
    const ModelConfig cfg = toy();
    CHECK(backbone_params(BackboneWeights::init(init, cfg)) == analytic_backbone_params(cfg));
    ModelConfig small = cfg;
    small.d = 16;
    small.channels = {4, 8, 8, 16};
    CHECK(backbone_params(BackboneWeights::init(init, small)) == analytic_backbone_params(small));
}

TEST_CASE("video backbone is per-frame") {
    Initializer init(5);
    BackboneWeights w = BackboneWeights::init(init, toy());
    std::mt19937_64 rng(6);
    Tensor frame = random_uniform(rng, {3, 64, 64}, 0.0, 1.0);
    FeatureMap single = backbone_forward(frame, w);

    FeatureMap one = backbone_forward_video(reshape(frame, {1, 3, 64, 64}), w);
    CHECK(one.mode == FeatureMode::video);
    CHECK(bit_identical(one.pixels, single.pixels));

    const Tensor frames[] = {frame, frame};
    Tensor clip = reshape(concat_rows(frames), {2, 3, 64, 64});
    FeatureMap two = backbone_forward_video(clip, w);
    CHECK(two.frames == 2);
    CHECK(two.data().shape() == Shape{2, 16, 16, 64});
    CHECK(bit_identical(two.frame(0).pixels, two.frame(1).pixels));
    CHECK(bit_identical(two.frame(1).pixels, single.pixels));
}

TEST_CASE("channel norm normalizes each pixel over channels") {
    std::mt19937_64 rng(7);
    Tensor x = random_tensor(rng, {5, 3, 4}, 3.0);
    Norm n = Norm::init(5);
    Tensor y = channel_norm(x, n);
    for (std::size_t p = 0; p < 12; ++p) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 5; ++c) m += y[c * 12 + p];
        m /= 5;
        for (std::size_t c = 0; c < 5; ++c) v += (y[c * 12 + p] - m) * (y[c * 12 + p] - m);
        CHECK(std::fabs(m) < 1e-12);
        CHECK(v / 5 == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("rejects inputs that are not 3-channel") {
    Initializer init(8);
    BackboneWeights w = BackboneWeights::init(init, toy());
    CHECK_THROWS(backbone_forward(Tensor::zeros({1, 64, 64}), w));
}
