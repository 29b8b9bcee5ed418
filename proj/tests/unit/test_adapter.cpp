#include "doctest.h"
#include "helpers.hpp"

#include "rmps/adapter.hpp"
#include "rmps/flops.hpp"
#include "rmps/model.hpp"

using namespace rmps;
using namespace rmps::testing;

namespace {

struct Fixture {
    std::mt19937_64 rng{21};
    std::size_t d = 8;
    FeatureMap f = make_image_features(random_tensor(rng, {36, 8}), 6, 6);
    Tensor q = random_tensor(rng, {4, 8});
    MaskLogits masks = predict_masks(q, f, Linear{Tensor::full({8, 8}, 0.1), Tensor::zeros({8})}, MaskKind::pan);
};

} // namespace

TEST_CASE("none is the identity") {
    Fixture fx;
    Initializer init(1);
    AdapterWeights w = AdapterWeights::init(init, fx.d, {AdapterKind::none, AdapterKind::none});
    CHECK(bit_identical(adapt_object(fx.q, fx.masks, fx.f, w), fx.q));
    CHECK(bit_identical(adapt_prompt(fx.q, fx.masks, fx.f, w), fx.q));
    ParamList ps;
    w.collect("adapter", ps);
    CHECK(ps.empty());
}

TEST_CASE("DC with pass-through gates is the identity") {
    Fixture fx;
    Initializer init(2);
    AdapterWeights w = AdapterWeights::init(init, fx.d, {AdapterKind::dc, AdapterKind::dc});
    CHECK(bit_identical(adapt_object(fx.q, fx.masks, fx.f, w, GateOverride{0.0, 1.0}), fx.q));
    CHECK(bit_identical(adapt_prompt(fx.q, fx.masks, fx.f, w, GateOverride{0.0, 1.0}), fx.q));
}

TEST_CASE("CA with equal keys returns the pixel-mean value") {
    Fixture fx;
    Initializer init(3);
    AdapterWeights w = AdapterWeights::init(init, fx.d, {AdapterKind::ca, AdapterKind::ca});
    // Zero key weights and PE projection: every logit is 0.
    for (auto& v : w.obj_ca.attn.k.weight.mutable_data()) v = 0.0;
    for (auto& v : w.obj_ca.pe_proj->weight.mutable_data()) v = 0.0;
    Tensor got = cross_attention_values(fx.q, fx.f, w.obj_ca);
    Tensor values = w.obj_ca.attn.v(fx.f.pixels);
    for (std::size_t c = 0; c < fx.d; ++c) {
        double m = 0.0;
        for (std::size_t p = 0; p < 36; ++p) m += values[p * fx.d + c];
        m /= 36;
        for (std::size_t r = 0; r < 4; ++r) CHECK(std::fabs(got[r * fx.d + c] - m) <= 1e-12);
    }
}

TEST_CASE("CA saturates on one dominant key") {
    const std::size_t d = 8;
    std::mt19937_64 rng(4);
    Tensor pixels = random_tensor(rng, {25, d}, 0.1);
    // Pixel 7 aligns with the query direction far more than any other.
    for (std::size_t c = 0; c < d; ++c) pixels.mutable_data()[7 * d + c] = 20.0;
    FeatureMap f = make_image_features(pixels, 5, 5);
    Initializer init(5);
    CrossAttentionWeights ca = CrossAttentionWeights::init(init, d, false);
    for (auto* l : {&ca.attn.q, &ca.attn.k, &ca.attn.v}) {
        for (auto& v : l->weight.mutable_data()) v = 0.0;
        for (std::size_t i = 0; i < d; ++i) l->weight.mutable_data()[i * d + i] = 1.0;
        if (l->bias.defined())
            for (auto& v : l->bias.mutable_data()) v = 0.0;
    }
    Tensor prompt = Tensor::full({1, d}, 1.0);
    // Logit margin: (20 - ~0.3) * 8 / sqrt(8) > 50.
    Tensor out = cross_attention_values(prompt, f, ca);
    for (std::size_t c = 0; c < d; ++c) CHECK(std::fabs(out[c] - 20.0) <= 1e-6);
}

TEST_CASE("prompt rows are adapted independently") {
    Fixture fx;
    Initializer init(6);
    AdapterWeights w = AdapterWeights::init(init, fx.d, {AdapterKind::dc, AdapterKind::ca});
    Tensor all = adapt_prompt(fx.q, fx.masks, fx.f, w);
    const std::size_t keep[] = {0, 2, 3};
    MaskLogits sub = fx.masks;
    sub.logits = index_rows(fx.masks.logits, keep);
    Tensor without = adapt_prompt(index_rows(fx.q, keep), sub, fx.f, w);
    CHECK(bit_identical(slice_rows(all, 0, 1), slice_rows(without, 0, 1)));
    CHECK(bit_identical(slice_rows(all, 2, 1), slice_rows(without, 1, 1)));
}

TEST_CASE("adapter parameters match the closed form") {
    for (AdapterVariant v : {AdapterVariant{AdapterKind::none, AdapterKind::none}, AdapterVariant{AdapterKind::dc, AdapterKind::ca},
                             AdapterVariant{AdapterKind::ca, AdapterKind::dc}, AdapterVariant{AdapterKind::ca, AdapterKind::ca},
                             AdapterVariant{AdapterKind::dc, AdapterKind::dc}}) {
        ModelConfig cfg;
        cfg.d = 16;
        cfg.channels = {4, 8, 8, 16};
        cfg.adapter = v;
        cfg.arch = MetaArch::c;
        Model m = build_model(cfg, 1);
        CHECK(count_params(m) == analytic_param_count(cfg));
    }
}
