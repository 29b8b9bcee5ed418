#include "rmps/decoder.hpp"

#include "rmps/error.hpp"
#include "rmps/prompt_codec.hpp"

#include <algorithm>
#include <cmath>

namespace rmps {

namespace {

void check_features(const char* op, const FeatureMap& f) {
    if (!f.pixels.defined() || f.pixels.rank() != 2 || f.pixels.dim(0) != f.positions()) {
        throw DimensionError(std::string(op) + ": malformed feature map");
    }
}

// Flattens pooling weights to [n x expected] after checking their extents.
Tensor flatten_weights(const char* op, const Tensor& weights, const Shape& full, std::size_t expected) {
    if (weights.rank() == 2 && weights.dim(1) == expected) return weights;
    Shape want{weights.dim(0)};
    want.insert(want.end(), full.begin(), full.end());
    if (weights.shape() != want) {
        throw DimensionError(std::string(op) + ": weights " + shape_str(weights.shape()) + " do not match features " +
                             shape_str(full));
    }
    return reshape(weights, {weights.dim(0), expected});
}

Tensor row_gate(const Tensor& logit) { return reshape(sigmoid(logit), {1, logit.numel()}); }

} // namespace

Tensor MaskLogits::shaped() const {
    const std::size_t n = count();
    if (kind == MaskKind::tube) return reshape(logits, {n, frames, height, width});
    return reshape(logits, {n, height, width});
}

Gate Gate::init(Initializer& init, std::size_t d) { return {Linear::init(init, d, d), Norm::init(d)}; }

void Gate::collect(const std::string& prefix, ParamList& out) const {
    fc.collect(prefix + ".fc", out);
    norm.collect(prefix + ".norm", out);
}

DynamicConvWeights DynamicConvWeights::init(Initializer& init, std::size_t d) {
    DynamicConvWeights w;
    w.gate_x = Gate::init(init, d);
    w.gate_q = Gate::init(init, d);
    return w;
}

void DynamicConvWeights::collect(const std::string& prefix, ParamList& out) const {
    gate_x.collect(prefix + ".gate_x", out);
    gate_q.collect(prefix + ".gate_q", out);
}

StaticGateWeights StaticGateWeights::init(std::size_t d) { return {Tensor::zeros({d}), Tensor::zeros({d})}; }

void StaticGateWeights::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".logit_x", logit_x});
    out.push_back({prefix + ".logit_q", logit_q});
}

AttentionWeights AttentionWeights::init(Initializer& init, std::size_t d) {
    AttentionWeights w;
    w.q = Linear::init(init, d, d);
    // A key bias shifts every logit of a query equally; softmax cancels it.
    w.k = Linear::init_no_bias(init, d, d);
    w.v = Linear::init(init, d, d);
    w.o = Linear::init(init, d, d);
    return w;
}

void AttentionWeights::collect(const std::string& prefix, ParamList& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
}

CrossAttentionWeights CrossAttentionWeights::init(Initializer& init, std::size_t d, bool positional) {
    CrossAttentionWeights w;
    w.attn = AttentionWeights::init(init, d);
    if (positional) w.pe_proj = Linear::init_no_bias(init, d, d);
    return w;
}

void CrossAttentionWeights::collect(const std::string& prefix, ParamList& out) const {
    attn.collect(prefix, out);
    if (pe_proj) pe_proj->collect(prefix + ".pe", out);
}

MaskLogits predict_masks(const Tensor& queries, const FeatureMap& features, const Linear& proj, MaskKind kind,
                         std::size_t stage) {
    check_features("predict_masks", features);
    if (queries.rank() != 2 || queries.dim(1) != proj.in() || proj.out() != features.channels) {
        throw DimensionError("predict_masks: queries " + shape_str(queries.shape()) + " vs features with " +
                             std::to_string(features.channels) + " channels");
    }
    MaskLogits m;
    m.kind = kind;
    m.stage = stage;
    m.frames = features.frames;
    m.height = features.height;
    m.width = features.width;
    m.logits = matmul(proj(queries), transpose(features.pixels));
    return m;
}

Tensor mask_pool_image(const Tensor& weights, const FeatureMap& features) {
    check_features("mask_pool_image", features);
    if (features.mode != FeatureMode::image) throw DimensionError("mask_pool_image: features are a video map");
    Tensor w = flatten_weights("mask_pool_image", weights, {features.height, features.width}, features.plane());
    return matmul(w, features.pixels);
}

Tensor mask_pool_video(const Tensor& weights, const FeatureMap& features) {
    check_features("mask_pool_video", features);
    Tensor w = flatten_weights("mask_pool_video", weights, {features.frames, features.height, features.width},
                               features.positions());
    return matmul(w, features.pixels);
}

Tensor mask_pool(const MaskLogits& previous, const FeatureMap& features) {
    Tensor w = sigmoid(previous.logits);
    if (features.mode == FeatureMode::image) return mask_pool_image(w, features);
    return mask_pool_video(w, features);
}

Tensor gated_dynamic_conv(const Tensor& pooled, const Tensor& q_prev, const DynamicConvWeights& w,
                          std::optional<GateOverride> override_gates) {
    if (pooled.shape() != q_prev.shape() || pooled.rank() != 2) {
        throw DimensionError("gated_dynamic_conv: pooled " + shape_str(pooled.shape()) + " vs queries " +
                             shape_str(q_prev.shape()));
    }
    if (override_gates) {
        return add(scale(pooled, override_gates->g_x), scale(q_prev, override_gates->g_q));
    }
    return add(mul(w.gate_x(pooled), pooled), mul(w.gate_q(pooled), q_prev));
}

Tensor static_gated_conv(const Tensor& pooled, const Tensor& q_prev, const StaticGateWeights& w) {
    if (pooled.shape() != q_prev.shape() || pooled.rank() != 2) {
        throw DimensionError("static_gated_conv: pooled " + shape_str(pooled.shape()) + " vs queries " +
                             shape_str(q_prev.shape()));
    }
    // [1 x d] gates tile over rows.
    return add(mul(pooled, row_gate(w.logit_x)), mul(q_prev, row_gate(w.logit_q)));
}

namespace {

// Fixed sine grid encoding for attention keys. Bands that alias to a
// constant on this grid would shift every key of a query equally, which the
// softmax cancels, so they are zeroed instead of left as dead weights.
Tensor key_positional_encoding(std::size_t height, std::size_t width, std::size_t d) {
    Tensor pe = grid_positional_encoding(height, width, d);
    auto v = pe.mutable_data();
    const std::size_t rows = height * width;
    for (std::size_t c = 0; c < d; ++c) {
        double lo = v[c], hi = v[c];
        for (std::size_t r = 1; r < rows; ++r) {
            lo = std::min(lo, v[r * d + c]);
            hi = std::max(hi, v[r * d + c]);
        }
        if (hi - lo < 1e-9)
            for (std::size_t r = 0; r < rows; ++r) v[r * d + c] = 0.0;
    }
    return pe;
}

} // namespace

Tensor cross_attention_values(const Tensor& queries, const FeatureMap& features, const CrossAttentionWeights& w) {
    check_features("cross_attention_values", features);
    const std::size_t d = features.channels;
    if (queries.rank() != 2 || queries.dim(1) != d) {
        throw DimensionError("cross_attention_values: queries " + shape_str(queries.shape()) + " vs width " +
                             std::to_string(d));
    }
    Tensor key_in = features.pixels;
    if (w.pe_proj) {
        Tensor pe = key_positional_encoding(features.height, features.width, d);
        if (features.frames > 1) {
            std::vector<Tensor> tiles(features.frames, pe);
            pe = concat_rows(tiles);
        }
        key_in = add(key_in, (*w.pe_proj)(pe));
    }
    Tensor q = w.attn.q(queries);
    Tensor k = w.attn.k(key_in);
    Tensor v = w.attn.v(features.pixels);
    Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d)));
    return matmul(softmax(logits, -1), v);
}

Tensor cross_attend(const Tensor& queries, const FeatureMap& features, const CrossAttentionWeights& w) {
    return add(queries, w.attn.o(cross_attention_values(queries, features, w)));
}

Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads) {
    if (x.rank() != 2) throw DimensionError("multi_head_self_attention: expected [n x d], got " + shape_str(x.shape()));
    const std::size_t d = x.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const double s = 1.0 / std::sqrt(double(dh));
    Tensor q = w.q(x), k = w.k(x), v = w.v(x);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor att = softmax(scale(matmul(qh, transpose(kh)), s), -1);
        outs.push_back(matmul(att, vh));
    }
    return w.o(concat_cols(outs));
}

Tensor query_mix(const Tensor& q_hat, const AttentionWeights& mhsa, const Ffn& ffn, std::size_t heads,
                 bool residual) {
    Tensor a = add(multi_head_self_attention(q_hat, mhsa, heads), q_hat);
    Tensor out = ffn(a);
    return residual ? add(a, out) : out;
}

Tensor classify(const Tensor& queries, const Ffn& classifier) { return classifier(queries); }

DecoderWeights DecoderWeights::init(Initializer& init, const ModelConfig& cfg, bool with_classifier,
                                    PromptMix mix) {
    const std::size_t d = cfg.d;
    DecoderWeights w;
    w.kind = cfg.decoder;
    w.heads = cfg.heads;
    w.mix_residual = cfg.mix_residual;
    w.prompt_mix = mix;
    for (auto& st : w.stages) {
        switch (w.kind) {
        case DecoderKind::pool_dcg: st.dc = DynamicConvWeights::init(init, d); break;
        case DecoderKind::pool_dc: st.static_dc = StaticGateWeights::init(d); break;
        case DecoderKind::per_pixel_ca: st.ca = CrossAttentionWeights::init(init, d, false); break;
        }
        st.mhsa = AttentionWeights::init(init, d);
        st.ffn = Ffn::init(init, d, cfg.ffn_hidden(), d);
    }
    for (auto& head : w.heads_out) {
        head.mask_embed = Linear::init(init, d, d);
        if (with_classifier) head.classifier = Ffn::init(init, d, d, cfg.num_classes() + 1);
    }
    return w;
}

void DecoderWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        const std::string p = prefix + ".stage" + std::to_string(s + 1);
        switch (kind) {
        case DecoderKind::pool_dcg: st.dc.collect(p + ".dc", out); break;
        case DecoderKind::pool_dc: st.static_dc.collect(p + ".static_dc", out); break;
        case DecoderKind::per_pixel_ca: st.ca.collect(p + ".ca", out); break;
        }
        st.mhsa.collect(p + ".mhsa", out);
        st.ffn.collect(p + ".ffn", out);
    }
    for (std::size_t h = 0; h < heads_out.size(); ++h) {
        const std::string p = prefix + ".head" + std::to_string(h);
        heads_out[h].mask_embed.collect(p + ".mask_embed", out);
        if (heads_out[h].classifier) heads_out[h].classifier->collect(p + ".classifier", out);
    }
}

namespace {

Tensor update_queries(const DecoderWeights& w, const DecoderStageWeights& st, const Tensor& q,
                      const MaskLogits& previous, const FeatureMap& features) {
    switch (w.kind) {
    case DecoderKind::pool_dcg: return gated_dynamic_conv(mask_pool(previous, features), q, st.dc);
    case DecoderKind::pool_dc: return static_gated_conv(mask_pool(previous, features), q, st.static_dc);
    case DecoderKind::per_pixel_ca: return cross_attend(q, features, st.ca);
    }
    throw ContractError("unknown decoder kind");
}

StagePrediction predict(const DecoderWeights& w, std::size_t stage, const QuerySet& q, const FeatureMap& features) {
    const auto& head = w.heads_out[stage];
    const MaskKind object_kind = features.mode == FeatureMode::video ? MaskKind::tube : MaskKind::pan;
    StagePrediction p;
    p.stage = stage;
    p.queries = q;
    if (q.n() > 0) {
        p.object_masks = predict_masks(q.objects, features, head.mask_embed, object_kind, stage);
        if (head.classifier) p.class_logits = classify(q.objects, *head.classifier);
    }
    if (q.k() > 0) {
        p.prompt_masks = predict_masks(q.prompts, features, head.mask_embed,
                                       features.mode == FeatureMode::video ? MaskKind::tube : MaskKind::iter, stage);
    }
    return p;
}

} // namespace

DecoderOutput decoder_forward(const FeatureMap& features, const QuerySet& init, const DecoderWeights& w) {
    check_features("decoder_forward", features);
    if (init.n() == 0 && init.k() == 0) throw InputError("decoder_forward: no queries");
    DecoderOutput out;
    out.stages.push_back(predict(w, 0, init, features));
    for (std::size_t s = 0; s < kDecoderStages; ++s) {
        const auto& st = w.stages[s];
        const StagePrediction& prev = out.stages.back();
        QuerySet next;
        Tensor q_hat, p_hat;
        if (prev.queries.n() > 0) q_hat = update_queries(w, st, prev.queries.objects, *prev.object_masks, features);
        if (prev.queries.k() > 0) p_hat = update_queries(w, st, prev.queries.prompts, *prev.prompt_masks, features);

        if (q_hat.defined() && p_hat.defined() && w.prompt_mix == PromptMix::joint) {
            const std::size_t n = q_hat.dim(0), k = p_hat.dim(0);
            std::array<Tensor, 2> parts{q_hat, p_hat};
            Tensor mixed = query_mix(concat_rows(parts), st.mhsa, st.ffn, w.heads, w.mix_residual);
            next.objects = slice_rows(mixed, 0, n);
            next.prompts = slice_rows(mixed, n, k);
        } else {
            if (q_hat.defined()) next.objects = query_mix(q_hat, st.mhsa, st.ffn, w.heads, w.mix_residual);
            if (p_hat.defined()) {
                switch (w.prompt_mix) {
                case PromptMix::skip: next.prompts = p_hat; break;
                case PromptMix::joint:
                    next.prompts = query_mix(p_hat, st.mhsa, st.ffn, w.heads, w.mix_residual);
                    break;
                case PromptMix::independent: {
                    std::vector<Tensor> rows;
                    for (std::size_t i = 0; i < p_hat.dim(0); ++i) {
                        rows.push_back(query_mix(slice_rows(p_hat, i, 1), st.mhsa, st.ffn, w.heads, w.mix_residual));
                    }
                    next.prompts = concat_rows(rows);
                    break;
                }
                }
            }
        }
        out.stages.push_back(predict(w, s + 1, next, features));
    }
    return out;
}

} // namespace rmps
