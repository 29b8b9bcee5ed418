#pragma once

#include "rmps/backbone.hpp"
#include "rmps/config.hpp"
#include "rmps/layers.hpp"
#include "rmps/tensor.hpp"

#include <array>
#include <optional>
#include <vector>

namespace rmps {

enum class MaskKind { pan, iter, tube };

/// Mask logits flattened to [n x frames*h*w]; `shaped()` restores
/// [n x h x w] or [n x T x h x w].
struct MaskLogits {
    MaskKind kind = MaskKind::pan;
    std::size_t stage = 0;
    std::size_t frames = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    Tensor logits;

    std::size_t count() const { return logits.dim(0); }
    Tensor shaped() const;
};

struct QuerySet {
    Tensor objects; // [N x d]; undefined when the pass has no object branch
    Tensor prompts; // [K x d]; undefined when K = 0

    std::size_t n() const { return objects.defined() ? objects.dim(0) : 0; }
    std::size_t k() const { return prompts.defined() ? prompts.dim(0) : 0; }
};

/// Gate(X) = sigmoid(LN(FC(X))).
struct Gate {
    Linear fc;
    Norm norm;

    static Gate init(Initializer& init, std::size_t d);
    Tensor operator()(const Tensor& x) const { return sigmoid(norm(fc(x))); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct DynamicConvWeights {
    Gate gate_x;
    Gate gate_q;

    static DynamicConvWeights init(Initializer& init, std::size_t d);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Input-independent per-channel gates sigmoid(a), sigmoid(b) used by the
/// pool_dc ablation.
struct StaticGateWeights {
    Tensor logit_x; // [d]
    Tensor logit_q; // [d]

    static StaticGateWeights init(std::size_t d);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct AttentionWeights {
    Linear q, k, v, o;

    static AttentionWeights init(Initializer& init, std::size_t d);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Single-head cross-attention from queries to feature pixels. When
/// `pe_proj` is present, keys are (F + PE W_pe) W_k with PE the fixed sine
/// grid encoding of the pixel centers.
struct CrossAttentionWeights {
    AttentionWeights attn;
    std::optional<Linear> pe_proj;

    static CrossAttentionWeights init(Initializer& init, std::size_t d, bool positional);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct GateOverride {
    double g_x;
    double g_q;
};

// ---------------------------------------------------------------------------
// Building blocks

/// logits[q, p] = <proj(query_q), F[p]> over every position p of F.
MaskLogits predict_masks(const Tensor& queries, const FeatureMap& features, const Linear& proj,
                         MaskKind kind, std::size_t stage = 0);

/// X[q] = sum_{u,v} weights[q,u,v] F[u,v]; weights [n x h x w] or [n x h*w].
Tensor mask_pool_image(const Tensor& weights, const FeatureMap& features);
/// X[q] = sum_{t,u,v} weights[q,t,u,v] F[t,u,v]; weights [n x T x h x w] or [n x T*h*w].
Tensor mask_pool_video(const Tensor& weights, const FeatureMap& features);
/// sigmoid(previous logits) pooled over whichever mode `features` is in.
Tensor mask_pool(const MaskLogits& previous, const FeatureMap& features);

/// Q_hat = Gate_x(X) * X + Gate_q(X) * Q_prev. An override replaces both gate
/// activations with constants.
Tensor gated_dynamic_conv(const Tensor& pooled, const Tensor& q_prev, const DynamicConvWeights& w,
                          std::optional<GateOverride> override_gates = std::nullopt);
Tensor static_gated_conv(const Tensor& pooled, const Tensor& q_prev, const StaticGateWeights& w);

/// softmax(Q W_q (K W_k)^T / sqrt(d)) (F W_v), before the output projection.
Tensor cross_attention_values(const Tensor& queries, const FeatureMap& features, const CrossAttentionWeights& w);
/// queries + W_o(cross_attention_values(...)).
Tensor cross_attend(const Tensor& queries, const FeatureMap& features, const CrossAttentionWeights& w);

Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads);

/// Q = FFN(MHSA(Q_hat) + Q_hat). With `residual`, the FFN output is added
/// back: Q = a + FFN(a), a = MHSA(Q_hat) + Q_hat.
Tensor query_mix(const Tensor& q_hat, const AttentionWeights& mhsa, const Ffn& ffn, std::size_t heads,
                 bool residual);

Tensor classify(const Tensor& queries, const Ffn& classifier);

// ---------------------------------------------------------------------------
// Decoder

/// How prompt queries take part in the self-attention and FFN mixing step.
enum class PromptMix {
    skip,        // prompts bypass self-attention and FFN
    joint,       // prompts join object queries in one self-attention
    independent, // each prompt is mixed on its own (singleton attention)
};

struct DecoderStageWeights {
    DynamicConvWeights dc;       // pool_dcg
    StaticGateWeights static_dc; // pool_dc
    CrossAttentionWeights ca;    // per_pixel_ca
    AttentionWeights mhsa;
    Ffn ffn;
};

/// Mask embedding and classifier of one prediction point.
struct PredictionHead {
    Linear mask_embed;
    std::optional<Ffn> classifier;
};

struct DecoderWeights {
    DecoderKind kind = DecoderKind::pool_dcg;
    std::size_t heads = 4;
    bool mix_residual = false;
    PromptMix prompt_mix = PromptMix::skip;
    std::array<DecoderStageWeights, kDecoderStages> stages;
    std::array<PredictionHead, kDecoderStages + 1> heads_out; // initial + one per stage

    /// `with_classifier` is false for a prompt-only decoder.
    static DecoderWeights init(Initializer& init, const ModelConfig& cfg, bool with_classifier, PromptMix mix);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct StagePrediction {
    std::size_t stage = 0;
    std::optional<MaskLogits> object_masks;
    Tensor class_logits; // [N x C+1] when objects and a classifier are present
    std::optional<MaskLogits> prompt_masks;
    QuerySet queries; // refined queries that produced these masks
};

struct DecoderOutput {
    std::vector<StagePrediction> stages; // initial + kDecoderStages

    const StagePrediction& final_stage() const { return stages.back(); }
};

DecoderOutput decoder_forward(const FeatureMap& features, const QuerySet& init, const DecoderWeights& w);

} // namespace rmps
