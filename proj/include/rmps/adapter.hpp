#pragma once

#include "rmps/config.hpp"
#include "rmps/decoder.hpp"

namespace rmps {

/// Post-decoder adapters. Only the configured kinds carry weights.
struct AdapterWeights {
    AdapterVariant variant{AdapterKind::none, AdapterKind::none};
    DynamicConvWeights obj_dc;
    CrossAttentionWeights obj_ca;
    DynamicConvWeights prompt_dc;
    CrossAttentionWeights prompt_ca;

    static AdapterWeights init(Initializer& init, std::size_t d, AdapterVariant variant);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// DC: one more round of mask pooling and gated dynamic convolution.
/// CA: single-head cross-attention over every stride-4 pixel, with residual.
/// none: identity.
Tensor adapt_object(const Tensor& queries, const MaskLogits& masks, const FeatureMap& features,
                    const AdapterWeights& w, std::optional<GateOverride> override_gates = std::nullopt);
Tensor adapt_prompt(const Tensor& prompts, const MaskLogits& masks, const FeatureMap& features,
                    const AdapterWeights& w, std::optional<GateOverride> override_gates = std::nullopt);

} // namespace rmps
