#include "rmps/adapter.hpp"

#include "rmps/error.hpp"

namespace rmps {

namespace {

Tensor adapt(AdapterKind kind, const Tensor& queries, const MaskLogits& masks, const FeatureMap& features,
             const DynamicConvWeights& dc, const CrossAttentionWeights& ca, std::optional<GateOverride> overrides) {
    switch (kind) {
    case AdapterKind::none: return queries;
    case AdapterKind::dc:
        if (masks.count() != queries.dim(0)) {
            throw DimensionError("adapter: " + std::to_string(masks.count()) + " masks for " +
                                 std::to_string(queries.dim(0)) + " queries");
        }
        return gated_dynamic_conv(mask_pool(masks, features), queries, dc, overrides);
    case AdapterKind::ca: return cross_attend(queries, features, ca);
    }
    throw ContractError("unknown adapter kind");
}

} // namespace

AdapterWeights AdapterWeights::init(Initializer& init, std::size_t d, AdapterVariant variant) {
    AdapterWeights w;
    w.variant = variant;
    if (variant.obj == AdapterKind::dc) w.obj_dc = DynamicConvWeights::init(init, d);
    if (variant.obj == AdapterKind::ca) w.obj_ca = CrossAttentionWeights::init(init, d, true);
    if (variant.prompt == AdapterKind::dc) w.prompt_dc = DynamicConvWeights::init(init, d);
    if (variant.prompt == AdapterKind::ca) w.prompt_ca = CrossAttentionWeights::init(init, d, true);
    return w;
}

void AdapterWeights::collect(const std::string& prefix, ParamList& out) const {
    if (variant.obj == AdapterKind::dc) obj_dc.collect(prefix + ".obj.dc", out);
    if (variant.obj == AdapterKind::ca) obj_ca.collect(prefix + ".obj.ca", out);
    if (variant.prompt == AdapterKind::dc) prompt_dc.collect(prefix + ".prompt.dc", out);
    if (variant.prompt == AdapterKind::ca) prompt_ca.collect(prefix + ".prompt.ca", out);
}

Tensor adapt_object(const Tensor& queries, const MaskLogits& masks, const FeatureMap& features,
                    const AdapterWeights& w, std::optional<GateOverride> override_gates) {
    return adapt(w.variant.obj, queries, masks, features, w.obj_dc, w.obj_ca, override_gates);
}

Tensor adapt_prompt(const Tensor& prompts, const MaskLogits& masks, const FeatureMap& features,
                    const AdapterWeights& w, std::optional<GateOverride> override_gates) {
    return adapt(w.variant.prompt, prompts, masks, features, w.prompt_dc, w.prompt_ca, override_gates);
}

} // namespace rmps
