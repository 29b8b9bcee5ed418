#include "rmps/model.hpp"

#include "rmps/error.hpp"

namespace rmps {

ParamList Model::parameters() const {
    ParamList out;
    backbone.collect("backbone", out);
    prompt_encoder.collect("prompt_encoder", out);
    out.push_back({"query_embed", query_embed});
    decoder.collect(prompt_decoder ? "object_decoder" : "decoder", out);
    if (prompt_decoder) prompt_decoder->collect("prompt_decoder", out);
    adapters.collect("adapter", out);
    return out;
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Initializer init(seed);
    Model m;
    m.cfg = cfg;
    m.backbone = BackboneWeights::init(init, cfg);
    m.prompt_encoder = PromptEncoderWeights::init(init, cfg.d);
    m.query_embed = init.normal({cfg.n_queries, cfg.d}, 1.0);
    if (cfg.decoupled()) {
        m.decoder = DecoderWeights::init(init, cfg, true, PromptMix::skip);
        m.prompt_decoder = DecoderWeights::init(init, cfg, false, PromptMix::independent);
    } else {
        m.decoder = DecoderWeights::init(init, cfg, true, cfg.prompt_in_mhsa ? PromptMix::joint : PromptMix::skip);
    }
    m.adapters = AdapterWeights::init(init, cfg.d, cfg.effective_adapter());
    for (auto& p : m.parameters()) p.tensor.set_requires_grad(true);
    return m;
}

std::size_t count_params(const Model& model) { return total_elements(model.parameters()); }

FeatureMap model_features(const Model& model, const Tensor& image) { return backbone_forward(image, model.backbone); }

FeatureMap model_features_video(const Model& model, std::span<const Tensor> frames) {
    if (frames.empty()) throw InputError("model_features_video: empty clip");
    std::vector<FeatureMap> maps;
    for (const auto& f : frames) maps.push_back(backbone_forward(f, model.backbone));
    return stack_frames(maps);
}

namespace {

PredictionSet to_set(const StagePrediction& s) {
    PredictionSet p;
    if (s.object_masks) {
        p.object_masks = s.object_masks->logits;
        p.class_logits = s.class_logits;
    }
    if (s.prompt_masks) p.prompt_masks = s.prompt_masks->logits;
    return p;
}

} // namespace

ModelOutput model_forward(const Model& model, const FeatureMap& features, bool objects,
                          std::span<const VisualPrompt> prompts) {
    if (!objects && prompts.empty()) throw InputError("model_forward: neither objects nor prompts requested");
    QuerySet init;
    if (objects) init.objects = model.query_embed;
    if (!prompts.empty()) init.prompts = encode_prompts(prompts, model.prompt_encoder);

    std::vector<StagePrediction> stages;
    if (model.prompt_decoder) {
        std::optional<DecoderOutput> obj, prm;
        if (objects) obj = decoder_forward(features, {init.objects, {}}, model.decoder);
        if (init.k() > 0) prm = decoder_forward(features, {{}, init.prompts}, *model.prompt_decoder);
        for (std::size_t s = 0; s <= kDecoderStages; ++s) {
            StagePrediction merged = obj ? obj->stages[s] : prm->stages[s];
            if (obj && prm) {
                merged.prompt_masks = prm->stages[s].prompt_masks;
                merged.queries.prompts = prm->stages[s].queries.prompts;
            }
            stages.push_back(std::move(merged));
        }
    } else {
        stages = decoder_forward(features, init, model.decoder).stages;
    }

    ModelOutput out;
    out.features = features;
    for (const auto& s : stages) out.supervision.push_back(to_set(s));
    const StagePrediction& last = stages.back();
    out.object_masks = last.object_masks;
    out.class_logits = last.class_logits;
    out.object_queries = last.queries.objects;
    out.prompt_masks = last.prompt_masks;

    const AdapterVariant v = model.adapters.variant;
    const bool adapt_obj = objects && v.obj != AdapterKind::none;
    const bool adapt_prm = init.k() > 0 && v.prompt != AdapterKind::none;
    if (adapt_obj || adapt_prm) {
        const PredictionHead& obj_head = model.decoder.heads_out.back();
        const PredictionHead& prm_head = model.prompt_decoder ? model.prompt_decoder->heads_out.back() : obj_head;
        if (adapt_obj) {
            Tensor q = adapt_object(last.queries.objects, *last.object_masks, features, model.adapters);
            out.object_masks = predict_masks(q, features, obj_head.mask_embed, last.object_masks->kind, kDecoderStages + 1);
            out.class_logits = classify(q, *obj_head.classifier);
            out.object_queries = q;
        }
        if (adapt_prm) {
            Tensor p = adapt_prompt(last.queries.prompts, *last.prompt_masks, features, model.adapters);
            out.prompt_masks = predict_masks(p, features, prm_head.mask_embed, last.prompt_masks->kind, kDecoderStages + 1);
        }
        PredictionSet adapted;
        if (out.object_masks) {
            adapted.object_masks = out.object_masks->logits;
            adapted.class_logits = out.class_logits;
        }
        if (out.prompt_masks) adapted.prompt_masks = out.prompt_masks->logits;
        out.supervision.push_back(adapted);
    }
    return out;
}

} // namespace rmps
