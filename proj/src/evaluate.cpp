#include "rmps/evaluate.hpp"

#include "rmps/adapter.hpp"
#include "rmps/error.hpp"
#include "rmps/infer.hpp"
#include "rmps/train.hpp"

#include <random>

namespace rmps {

namespace {

// Seed streams for held-out data; training batches use streams 1..3.
constexpr std::uint64_t kHeldoutScenes = 101;
constexpr std::uint64_t kHeldoutClips = 102;
constexpr std::uint64_t kHeldoutSingles = 103;

std::vector<Tensor> clip_images(const ClipSample& clip) {
    std::vector<Tensor> frames;
    for (const auto& f : clip.frames) frames.push_back(f.image);
    return frames;
}

} // namespace

Scene heldout_scene(const RunConfig& cfg, std::uint64_t seed, std::size_t index) {
    return gen_scene(derive_seed(seed, kHeldoutScenes, index), SceneConfig::from(cfg));
}

Scene heldout_single_thing_scene(const RunConfig& cfg, std::uint64_t seed, std::size_t index) {
    SceneConfig sc = SceneConfig::from(cfg);
    sc.min_things = sc.max_things = 1;
    return gen_scene(derive_seed(seed, kHeldoutSingles, index), sc);
}

PanopticEval evaluate_panoptic(const Model& model, const RunConfig& cfg, const EvalOptions& opt) {
    NoGradGuard guard;
    PQAccumulator acc;
    for (std::size_t i = 0; i < opt.scenes; ++i) {
        Scene s = heldout_scene(cfg, opt.seed, i);
        acc.add(infer_panoptic(model, s.image, cfg.infer), scene_panoptic(s));
    }
    return {acc.report(), opt.scenes};
}

VisEval evaluate_vis(const Model& model, const RunConfig& cfg, const EvalOptions& opt) {
    NoGradGuard guard;
    std::vector<ClipEvaluation> clips;
    for (std::size_t i = 0; i < opt.scenes; ++i) {
        Scene s = heldout_scene(cfg, opt.seed, i);
        ClipSample clip = gen_pseudo_video(s, opt.clip_frames, derive_seed(opt.seed, kHeldoutClips, i));
        auto frames = clip_images(clip);
        clips.push_back({infer_vis(model, frames, cfg.infer), clip_tracks(clip)});
    }
    return {tube_map(clips, default_iou_thresholds()), opt.scenes};
}

PromptEval evaluate_interactive(const Model& model, const RunConfig& cfg, const EvalOptions& opt) {
    NoGradGuard guard;
    std::vector<std::vector<double>> preds, gts;
    for (std::size_t i = 0; i < opt.scenes; ++i) {
        Scene s = heldout_single_thing_scene(cfg, opt.seed, i);
        std::vector<VisualPrompt> prompts;
        for (const auto& e : s.entities) {
            if (!e.is_thing) continue;
            prompts.push_back(center_point_prompt(e.mask, s.size, s.size));
            gts.push_back(e.mask);
        }
        auto masks = infer_interactive(model, s.image, prompts, cfg.infer);
        preds.insert(preds.end(), masks.begin(), masks.end());
    }
    return {one_click_miou(preds, gts), preds.size()};
}

PromptEval evaluate_prompt_video(const Model& model, const RunConfig& cfg, const EvalOptions& opt) {
    NoGradGuard guard;
    std::vector<std::vector<double>> preds, gts;
    for (std::size_t i = 0; i < opt.scenes; ++i) {
        Scene s = heldout_scene(cfg, opt.seed, i);
        ClipSample clip = gen_pseudo_video(s, opt.clip_frames, derive_seed(opt.seed, kHeldoutClips, i));
        auto frames = clip_images(clip);
        for (const auto& track : clip_tracks(clip)) {
            if (!track.present[0]) continue;
            auto prompt = center_point_prompt(track.masks[0], s.size, s.size);
            auto masks = infer_prompt_video(model, frames, prompt, cfg.infer);
            for (std::size_t t = 0; t < masks.size(); ++t) {
                preds.push_back(masks[t]);
                gts.push_back(track.masks[t]);
            }
        }
    }
    return {one_click_miou(preds, gts), preds.size()};
}

GradScope parse_grad_scope(const std::string& text) {
    if (text == "ops") return GradScope::ops;
    if (text == "decoder") return GradScope::decoder;
    if (text == "loss") return GradScope::loss;
    throw ConfigError("unknown gradcheck scope '" + text + "' (expected ops, decoder or loss)");
}

// ---------------------------------------------------------------------------
// Gradient suite

namespace {

class Probe {
  public:
    explicit Probe(std::uint64_t seed) : rng_(seed) {}

    Tensor normal(Shape shape, double sigma = 1.0) {
        std::normal_distribution<double> dist(0.0, sigma);
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.mutable_data()) v = dist(rng_);
        return t;
    }

    // Values bounded away from zero, for ops with a kink there.
    Tensor nonzero(Shape shape) {
        Tensor t = normal(std::move(shape));
        for (auto& v : t.mutable_data()) v += v < 0 ? -0.1 : 0.1;
        return t;
    }

    Tensor uniform(Shape shape, double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.mutable_data()) v = dist(rng_);
        return t;
    }

    Tensor binary(Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        std::bernoulli_distribution dist(0.4);
        for (auto& v : t.mutable_data()) v = dist(rng_) ? 1.0 : 0.0;
        return t;
    }

    // Re-draws trained-scale weights at unit-ish scale so gradients stay well
    // above finite-difference round-off: attention query/key maps get `qk`,
    // mask embeddings 0.5, query embeddings 1, norm gains stay near one.
    void randomize(const ParamList& params, double sigma, double qk = 1.0) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (const auto& p : params) {
            Tensor t = p.tensor;
            const std::string& n = p.name;
            const bool gain = n.ends_with(".gamma");
            double s = sigma;
            if (n == "query_embed") s = 1.0;
            else if (n.find(".q.") != std::string::npos || n.find(".k.") != std::string::npos) s = qk;
            else if (n.find("mask_embed") != std::string::npos) s = 0.5;
            for (auto& v : t.mutable_data()) v = gain ? 1.0 + 0.1 * dist(rng_) : s * dist(rng_);
        }
    }

    std::mt19937_64& rng() { return rng_; }

  private:
    std::mt19937_64 rng_;
};

// Scalar probe of a tensor-valued output: sum(y * r) with a fixed random r.
Tensor project(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

std::vector<Tensor> tensors_of(const ParamList& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

using Reports = std::vector<GradCheckReport>;

void check_unary(Reports& out, Probe& pr, const std::string& name, Shape shape,
                 const std::function<Tensor(const Tensor&)>& op, bool avoid_zero = false) {
    Tensor x = avoid_zero ? pr.nonzero(shape) : pr.normal(shape);
    Tensor y0;
    {
        NoGradGuard g;
        y0 = op(x);
    }
    Tensor r = pr.normal(y0.shape());
    out.push_back(grad_check(name, [&] { return project(op(x), r); }, {x}));
}

void check_binary(Reports& out, Probe& pr, const std::string& name, Shape sa, Shape sb,
                  const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    Tensor a = pr.normal(sa), b = pr.normal(sb);
    Tensor y0;
    {
        NoGradGuard g;
        y0 = op(a, b);
    }
    Tensor r = pr.normal(y0.shape());
    out.push_back(grad_check(name, [&] { return project(op(a, b), r); }, {a, b}));
}

Reports ops_checks(std::uint64_t seed) {
    Reports out;
    Probe pr(seed);
    const std::size_t d = 8;

    check_binary(out, pr, "matmul", {5, 4}, {4, 3}, [](auto& a, auto& b) { return matmul(a, b); });
    check_unary(out, pr, "transpose", {3, 5}, [](auto& x) { return transpose(x); });
    check_unary(out, pr, "reshape", {2, 3, 4}, [](auto& x) { return reshape(x, {6, 4}); });
    {
        Tensor x = pr.normal({3, 9, 9}), w = pr.normal({4, 3, 3, 3}, 0.3), b = pr.normal({4});
        for (int stride : {1, 2}) {
            Tensor r = pr.normal({4, stride == 1 ? 9u : 5u, stride == 1 ? 9u : 5u});
            out.push_back(grad_check("conv2d_s" + std::to_string(stride),
                                     [&, stride] { return project(conv2d(x, w, b, stride, 1), r); }, {x, w, b}));
        }
        Tensor w1 = pr.normal({4, 3, 1, 1}, 0.3);
        Tensor r = pr.normal({4, 9, 9});
        out.push_back(grad_check("conv2d_1x1", [&] { return project(conv2d(x, w1, 1, 0), r); }, {x, w1}));
    }
    check_unary(out, pr, "sigmoid", {4, 5}, [](auto& x) { return sigmoid(x); });
    check_unary(out, pr, "relu", {4, 5}, [](auto& x) { return relu(x); }, true);
    check_unary(out, pr, "gelu", {4, 5}, [](auto& x) { return gelu(x); });
    check_binary(out, pr, "add", {4, 5}, {4, 5}, [](auto& a, auto& b) { return add(a, b); });
    check_binary(out, pr, "add_broadcast", {4, 5}, {1, 5}, [](auto& a, auto& b) { return add(a, b); });
    check_binary(out, pr, "add_broadcast_rank", {3, 4, 5}, {5}, [](auto& a, auto& b) { return add(a, b); });
    check_binary(out, pr, "sub", {4, 5}, {1, 5}, [](auto& a, auto& b) { return sub(a, b); });
    check_binary(out, pr, "mul", {4, 5}, {4, 5}, [](auto& a, auto& b) { return mul(a, b); });
    check_binary(out, pr, "mul_broadcast", {4, 5}, {5}, [](auto& a, auto& b) { return mul(a, b); });
    check_unary(out, pr, "scale", {4, 5}, [](auto& x) { return scale(x, -1.7); });
    check_unary(out, pr, "softmax_rows", {4, 5}, [](auto& x) { return softmax(x, 1); });
    check_unary(out, pr, "softmax_cols", {4, 5}, [](auto& x) { return softmax(x, 0); });
    {
        Tensor x = pr.normal({4, d}), g = pr.uniform({d}, 0.5, 1.5), b = pr.normal({d});
        Tensor r = pr.normal({4, d});
        out.push_back(grad_check("layer_norm", [&] { return project(layer_norm(x, g, b), r); }, {x, g, b}));
    }
    check_unary(out, pr, "bilinear_resize_up", {2, 4, 4}, [](auto& x) { return bilinear_resize(x, 7, 9); });
    check_unary(out, pr, "bilinear_resize_down", {2, 8, 8}, [](auto& x) { return bilinear_resize(x, 3, 5); });
    check_unary(out, pr, "sum", {3, 4}, [](auto& x) { return reshape(sum(x), {1}); });
    check_unary(out, pr, "mean", {3, 4}, [](auto& x) { return reshape(mean(x), {1}); });
    {
        const std::size_t rows[] = {2, 0, 2, 3};
        check_unary(out, pr, "index_rows", {4, 3}, [&](auto& x) { return index_rows(x, rows); });
    }
    check_unary(out, pr, "slice_rows", {5, 3}, [](auto& x) { return slice_rows(x, 1, 3); });
    check_unary(out, pr, "slice_cols", {3, 6}, [](auto& x) { return slice_cols(x, 2, 3); });
    check_binary(out, pr, "concat_rows", {2, 3}, {4, 3}, [](auto& a, auto& b) {
        const Tensor parts[] = {a, b};
        return concat_rows(parts);
    });
    check_binary(out, pr, "concat_cols", {3, 2}, {3, 4}, [](auto& a, auto& b) {
        const Tensor parts[] = {a, b};
        return concat_cols(parts);
    });
    {
        Tensor x = pr.normal({3, 10}), t = pr.binary({3, 10});
        out.push_back(grad_check("bce_with_logits", [&] { return bce_with_logits(x, t); }, {x}));
        out.push_back(grad_check("mask_ce_loss", [&] { return mask_ce_loss(x, t); }, {x}));
        out.push_back(grad_check("dice_loss", [&] { return dice_loss(x, t); }, {x}));
    }
    {
        Tensor x = pr.normal({5, 4});
        const std::size_t labels[] = {0, 3, 3, 1, 2};
        const double weights[] = {1.0, 0.1, 0.1, 1.0, 1.0};
        out.push_back(grad_check("softmax_cross_entropy",
                                 [&] { return softmax_cross_entropy(x, labels, weights); }, {x}));
        out.push_back(grad_check("cls_loss", [&] { return cls_loss(x, labels, 3, 0.1); }, {x}));
    }

    // Decoder building blocks on a 32x32 input (8x8 stride-4 features).
    const std::size_t n = 6, h = 8, w = 8;
    Initializer init(seed + 1);
    {
        Tensor f = pr.normal({h * w, d}), m = pr.normal({n, h, w});
        Tensor r = pr.normal({n, d});
        out.push_back(grad_check("mask_pool_image", [&] {
            return project(mask_pool_image(sigmoid(m), make_image_features(f, h, w)), r);
        }, {f, m}));
        Tensor fv = pr.normal({2 * h * w, d}), mv = pr.normal({n, 2, h, w});
        out.push_back(grad_check("mask_pool_video", [&] {
            FeatureMap a = make_image_features(slice_rows(fv, 0, h * w), h, w);
            FeatureMap b = make_image_features(slice_rows(fv, h * w, h * w), h, w);
            const FeatureMap maps[] = {a, b};
            return project(mask_pool_video(sigmoid(mv), stack_frames(maps)), r);
        }, {fv, mv}));
    }
    {
        Tensor x = pr.normal({n, d}), q = pr.normal({n, d}), r = pr.normal({n, d});
        auto dc = DynamicConvWeights::init(init, d);
        ParamList ps;
        dc.collect("dc", ps);
        pr.randomize(ps, 0.4);
        auto params = tensors_of(ps);
        params.push_back(x);
        params.push_back(q);
        out.push_back(grad_check("gated_dynamic_conv", [&] { return project(gated_dynamic_conv(x, q, dc), r); }, params));

        auto st = StaticGateWeights::init(d);
        ParamList ss;
        st.collect("static", ss);
        pr.randomize(ss, 1.0);
        auto sparams = tensors_of(ss);
        sparams.push_back(x);
        sparams.push_back(q);
        out.push_back(grad_check("static_gated_conv", [&] { return project(static_gated_conv(x, q, st), r); }, sparams));
    }
    {
        Tensor q = pr.normal({n, d}), f = pr.normal({h * w, d}), r = pr.normal({n, d});
        for (bool positional : {false, true}) {
            auto ca = CrossAttentionWeights::init(init, d, positional);
            ParamList ps;
            ca.collect("ca", ps);
            pr.randomize(ps, 0.3, 0.3);
            auto params = tensors_of(ps);
            params.push_back(q);
            params.push_back(f);
            out.push_back(grad_check(positional ? "cross_attend_pe" : "cross_attend", [&] {
                return project(cross_attend(q, make_image_features(f, h, w), ca), r);
            }, params));
        }
    }
    {
        Tensor x = pr.normal({n, d}), r = pr.normal({n, d});
        auto att = AttentionWeights::init(init, d);
        auto ffn = Ffn::init(init, d, 2 * d, d);
        ParamList ps;
        att.collect("mhsa", ps);
        ffn.collect("ffn", ps);
        pr.randomize(ps, 0.3, 0.3);
        auto params = tensors_of(ps);
        params.push_back(x);
        out.push_back(grad_check("multi_head_self_attention",
                                 [&] { return project(multi_head_self_attention(x, att, 4), r); }, params));
        for (bool residual : {false, true}) {
            out.push_back(grad_check(residual ? "query_mix_residual" : "query_mix",
                                     [&, residual] { return project(query_mix(x, att, ffn, 4, residual), r); }, params));
        }
        auto lin = Linear::init(init, d, d);
        ParamList ls;
        lin.collect("linear", ls);
        pr.randomize(ls, 0.3);
        auto lparams = tensors_of(ls);
        lparams.push_back(x);
        out.push_back(grad_check("linear", [&] { return project(lin(x), r); }, lparams));
    }
    {
        auto pe = PromptEncoderWeights::init(init, d);
        ParamList ps;
        pe.collect("prompt_encoder", ps);
        pr.randomize(ps, 0.5);
        const VisualPrompt prompts[] = {VisualPrompt::point(5.5, 20.5, 32, 32), VisualPrompt::box(3, 4, 17, 30, 32, 32)};
        Tensor r = pr.normal({2, d});
        out.push_back(grad_check("encode_prompts", [&] { return project(encode_prompts(prompts, pe), r); }, tensors_of(ps)));
    }
    {
        Tensor x = pr.normal({4, 5, 5});
        auto norm = Norm::init(4);
        norm.gamma.mutable_data()[1] = 1.3;
        norm.beta.mutable_data()[2] = -0.4;
        Tensor r = pr.normal({4, 5, 5});
        out.push_back(grad_check("channel_norm", [&] { return project(channel_norm(x, norm), r); },
                                 {x, norm.gamma, norm.beta}));
    }
    return out;
}

ModelConfig small_config(MetaArch arch, AdapterVariant adapter, DecoderKind decoder) {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_queries = 6;
    cfg.heads = 4;
    cfg.arch = arch;
    cfg.adapter = adapter;
    cfg.decoder = decoder;
    cfg.image_size = 32;
    cfg.channels = {4, 8, 8, 16};
    return cfg;
}

// Objective over every supervision point of a model forward.
Tensor supervision_probe(const ModelOutput& out, std::vector<Tensor>& probes, Probe& pr) {
    std::vector<Tensor> terms;
    std::size_t next = 0;
    auto take = [&](const Tensor& y) {
        if (!y.defined()) return;
        if (next == probes.size()) probes.push_back(pr.normal(y.shape()));
        terms.push_back(project(y, probes[next++]));
    };
    for (const auto& s : out.supervision) {
        take(s.class_logits);
        take(s.object_masks);
        take(s.prompt_masks);
    }
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return total;
}

const VisualPrompt kProbePrompts[] = {VisualPrompt::point(9.5, 12.5, 32, 32), VisualPrompt::box(14, 2, 30, 21, 32, 32)};

// Weight and feature scales keep every stage's activations O(1) despite the
// unnormalized mask pooling, so no sampled gradient sinks into round-off.
constexpr double kProbeWeightSigma = 0.25;
constexpr double kProbeFeatureSigma = 0.125;
constexpr double kProbeAttentionSigma = 0.5;

GradCheckReport check_model_decoder(const std::string& name, const ModelConfig& cfg, Probe& pr, std::size_t frames) {
    Model model = build_model(cfg, 3);
    ParamList ps = model.parameters();
    pr.randomize(ps, kProbeWeightSigma, kProbeAttentionSigma);
    std::vector<Tensor> params;
    for (const auto& p : ps)
        if (!p.name.starts_with("backbone")) params.push_back(p.tensor);
    const std::size_t h = cfg.image_size / FeatureMap::stride;
    Tensor f = pr.normal({frames * h * h, cfg.d}, kProbeFeatureSigma);
    params.push_back(f);
    std::vector<Tensor> probes;
    auto features = [&]() {
        std::vector<FeatureMap> maps;
        for (std::size_t t = 0; t < frames; ++t) maps.push_back(make_image_features(slice_rows(f, t * h * h, h * h), h, h));
        return frames == 1 ? maps[0] : stack_frames(maps);
    };
    auto objective = [&] { return supervision_probe(model_forward(model, features(), true, kProbePrompts), probes, pr); };
    {
        NoGradGuard g;
        objective();
    }
    return grad_check(name, objective, params);
}

GradCheckReport check_backbone(Probe& pr) {
    const ModelConfig cfg = small_config(MetaArch::a, {AdapterKind::none, AdapterKind::none}, DecoderKind::pool_dcg);
    Initializer init(7);
    BackboneWeights w = BackboneWeights::init(init, cfg);
    ParamList ps;
    w.collect("backbone", ps);
    pr.randomize(ps, 0.3);
    Tensor image = pr.uniform({3, cfg.image_size, cfg.image_size}, 0.0, 1.0);
    const std::size_t h = cfg.image_size / FeatureMap::stride;
    Tensor r = pr.normal({h * h, cfg.d});
    auto params = tensors_of(ps);
    params.push_back(image);
    return grad_check("backbone", [&] { return project(backbone_forward(image, w).pixels, r); }, params);
}

Reports decoder_checks(std::uint64_t seed) {
    Reports out;
    Probe pr(seed);
    const AdapterVariant none{AdapterKind::none, AdapterKind::none};
    for (DecoderKind kind : {DecoderKind::pool_dcg, DecoderKind::pool_dc, DecoderKind::per_pixel_ca}) {
        out.push_back(check_model_decoder("decoder_" + to_string(kind), small_config(MetaArch::a, none, kind), pr, 1));
    }
    out.push_back(check_model_decoder("decoder_video", small_config(MetaArch::a, none, DecoderKind::pool_dcg), pr, 2));
    {
        ModelConfig joint = small_config(MetaArch::a, none, DecoderKind::pool_dcg);
        joint.prompt_in_mhsa = true;
        out.push_back(check_model_decoder("decoder_prompt_in_mhsa", joint, pr, 1));
        ModelConfig residual = small_config(MetaArch::a, none, DecoderKind::pool_dcg);
        residual.mix_residual = true;
        out.push_back(check_model_decoder("decoder_mix_residual", residual, pr, 1));
    }
    out.push_back(check_model_decoder("decoder_decoupled", small_config(MetaArch::b, none, DecoderKind::pool_dcg), pr, 1));
    const AdapterVariant variants[] = {{AdapterKind::ca, AdapterKind::ca},
                                       {AdapterKind::dc, AdapterKind::dc},
                                       {AdapterKind::dc, AdapterKind::ca},
                                       {AdapterKind::ca, AdapterKind::dc}};
    for (const auto& v : variants) {
        out.push_back(check_model_decoder("adapter_" + to_string(v.obj) + "_" + to_string(v.prompt),
                                          small_config(MetaArch::c, v, DecoderKind::pool_dcg), pr, 1));
    }
    out.push_back(check_model_decoder("arch_d", small_config(MetaArch::d, {AdapterKind::dc, AdapterKind::ca}, DecoderKind::pool_dcg),
                                      pr, 1));
    out.push_back(check_backbone(pr));
    return out;
}

Reports loss_checks(std::uint64_t seed) {
    Reports out;
    Probe pr(seed);
    const ModelConfig cfg = small_config(MetaArch::c, {AdapterKind::dc, AdapterKind::ca}, DecoderKind::pool_dcg);
    Model model = build_model(cfg, 5);
    ParamList ps = model.parameters();
    pr.randomize(ps, kProbeWeightSigma, kProbeAttentionSigma);
    std::vector<Tensor> decoder_params;
    for (const auto& p : ps)
        if (!p.name.starts_with("backbone")) decoder_params.push_back(p.tensor);

    SceneConfig sc;
    sc.size = 32;
    sc.min_things = sc.max_things = 2;
    const Scene scene = gen_scene(seed, sc);
    const std::size_t h = cfg.image_size / FeatureMap::stride;
    Tensor f = pr.normal({h * h, cfg.d}, kProbeFeatureSigma);
    decoder_params.push_back(f);
    const LossWeights weights;

    LossTargets pan = panoptic_targets(scene);
    out.push_back(grad_check("total_loss_panoptic", [&] {
        auto o = model_forward(model, make_image_features(f, h, h), true, {});
        return total_loss(o.supervision, pan, weights).total;
    }, decoder_params));

    auto sampled = sample_prompts(scene, PromptMode::train, seed, 1).prompts;
    std::vector<VisualPrompt> prompts;
    for (const auto& s : sampled) prompts.push_back(s.prompt);
    LossTargets prm = prompt_targets(sampled, scene.size);
    out.push_back(grad_check("total_loss_prompt", [&] {
        auto o = model_forward(model, make_image_features(f, h, h), false, prompts);
        return total_loss(o.supervision, prm, weights).total;
    }, decoder_params));

    ClipSample clip = gen_pseudo_video(scene, 2, seed);
    LossTargets vid = video_targets(clip);
    Tensor fv = pr.normal({2 * h * h, cfg.d}, kProbeFeatureSigma);
    decoder_params.back() = fv;
    out.push_back(grad_check("total_loss_video", [&] {
        FeatureMap a = make_image_features(slice_rows(fv, 0, h * h), h, h);
        FeatureMap b = make_image_features(slice_rows(fv, h * h, h * h), h, h);
        const FeatureMap maps[] = {a, b};
        auto o = model_forward(model, stack_frames(maps), true, {});
        return total_loss(o.supervision, vid, weights).total;
    }, decoder_params));
    return out;
}

} // namespace

std::vector<GradCheckReport> run_grad_checks(GradScope scope, std::uint64_t seed) {
    switch (scope) {
    case GradScope::ops: return ops_checks(seed);
    case GradScope::decoder: return decoder_checks(seed);
    case GradScope::loss: return loss_checks(seed);
    }
    throw ContractError("unknown gradcheck scope");
}

std::vector<GradCheckReport> run_grad_checks(GradScope scope) { return run_grad_checks(scope, default_grad_seed(scope)); }

std::uint64_t default_grad_seed(GradScope scope) {
    switch (scope) {
    case GradScope::ops: return 11;
    case GradScope::decoder: return 14;
    case GradScope::loss: return 17;
    }
    throw ContractError("unknown gradcheck scope");
}

} // namespace rmps
