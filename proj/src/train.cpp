#include "rmps/train.hpp"

#include "rmps/error.hpp"

#include <cmath>

namespace rmps {

double learning_rate(const TrainConfig& cfg, std::size_t step) {
    double lr = cfg.lr;
    if (cfg.warmup > 0 && step < cfg.warmup) lr *= double(step) / double(cfg.warmup);
    const double s = double(step);
    if (s >= cfg.decay_at[1] * double(cfg.steps)) {
        lr *= 0.01;
    } else if (s >= cfg.decay_at[0] * double(cfg.steps)) {
        lr *= 0.1;
    }
    return lr;
}

LossTargets panoptic_targets(const Scene& scene, MaskTargetRule rule, std::size_t stride) {
    LossTargets t;
    std::vector<double> rows;
    for (const auto& e : scene.entities) {
        auto m = downsample_mask(e.mask, scene.size, scene.size, stride, rule);
        rows.insert(rows.end(), m.begin(), m.end());
        t.classes.push_back(e.class_id);
    }
    if (!t.classes.empty()) {
        const std::size_t p = rows.size() / t.classes.size();
        t.masks = Tensor({t.classes.size(), p}, std::move(rows));
    }
    return t;
}

LossTargets video_targets(const ClipSample& clip, MaskTargetRule rule, std::size_t stride) {
    if (clip.frames.empty()) throw InputError("video_targets: empty clip");
    const std::size_t size = clip.frames[0].size;
    const std::size_t plane = ((size + stride - 1) / stride) * ((size + stride - 1) / stride);
    const std::size_t frames = clip.frames.size();
    // (is_thing, instance id or class) identifies an entity across frames.
    std::vector<std::pair<bool, std::size_t>> keys;
    std::vector<std::size_t> classes;
    std::vector<std::vector<double>> tubes;
    for (std::size_t t = 0; t < frames; ++t) {
        for (const auto& e : clip.frames[t].entities) {
            const std::pair<bool, std::size_t> key{e.is_thing, e.is_thing ? e.instance_id : e.class_id};
            std::size_t k = 0;
            while (k < keys.size() && keys[k] != key) ++k;
            if (k == keys.size()) {
                keys.push_back(key);
                classes.push_back(e.class_id);
                tubes.emplace_back(frames * plane, 0.0);
            }
            auto m = downsample_mask(e.mask, size, size, stride, rule);
            std::copy(m.begin(), m.end(), tubes[k].begin() + std::ptrdiff_t(t * plane));
        }
    }
    LossTargets out;
    out.classes = classes;
    std::vector<double> rows;
    for (const auto& tube : tubes) rows.insert(rows.end(), tube.begin(), tube.end());
    out.masks = Tensor({tubes.size(), frames * plane}, std::move(rows));
    return out;
}

LossTargets prompt_targets(const std::vector<PromptSample>& prompts, std::size_t size, MaskTargetRule rule,
                           std::size_t stride) {
    LossTargets t;
    if (prompts.empty()) return t;
    std::vector<double> rows;
    for (const auto& p : prompts) {
        auto m = downsample_mask(p.target, size, size, stride, rule);
        rows.insert(rows.end(), m.begin(), m.end());
    }
    const std::size_t per = rows.size() / prompts.size();
    t.prompt_masks = Tensor({prompts.size(), per}, std::move(rows));
    return t;
}

LossResult batch_loss(const Model& model, const Batch& batch, const LossWeights& weights) {
    switch (batch.kind) {
    case BatchKind::panoptic: {
        if (!batch.prompts.empty() || !batch.clip.frames.empty()) throw ContractError("panoptic batch carries other data types");
        FeatureMap f = model_features(model, batch.scene.image);
        ModelOutput out = model_forward(model, f, true, {});
        return total_loss(out.supervision, panoptic_targets(batch.scene, weights.mask_targets), weights);
    }
    case BatchKind::video: {
        if (!batch.prompts.empty() || batch.clip.frames.empty()) throw ContractError("video batch must hold only a clip");
        std::vector<Tensor> frames;
        for (const auto& s : batch.clip.frames) frames.push_back(s.image);
        FeatureMap f = model_features_video(model, frames);
        ModelOutput out = model_forward(model, f, true, {});
        return total_loss(out.supervision, video_targets(batch.clip, weights.mask_targets), weights);
    }
    case BatchKind::prompt: {
        if (batch.prompts.empty() || !batch.clip.frames.empty()) throw ContractError("prompt batch must hold only prompts");
        std::vector<VisualPrompt> prompts;
        for (const auto& p : batch.prompts) prompts.push_back(p.prompt);
        FeatureMap f = model_features(model, batch.scene.image);
        ModelOutput out = model_forward(model, f, false, prompts);
        return total_loss(out.supervision, prompt_targets(batch.prompts, batch.scene.size, weights.mask_targets), weights);
    }
    }
    throw ContractError("unknown batch kind");
}

void adamw_update(Model& model, OptimizerState& state, const TrainConfig& cfg, double lr) {
    ++state.step;
    const double t = double(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& p : model.parameters()) {
        Tensor& w = p.tensor;
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) {
            m.assign(w.numel(), 0.0);
            v.assign(w.numel(), 0.0);
        }
        auto data = w.mutable_data();
        const bool decay = w.rank() >= 2;
        if (!w.has_grad()) {
            if (decay) for (auto& x : data) x -= lr * cfg.weight_decay * x;
            continue;
        }
        auto g = w.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / c1, vh = v[i] / c2;
            double update = mh / (std::sqrt(vh) + cfg.adam_eps);
            if (decay) update += cfg.weight_decay * data[i];
            data[i] -= lr * update;
        }
    }
}

StepResult train_step(Model& model, std::span<const Batch> group, OptimizerState& state, const RunConfig& cfg) {
    if (group.empty()) throw ContractError("train_step: empty batch");
    for (const auto& b : group)
        if (b.kind != group[0].kind) throw ContractError("train_step: batch mixes data types");
    auto params = model.parameters();
    for (auto& p : params) p.tensor.zero_grad();
    StepResult r;
    r.kind = group[0].kind;
    const double inv = 1.0 / double(group.size());
    // Samples run one at a time; parameter gradients accumulate across backward calls.
    for (const auto& b : group) {
        active_tape().clear();
        LossResult loss = batch_loss(model, b, cfg.loss);
        const double value = loss.total.item();
        if (!std::isfinite(value)) throw ContractError("non-finite loss at step " + std::to_string(state.step + 1));
        r.loss += value * inv;
        backward(group.size() == 1 ? loss.total : scale(loss.total, inv));
    }
    double sq = 0.0;
    for (auto& p : params)
        if (p.tensor.has_grad())
            for (double g : p.tensor.grad()) sq += g * g;
    r.grad_norm = std::sqrt(sq);
    if (cfg.train.grad_clip > 0 && r.grad_norm > cfg.train.grad_clip) {
        const double f = cfg.train.grad_clip / r.grad_norm;
        for (auto& p : params)
            if (p.tensor.has_grad())
                for (double& g : p.tensor.mutable_grad()) g *= f;
    }
    r.lr = learning_rate(cfg.train, state.step + 1);
    adamw_update(model, state, cfg.train, r.lr);
    for (auto& p : params) p.tensor.zero_grad();
    return r;
}

StepResult train_step(Model& model, const Batch& batch, OptimizerState& state, const RunConfig& cfg) {
    return train_step(model, std::span(&batch, 1), state, cfg);
}

std::vector<StepResult> train(Model& model, OptimizerState& state, const RunConfig& cfg, std::size_t steps,
                              const StepCallback& callback) {
    DatasetStream stream(cfg, cfg.train.seed);
    stream.seek(state.step);
    std::vector<StepResult> results;
    results.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const std::vector<Batch> group = stream.next_group(cfg.train.batch);
        results.push_back(train_step(model, group, state, cfg));
        if (callback) callback(state.step, results.back());
    }
    return results;
}

} // namespace rmps
