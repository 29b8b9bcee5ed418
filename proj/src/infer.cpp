#include "rmps/infer.hpp"

#include "rmps/error.hpp"
#include "rmps/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace rmps {

namespace {

std::vector<double> softmax_row(std::span<const double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) z += (p[i] = std::exp(row[i] - mx));
    for (auto& v : p) v /= z;
    return p;
}

double sigmoid_value(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Thresholded masks of one [n x H x W] tensor row.
std::vector<double> binarize(std::span<const double> logits, double threshold) {
    std::vector<double> m(logits.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = sigmoid_value(logits[i]) > threshold ? 1.0 : 0.0;
    return m;
}

} // namespace

const Segment* PanopticResult::find(std::size_t id) const {
    for (const auto& s : segments)
        if (s.id == id) return &s;
    return nullptr;
}

PanopticResult PanopticResult::canonical() const {
    PanopticResult out = *this;
    std::map<std::size_t, std::size_t> remap;
    for (auto& id : out.ids) {
        if (id == 0) continue;
        auto it = remap.find(id);
        if (it == remap.end()) it = remap.emplace(id, remap.size() + 1).first;
        id = it->second;
    }
    out.segments.clear();
    for (const auto& s : segments) {
        auto it = remap.find(s.id);
        if (it == remap.end()) continue;
        Segment c = s;
        c.id = it->second;
        out.segments.push_back(c);
    }
    std::sort(out.segments.begin(), out.segments.end(), [](const Segment& a, const Segment& b) { return a.id < b.id; });
    return out;
}

Tensor upsample_logits(const Tensor& logits, std::size_t height, std::size_t width) {
    if (logits.rank() != 3) throw DimensionError("upsample_logits: expected [n x h x w], got " + shape_str(logits.shape()));
    return bilinear_resize(logits, height, width);
}

std::vector<EntityPrediction> entity_predictions(const Tensor& class_logits, const MaskLogits& masks) {
    const std::size_t n = class_logits.dim(0), c1 = class_logits.dim(1);
    Tensor shaped = masks.shaped();
    const std::size_t per = masks.logits.dim(1);
    Shape row_shape(shaped.shape().begin() + 1, shaped.shape().end());
    std::vector<EntityPrediction> out(n);
    auto cl = class_logits.data();
    auto ml = masks.logits.data();
    for (std::size_t q = 0; q < n; ++q) {
        auto& e = out[q];
        e.class_probs = softmax_row(cl.subspan(q * c1, c1));
        e.label = std::size_t(std::max_element(e.class_probs.begin(), e.class_probs.end() - 1) - e.class_probs.begin());
        e.score = e.class_probs[e.label];
        e.mask_logits = Tensor(row_shape, std::vector<double>(ml.begin() + std::ptrdiff_t(q * per),
                                                              ml.begin() + std::ptrdiff_t((q + 1) * per)));
    }
    return out;
}

PanopticResult panoptic_merge(const Tensor& class_logits, const Tensor& mask_logits, std::size_t height,
                              std::size_t width, std::size_t thing_classes, const InferConfig& cfg) {
    if (class_logits.rank() != 2 || mask_logits.rank() != 3 || class_logits.dim(0) != mask_logits.dim(0)) {
        throw DimensionError("panoptic_merge: class logits " + shape_str(class_logits.shape()) + " vs masks " +
                             shape_str(mask_logits.shape()));
    }
    const std::size_t n = class_logits.dim(0), c1 = class_logits.dim(1), plane = height * width;
    PanopticResult r;
    r.height = height;
    r.width = width;
    r.ids.assign(plane, 0);

    std::vector<std::size_t> kept;
    std::vector<double> scores(n);
    std::vector<std::size_t> labels(n);
    auto cl = class_logits.data();
    for (std::size_t q = 0; q < n; ++q) {
        auto p = softmax_row(cl.subspan(q * c1, c1));
        labels[q] = std::size_t(std::max_element(p.begin(), p.end() - 1) - p.begin());
        scores[q] = p[labels[q]];
        if (scores[q] >= cfg.s_min) kept.push_back(q);
    }
    if (kept.empty()) return r;

    Tensor up = upsample_logits(mask_logits, height, width);
    auto ud = up.data();
    std::vector<double> prob(kept.size() * plane);
    for (std::size_t k = 0; k < kept.size(); ++k)
        for (std::size_t p = 0; p < plane; ++p) prob[k * plane + p] = sigmoid_value(ud[kept[k] * plane + p]);

    // Saturated sigmoids and softmaxes tie exactly; the raw logit breaks the
    // tie so ownership does not depend on query order.
    std::vector<std::size_t> owner(plane, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        double best = -1.0, best_logit = -INFINITY;
        for (std::size_t k = 0; k < kept.size(); ++k) {
            const double v = scores[kept[k]] * prob[k * plane + p];
            const double logit = ud[kept[k] * plane + p];
            if (v > best || (v == best && logit > best_logit)) {
                best = v;
                best_logit = logit;
                owner[p] = k;
            }
        }
    }

    std::map<std::size_t, std::size_t> stuff_ids;
    std::size_t next_id = 1;
    for (std::size_t k = 0; k < kept.size(); ++k) {
        std::size_t area = 0, original = 0, retained = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            const bool fg = prob[k * plane + p] >= cfg.mask_threshold;
            area += owner[p] == k;
            original += fg;
            retained += owner[p] == k && fg;
        }
        if (area == 0 || original == 0 || retained == 0) continue;
        if (double(retained) < cfg.keep_frac * double(original) || retained < cfg.min_area) continue;
        const std::size_t q = kept[k];
        const bool is_thing = labels[q] < thing_classes;
        std::size_t id;
        auto it = stuff_ids.find(labels[q]);
        if (!is_thing && it != stuff_ids.end()) {
            id = it->second;
        } else {
            id = next_id++;
            r.segments.push_back({id, labels[q], is_thing, scores[q]});
            if (!is_thing) stuff_ids[labels[q]] = id;
        }
        for (std::size_t p = 0; p < plane; ++p)
            if (owner[p] == k && prob[k * plane + p] >= cfg.mask_threshold) r.ids[p] = id;
    }
    return r;
}

PanopticResult infer_panoptic(const Model& model, const Tensor& image, const InferConfig& cfg) {
    NoGradGuard guard;
    FeatureMap f = model_features(model, image);
    ModelOutput out = model_forward(model, f, true, {});
    return panoptic_merge(out.class_logits, out.object_masks->shaped(), image.dim(1), image.dim(2),
                          model.cfg.thing_classes, cfg);
}

PanopticResult scene_panoptic(const Scene& scene) {
    PanopticResult r;
    r.height = r.width = scene.size;
    r.ids.assign(scene.size * scene.size, 0);
    for (std::size_t i = 0; i < scene.entities.size(); ++i) {
        const auto& e = scene.entities[i];
        r.segments.push_back({i + 1, e.class_id, e.is_thing, 1.0});
        for (std::size_t p = 0; p < e.mask.size(); ++p)
            if (e.mask[p] > 0.5) r.ids[p] = i + 1;
    }
    return r;
}

std::vector<std::optional<std::size_t>> link_queries(const Tensor& previous, const Tensor& current, double threshold) {
    if (previous.rank() != 2 || current.rank() != 2 || previous.dim(1) != current.dim(1)) {
        throw DimensionError("link_queries: " + shape_str(previous.shape()) + " vs " + shape_str(current.shape()));
    }
    const std::size_t n0 = previous.dim(0), n1 = current.dim(0), d = current.dim(1);
    auto a = previous.data(), b = current.data();
    auto norm = [d](std::span<const double> x, std::size_t i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[i * d + k];
        return std::sqrt(s);
    };
    CostMatrix sim(n1, n0);
    for (std::size_t j = 0; j < n1; ++j) {
        const double nj = norm(b, j);
        for (std::size_t i = 0; i < n0; ++i) {
            double dot = 0;
            for (std::size_t k = 0; k < d; ++k) dot += b[j * d + k] * a[i * d + k];
            const double denom = nj * norm(a, i);
            sim.at(j, i) = denom > 0 ? dot / denom : 0.0;
        }
    }
    CostMatrix cost(n1, n0);
    for (std::size_t i = 0; i < cost.costs.size(); ++i) cost.costs[i] = 1.0 - sim.costs[i];
    std::vector<std::optional<std::size_t>> link(n1);
    for (auto [j, i] : hungarian(cost).pairs)
        if (sim.at(j, i) >= threshold) link[j] = i;
    return link;
}

std::vector<TrackedInstance> infer_vis(const Model& model, std::span<const Tensor> frames, const InferConfig& cfg) {
    if (frames.empty()) throw InputError("infer_vis: empty clip");
    NoGradGuard guard;
    const std::size_t total = frames.size(), window = model.cfg.clip_frames;
    const std::size_t H = frames[0].dim(1), W = frames[0].dim(2);
    const std::size_t c1 = model.cfg.num_classes() + 1;

    struct Track {
        std::size_t id;
        std::vector<double> prob_sum;
        std::size_t windows = 0;
        std::vector<std::vector<double>> masks;
        std::vector<bool> present;
    };
    std::vector<Track> tracks;
    std::vector<std::size_t> prev_track;
    Tensor prev_queries;
    std::size_t next_id = 1;

    for (std::size_t s = 0; s < total; s += window) {
        const std::size_t len = std::min(window, total - s);
        FeatureMap f = model_features_video(model, frames.subspan(s, len));
        ModelOutput out = model_forward(model, f, true, {});
        const std::size_t n = out.class_logits.dim(0);
        std::vector<std::optional<std::size_t>> link(n);
        if (prev_queries.defined()) link = link_queries(prev_queries, out.object_queries, cfg.sim_threshold);

        std::vector<std::size_t> cur_track(n);
        for (std::size_t q = 0; q < n; ++q) {
            if (link[q]) {
                cur_track[q] = prev_track[*link[q]];
            } else {
                cur_track[q] = tracks.size();
                Track t;
                t.id = next_id++;
                t.prob_sum.assign(c1, 0.0);
                t.masks.assign(total, std::vector<double>(H * W, 0.0));
                t.present.assign(total, false);
                tracks.push_back(std::move(t));
            }
        }
        const std::size_t h = f.height, w = f.width;
        Tensor up = upsample_logits(reshape(out.object_masks->logits, {n * len, h, w}), H, W);
        auto ud = up.data();
        auto cl = out.class_logits.data();
        for (std::size_t q = 0; q < n; ++q) {
            Track& t = tracks[cur_track[q]];
            auto p = softmax_row(cl.subspan(q * c1, c1));
            for (std::size_t c = 0; c < c1; ++c) t.prob_sum[c] += p[c];
            ++t.windows;
            for (std::size_t k = 0; k < len; ++k) {
                t.masks[s + k] = binarize(ud.subspan((q * len + k) * H * W, H * W), cfg.mask_threshold);
                t.present[s + k] = true;
            }
        }
        prev_queries = out.object_queries;
        prev_track = cur_track;
    }

    std::vector<TrackedInstance> result;
    for (const auto& t : tracks) {
        std::vector<double> mean(c1);
        for (std::size_t c = 0; c < c1; ++c) mean[c] = t.prob_sum[c] / double(t.windows);
        const std::size_t label = std::size_t(std::max_element(mean.begin(), mean.end() - 1) - mean.begin());
        if (label >= model.cfg.thing_classes || mean[label] < cfg.vis_score_min) continue;
        result.push_back({t.id, label, mean[label], t.masks, t.present});
    }
    return result;
}

std::vector<std::vector<double>> infer_interactive(const Model& model, const Tensor& image,
                                                   std::span<const VisualPrompt> prompts, const InferConfig& cfg) {
    if (prompts.empty()) throw InputError("infer_interactive: no prompts");
    NoGradGuard guard;
    FeatureMap f = model_features(model, image);
    ModelOutput out = model_forward(model, f, false, prompts);
    const std::size_t H = image.dim(1), W = image.dim(2);
    Tensor up = upsample_logits(out.prompt_masks->shaped(), H, W);
    auto ud = up.data();
    std::vector<std::vector<double>> masks;
    for (std::size_t k = 0; k < prompts.size(); ++k) masks.push_back(binarize(ud.subspan(k * H * W, H * W), cfg.mask_threshold));
    return masks;
}

std::vector<std::vector<double>> infer_prompt_video(const Model& model, std::span<const Tensor> frames,
                                                    const VisualPrompt& prompt, const InferConfig& cfg) {
    if (frames.empty()) throw InputError("infer_prompt_video: empty clip");
    NoGradGuard guard;
    FeatureMap f = model_features_video(model, frames);
    ModelOutput out = model_forward(model, f, false, std::span(&prompt, 1));
    const std::size_t T = frames.size(), H = frames[0].dim(1), W = frames[0].dim(2);
    Tensor up = upsample_logits(reshape(out.prompt_masks->logits, {T, f.height, f.width}), H, W);
    auto ud = up.data();
    std::vector<std::vector<double>> masks;
    for (std::size_t t = 0; t < T; ++t) masks.push_back(binarize(ud.subspan(t * H * W, H * W), cfg.mask_threshold));
    return masks;
}

} // namespace rmps
