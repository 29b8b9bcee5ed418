#include "rmps/match_loss.hpp"

#include "rmps/error.hpp"

#include <cmath>

namespace rmps {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_pair(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": prediction " + shape_str(a.shape()) + " vs target " +
                             shape_str(b.shape()));
    }
}

} // namespace

std::vector<double> downsample_nearest(std::span<const double> mask, std::size_t height, std::size_t width,
                                       std::size_t stride) {
    if (mask.size() != height * width) throw DimensionError("downsample_nearest: mask size does not match extents");
    const std::size_t h = (height + stride - 1) / stride, w = (width + stride - 1) / stride;
    std::vector<double> out(h * w);
    for (std::size_t u = 0; u < h; ++u) {
        const std::size_t y = std::min(height - 1, stride * u + stride / 2);
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t x = std::min(width - 1, stride * v + stride / 2);
            out[u * w + v] = mask[y * width + x];
        }
    }
    return out;
}

std::vector<double> downsample_area(std::span<const double> mask, std::size_t height, std::size_t width,
                                    std::size_t stride) {
    if (mask.size() != height * width) throw DimensionError("downsample_area: mask size does not match extents");
    const std::size_t h = (height + stride - 1) / stride, w = (width + stride - 1) / stride;
    std::vector<double> out(h * w);
    for (std::size_t u = 0; u < h; ++u) {
        for (std::size_t v = 0; v < w; ++v) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t y = stride * u; y < std::min(height, stride * (u + 1)); ++y)
                for (std::size_t x = stride * v; x < std::min(width, stride * (v + 1)); ++x, ++n) sum += mask[y * width + x];
            out[u * w + v] = sum / double(n);
        }
    }
    return out;
}

std::vector<double> downsample_mask(std::span<const double> mask, std::size_t height, std::size_t width,
                                    std::size_t stride, MaskTargetRule rule) {
    return rule == MaskTargetRule::area ? downsample_area(mask, height, width, stride)
                                        : downsample_nearest(mask, height, width, stride);
}

Tensor mask_ce_loss(const Tensor& logits, const Tensor& target) {
    check_pair("mask_ce_loss", logits, target);
    return bce_with_logits(logits, target);
}

Tensor cls_loss(const Tensor& logits, std::span<const std::size_t> labels, std::size_t no_object,
                double no_object_weight) {
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] == no_object ? no_object_weight : 1.0;
    return softmax_cross_entropy(logits, labels, w);
}

CostMatrix build_cost_matrix(const Tensor& class_logits, const Tensor& mask_logits, const LossTargets& targets,
                             const LossWeights& weights) {
    const std::size_t n = mask_logits.dim(0), g = targets.count();
    if (g == 0) throw InputError("build_cost_matrix: no ground-truth entities");
    const std::size_t p = mask_logits.dim(1);
    if (targets.masks.shape() != Shape{g, p} || class_logits.dim(0) != n) {
        throw DimensionError("build_cost_matrix: masks " + shape_str(mask_logits.shape()) + ", targets " +
                             shape_str(targets.masks.shape()) + ", class logits " + shape_str(class_logits.shape()));
    }
    const std::size_t c1 = class_logits.dim(1);
    auto x = mask_logits.data();
    auto gt = targets.masks.data();
    auto cl = class_logits.data();

    std::vector<double> gt_sum(g, 0.0);
    for (std::size_t j = 0; j < g; ++j)
        for (std::size_t q = 0; q < p; ++q) gt_sum[j] += gt[j * p + q];

    CostMatrix cost(n, g);
    std::vector<double> prob(c1), sig(p);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = cl.data() + i * c1;
        double mx = row[0];
        for (std::size_t c = 1; c < c1; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < c1; ++c) z += (prob[c] = std::exp(row[c] - mx));
        for (auto& v : prob) v /= z;

        const double* xi = x.data() + i * p;
        double sp_sum = 0.0, sig_sum = 0.0;
        for (std::size_t q = 0; q < p; ++q) {
            sp_sum += softplus(xi[q]);
            sig[q] = stable_sigmoid(xi[q]);
            sig_sum += sig[q];
        }
        for (std::size_t j = 0; j < g; ++j) {
            const double* gj = gt.data() + j * p;
            double xg = 0.0, sg = 0.0;
            for (std::size_t q = 0; q < p; ++q) {
                xg += xi[q] * gj[q];
                sg += sig[q] * gj[q];
            }
            const double ce = (sp_sum - xg) / double(p);
            const double dice = 1.0 - (2.0 * sg + 1.0) / (sig_sum + gt_sum[j] + 1.0);
            const std::size_t cls = targets.classes[j];
            if (cls >= c1) throw InputError("build_cost_matrix: class " + std::to_string(cls) + " out of range");
            cost.at(i, j) = weights.cls * -prob[cls] + weights.ce * ce + weights.dice * dice;
        }
    }
    return cost;
}

Tensor stage_loss(const PredictionSet& pred, const LossTargets& targets, const LossWeights& weights,
                  LossTerms* terms, Assignment* assignment) {
    LossTerms t;
    Tensor loss = Tensor::scalar(0.0);
    if (pred.object_masks.defined()) {
        const std::size_t n = pred.object_masks.dim(0);
        const std::size_t no_object = pred.class_logits.dim(1) - 1;
        std::vector<std::size_t> labels(n, no_object);
        Assignment a;
        if (targets.count() > 0) {
            {
                NoGradGuard guard;
                a = hungarian(build_cost_matrix(pred.class_logits, pred.object_masks, targets, weights));
            }
            std::vector<std::size_t> rows, cols;
            for (auto [i, j] : a.pairs) {
                labels[i] = targets.classes[j];
                rows.push_back(i);
                cols.push_back(j);
            }
            Tensor matched = index_rows(pred.object_masks, rows);
            Tensor gt = index_rows(targets.masks, cols);
            Tensor ce = mask_ce_loss(matched, gt);
            Tensor dice = dice_loss(matched, gt);
            t.ce = ce.item();
            t.dice = dice.item();
            loss = add(loss, add(scale(ce, weights.ce), scale(dice, weights.dice)));
        } else {
            for (std::size_t i = 0; i < n; ++i) a.unmatched.push_back(i);
        }
        Tensor cls = cls_loss(pred.class_logits, labels, no_object, weights.no_object);
        t.cls = cls.item();
        loss = add(loss, scale(cls, weights.cls));
        if (assignment) *assignment = std::move(a);
    }
    if (pred.prompt_masks.defined()) {
        if (!targets.prompt_masks.defined()) throw InputError("stage_loss: prompt predictions without prompt targets");
        Tensor ce = mask_ce_loss(pred.prompt_masks, targets.prompt_masks);
        Tensor dice = dice_loss(pred.prompt_masks, targets.prompt_masks);
        t.prompt_ce = ce.item();
        t.prompt_dice = dice.item();
        loss = add(loss, add(scale(ce, weights.ce), scale(dice, weights.dice)));
    }
    if (terms) *terms = t;
    return loss;
}

LossResult total_loss(std::span<const PredictionSet> stages, const LossTargets& targets, const LossWeights& weights) {
    if (stages.empty()) throw InputError("total_loss: no predictions");
    LossResult r;
    Tensor sum_loss;
    for (const auto& s : stages) {
        LossTerms t;
        Assignment a;
        Tensor l = stage_loss(s, targets, weights, &t, &a);
        sum_loss = sum_loss.defined() ? add(sum_loss, l) : l;
        r.per_stage.push_back(t);
        if (s.object_masks.defined()) r.assignments.push_back(std::move(a));
    }
    r.total = scale(sum_loss, 1.0 / double(stages.size()));
    return r;
}

} // namespace rmps
