#include "rmps/metrics.hpp"

#include "rmps/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace rmps {

void PQAccumulator::add(const PanopticResult& pred, const PanopticResult& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.ids.size() != gt.ids.size()) {
        throw DimensionError("panoptic_quality: prediction and ground truth extents differ");
    }
    std::map<std::size_t, std::size_t> gt_area, pred_area, pred_void;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> inter;
    for (std::size_t p = 0; p < gt.ids.size(); ++p) {
        const std::size_t g = gt.ids[p], q = pred.ids[p];
        if (g) ++gt_area[g];
        if (q) {
            ++pred_area[q];
            if (!g) ++pred_void[q];
        }
        if (g && q) ++inter[{g, q}];
    }
    for (const auto& s : gt.segments) classes_[s.class_id].is_thing = s.is_thing;
    for (const auto& s : pred.segments) classes_[s.class_id].is_thing = s.is_thing;

    std::map<std::size_t, bool> gt_matched, pred_matched;
    for (const auto& [key, count] : inter) {
        const auto [g, q] = key;
        const Segment* gs = gt.find(g);
        const Segment* ps = pred.find(q);
        if (!gs || !ps || gs->class_id != ps->class_id) continue;
        const double uni = double(gt_area[g] + pred_area[q] - count - pred_void[q]);
        const double iou = double(count) / uni;
        if (iou > 0.5) {
            auto& c = classes_[gs->class_id];
            ++c.tp;
            c.iou_sum += iou;
            gt_matched[g] = pred_matched[q] = true;
        }
    }
    for (const auto& s : gt.segments) {
        if (gt_area[s.id] == 0 || gt_matched[s.id]) continue;
        ++classes_[s.class_id].fn;
    }
    for (const auto& s : pred.segments) {
        if (pred_area[s.id] == 0 || pred_matched[s.id]) continue;
        if (2 * pred_void[s.id] > pred_area[s.id]) continue;
        ++classes_[s.class_id].fp;
    }
}

PQReport PQAccumulator::report() const {
    PQReport r;
    double pq = 0, sq = 0, rq = 0, pq_th = 0, pq_st = 0;
    std::size_t n = 0, n_th = 0, n_st = 0;
    for (auto [cls, c] : classes_) {
        const double denom = double(c.tp) + 0.5 * double(c.fp) + 0.5 * double(c.fn);
        if (denom == 0) continue;
        c.pq = c.iou_sum / denom;
        c.sq = c.tp ? c.iou_sum / double(c.tp) : 0.0;
        c.rq = double(c.tp) / denom;
        r.per_class[cls] = c;
        r.tp += c.tp;
        r.fp += c.fp;
        r.fn += c.fn;
        pq += c.pq;
        sq += c.sq;
        rq += c.rq;
        ++n;
        if (c.is_thing) {
            pq_th += c.pq;
            ++n_th;
        } else {
            pq_st += c.pq;
            ++n_st;
        }
    }
    if (n) {
        r.pq = 100 * pq / double(n);
        r.sq = 100 * sq / double(n);
        r.rq = 100 * rq / double(n);
    }
    if (n_th) r.pq_th = 100 * pq_th / double(n_th);
    if (n_st) r.pq_st = 100 * pq_st / double(n_st);
    return r;
}

PQReport panoptic_quality(const PanopticResult& pred, const PanopticResult& gt) {
    PQAccumulator acc;
    acc.add(pred, gt);
    return acc.report();
}

std::vector<double> default_iou_thresholds() {
    std::vector<double> t;
    for (int k = 0; k < 10; ++k) t.push_back(double(50 + 5 * k) / 100.0);
    return t;
}

double tube_iou(const TrackedInstance& a, const TrackedInstance& b) {
    if (a.masks.size() != b.masks.size()) throw DimensionError("tube_iou: tubes have different frame counts");
    std::size_t inter = 0, uni = 0;
    for (std::size_t t = 0; t < a.masks.size(); ++t) {
        const auto& ma = a.masks[t];
        const auto& mb = b.masks[t];
        const std::size_t n = std::max(ma.size(), mb.size());
        for (std::size_t p = 0; p < n; ++p) {
            const bool x = p < ma.size() && ma[p] > 0.5, y = p < mb.size() && mb[p] > 0.5;
            inter += x && y;
            uni += x || y;
        }
    }
    return uni ? double(inter) / double(uni) : 0.0;
}

TubeAPReport tube_map(const std::vector<ClipEvaluation>& clips, const std::vector<double>& thresholds) {
    TubeAPReport r;
    r.thresholds = thresholds;
    std::vector<std::size_t> classes;
    for (const auto& c : clips)
        for (const auto& g : c.ground_truth) classes.push_back(g.class_id);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    // Per (clip, pred, gt) IoUs are threshold independent.
    std::vector<std::vector<std::vector<double>>> ious(clips.size());
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const auto& ce = clips[c];
        ious[c].assign(ce.predictions.size(), std::vector<double>(ce.ground_truth.size(), 0.0));
        for (std::size_t i = 0; i < ce.predictions.size(); ++i)
            for (std::size_t j = 0; j < ce.ground_truth.size(); ++j)
                if (ce.predictions[i].class_id == ce.ground_truth[j].class_id)
                    ious[c][i][j] = tube_iou(ce.predictions[i], ce.ground_truth[j]);
    }

    for (double tau : thresholds) {
        double ap_sum = 0.0;
        for (std::size_t cls : classes) {
            struct Det {
                double score;
                bool tp;
            };
            std::vector<Det> dets;
            std::size_t npos = 0;
            for (std::size_t c = 0; c < clips.size(); ++c) {
                const auto& ce = clips[c];
                std::vector<std::size_t> order;
                for (std::size_t i = 0; i < ce.predictions.size(); ++i)
                    if (ce.predictions[i].class_id == cls) order.push_back(i);
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return ce.predictions[a].score > ce.predictions[b].score;
                });
                std::vector<bool> taken(ce.ground_truth.size(), false);
                for (const auto& g : ce.ground_truth) npos += g.class_id == cls;
                for (std::size_t i : order) {
                    double best = tau;
                    std::size_t match = ce.ground_truth.size();
                    for (std::size_t j = 0; j < ce.ground_truth.size(); ++j) {
                        if (taken[j] || ce.ground_truth[j].class_id != cls || ious[c][i][j] < best) continue;
                        best = ious[c][i][j];
                        match = j;
                    }
                    if (match < ce.ground_truth.size()) taken[match] = true;
                    dets.push_back({ce.predictions[i].score, match < ce.ground_truth.size()});
                }
            }
            std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
            std::vector<double> precision, recall;
            std::size_t tp = 0, fp = 0;
            for (const auto& d : dets) {
                d.tp ? ++tp : ++fp;
                precision.push_back(double(tp) / double(tp + fp));
                recall.push_back(double(tp) / double(npos));
            }
            for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
            double ap = 0.0;
            for (int k = 0; k <= 100; ++k) {
                const double rt = double(k) / 100.0;
                auto it = std::lower_bound(recall.begin(), recall.end(), rt);
                if (it != recall.end()) ap += precision[std::size_t(it - recall.begin())];
            }
            ap_sum += ap / 101.0;
        }
        r.ap.push_back(classes.empty() ? 0.0 : 100.0 * ap_sum / double(classes.size()));
    }
    if (!r.ap.empty()) r.map = std::accumulate(r.ap.begin(), r.ap.end(), 0.0) / double(r.ap.size());
    return r;
}

TubeAPReport tube_map(const std::vector<TrackedInstance>& preds, const std::vector<TrackedInstance>& gts,
                      const std::vector<double>& thresholds) {
    return tube_map(std::vector<ClipEvaluation>{{preds, gts}}, thresholds);
}

std::vector<TrackedInstance> clip_tracks(const ClipSample& clip) {
    std::vector<TrackedInstance> out;
    const std::size_t T = clip.frames.size();
    for (std::size_t t = 0; t < T; ++t) {
        for (const auto& e : clip.frames[t].entities) {
            if (!e.is_thing) continue;
            auto it = std::find_if(out.begin(), out.end(), [&](const TrackedInstance& x) { return x.id == e.instance_id; });
            if (it == out.end()) {
                TrackedInstance ti;
                ti.id = e.instance_id;
                ti.class_id = e.class_id;
                ti.score = 1.0;
                ti.masks.assign(T, std::vector<double>(e.mask.size(), 0.0));
                ti.present.assign(T, false);
                out.push_back(std::move(ti));
                it = out.end() - 1;
            }
            it->masks[t] = e.mask;
            it->present[t] = true;
        }
    }
    return out;
}

double mask_iou(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("mask_iou: masks differ in size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] > 0.5, y = b[i] > 0.5;
        inter += x && y;
        uni += x || y;
    }
    return uni ? double(inter) / double(uni) : 1.0;
}

double one_click_miou(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts) {
    if (preds.size() != gts.size()) {
        throw InputError("one_click_miou: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(gts.size()) + " targets");
    }
    if (preds.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += mask_iou(preds[i], gts[i]);
    return s / double(preds.size());
}

std::string format_pq_table(const PQReport& r) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %6s %8s %8s %8s %5s %5s %5s\n", "class", "kind", "PQ", "SQ", "RQ", "TP", "FP", "FN");
    os << line;
    for (const auto& [cls, c] : r.per_class) {
        std::snprintf(line, sizeof line, "%-8zu %6s %8.2f %8.2f %8.2f %5zu %5zu %5zu\n", cls, c.is_thing ? "thing" : "stuff",
                      100 * c.pq, 100 * c.sq, 100 * c.rq, c.tp, c.fp, c.fn);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-8s %6s %8.2f %8.2f %8.2f %5zu %5zu %5zu\n", "all", "", r.pq, r.sq, r.rq, r.tp, r.fp, r.fn);
    os << line;
    return os.str();
}

std::vector<std::pair<std::string, double>> pq_key_values(const PQReport& r) {
    return {{"pq", r.pq}, {"sq", r.sq}, {"rq", r.rq}, {"pq_th", r.pq_th}, {"pq_st", r.pq_st},
            {"tp", double(r.tp)}, {"fp", double(r.fp)}, {"fn", double(r.fn)}};
}

std::vector<std::pair<std::string, double>> tube_key_values(const TubeAPReport& r) {
    std::vector<std::pair<std::string, double>> kv{{"tube_map", r.map}};
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        kv.push_back({"ap" + std::to_string(int(std::lround(r.thresholds[i] * 100))), r.ap[i]});
    }
    return kv;
}

std::string format_key_values(const std::vector<std::pair<std::string, double>>& kv) {
    std::ostringstream os;
    char buf[64];
    for (const auto& [k, v] : kv) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        os << k << '=' << buf << '\n';
    }
    return os.str();
}

} // namespace rmps
