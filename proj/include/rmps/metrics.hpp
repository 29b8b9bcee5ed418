#pragma once

#include "rmps/infer.hpp"

#include <map>
#include <string>
#include <vector>

namespace rmps {

struct ClassPQ {
    bool is_thing = false;
    std::size_t tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
    double pq = 0.0, sq = 0.0, rq = 0.0; // in [0, 1]
};

/// Aggregates in [0, 100]; per-class values in [0, 1].
struct PQReport {
    std::map<std::size_t, ClassPQ> per_class;
    double pq = 0.0, sq = 0.0, rq = 0.0;
    double pq_th = 0.0, pq_st = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
};

/// Accumulates matches over many images, then averages PQ over classes that
/// occur in ground truth or predictions. A match needs the same class and
/// IoU > 0.5; ground-truth void pixels are left out of the union, and
/// predictions lying mostly on void are not counted as false positives.
class PQAccumulator {
  public:
    void add(const PanopticResult& pred, const PanopticResult& gt);
    PQReport report() const;

  private:
    std::map<std::size_t, ClassPQ> classes_;
};

PQReport panoptic_quality(const PanopticResult& pred, const PanopticResult& gt);

/// Thresholds 0.50:0.05:0.95.
std::vector<double> default_iou_thresholds();

struct TubeAPReport {
    std::vector<double> thresholds;
    std::vector<double> ap; // per threshold, in [0, 100]
    double map = 0.0;
};

/// Sum over frames of intersections divided by sum of unions.
double tube_iou(const TrackedInstance& a, const TrackedInstance& b);

struct ClipEvaluation {
    std::vector<TrackedInstance> predictions;
    std::vector<TrackedInstance> ground_truth;
};

/// COCO-style AP per class: predictions ranked by score across clips,
/// greedy matching within each clip (a match needs tube IoU >= threshold),
/// 101-point interpolated precision; averaged over classes with ground truth.
TubeAPReport tube_map(const std::vector<ClipEvaluation>& clips, const std::vector<double>& thresholds);
TubeAPReport tube_map(const std::vector<TrackedInstance>& preds, const std::vector<TrackedInstance>& gts,
                      const std::vector<double>& thresholds);

/// Ground-truth thing tubes of a clip, keyed by instance id.
std::vector<TrackedInstance> clip_tracks(const ClipSample& clip);

double mask_iou(const std::vector<double>& a, const std::vector<double>& b);
/// Mean IoU over prompts. Throws InputError on count mismatch.
double one_click_miou(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts);

std::string format_pq_table(const PQReport& report);
std::vector<std::pair<std::string, double>> pq_key_values(const PQReport& report);
std::vector<std::pair<std::string, double>> tube_key_values(const TubeAPReport& report);
std::string format_key_values(const std::vector<std::pair<std::string, double>>& kv);

} // namespace rmps
