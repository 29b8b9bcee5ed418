#include "doctest.h"

#include "rmps/error.hpp"
#include "rmps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace rmps;

namespace {

// 10 x 30 image: a 10 x 10 thing (class 0) at columns [0, 10), stuff
// (class 3) elsewhere.
PanopticResult block_gt() {
    PanopticResult r;
    r.height = 10;
    r.width = 30;
    r.ids.resize(300);
    for (std::size_t p = 0; p < 300; ++p) r.ids[p] = p % 30 < 10 ? 1 : 2;
    r.segments = {{1, 0, true, 1.0}, {2, 3, false, 1.0}};
    return r;
}

// The thing block shifted right by `shift` columns; other pixels void.
PanopticResult shifted_pred(std::size_t shift) {
    PanopticResult r;
    r.height = 10;
    r.width = 30;
    r.ids.assign(300, 0);
    for (std::size_t p = 0; p < 300; ++p)
        if (p % 30 >= shift && p % 30 < shift + 10) r.ids[p] = 7;
    r.segments = {{7, 0, true, 0.9}};
    return r;
}

PanopticResult random_result(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t segments, std::size_t classes) {
    PanopticResult r;
    r.height = h;
    r.width = w;
    r.ids.resize(h * w);
    // Blocky regions so IoUs land on both sides of 0.5.
    std::uniform_int_distribution<std::size_t> pick(0, segments);
    const std::size_t bs = 4;
    std::vector<std::size_t> block((h / bs) * (w / bs));
    for (auto& b : block) b = pick(rng);
    for (std::size_t p = 0; p < h * w; ++p) r.ids[p] = block[(p / w / bs) * (w / bs) + (p % w) / bs];
    std::uniform_int_distribution<std::size_t> cls(0, classes - 1);
    for (std::size_t s = 1; s <= segments; ++s) {
        const std::size_t c = cls(rng);
        r.segments.push_back({s, c, c < 3, 0.5});
    }
    return r;
}

TrackedInstance tube(std::size_t cls, double score, std::vector<std::vector<double>> masks) {
    TrackedInstance t;
    t.class_id = cls;
    t.score = score;
    t.present.assign(masks.size(), true);
    t.masks = std::move(masks);
    return t;
}

std::vector<double> row_mask(std::size_t n, std::size_t from, std::size_t to) {
    std::vector<double> m(n, 0.0);
    for (std::size_t i = from; i < to; ++i) m[i] = 1.0;
    return m;
}

} // namespace

TEST_CASE("perfect panoptic prediction") {
    PQReport r = panoptic_quality(block_gt(), block_gt());
    CHECK(r.pq == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(r.sq == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(r.rq == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(r.pq_th == doctest::Approx(100.0));
    CHECK(r.pq_st == doctest::Approx(100.0));
    CHECK(r.tp == 2);
    CHECK(r.fp + r.fn == 0);
}

TEST_CASE("overlap 60 of 100 is not a match") {
    PQReport r = panoptic_quality(shifted_pred(4), block_gt());
    const ClassPQ& c = r.per_class.at(0);
    CHECK(c.tp == 0);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.pq == 0.0);
}

TEST_CASE("overlap 80 of 100 gives IoU two thirds") {
    PQReport r = panoptic_quality(shifted_pred(2), block_gt());
    const ClassPQ& c = r.per_class.at(0);
    CHECK(c.tp == 1);
    CHECK(100 * c.pq == doctest::Approx(200.0 / 3).epsilon(1e-12));
    CHECK(100 * c.sq == doctest::Approx(200.0 / 3).epsilon(1e-12));
    CHECK(100 * c.rq == doctest::Approx(100.0).epsilon(1e-14));
}

TEST_CASE("void ground truth is left out of the union") {
    PanopticResult gt = block_gt();
    for (auto& id : gt.ids) id = id == 2 ? 0 : id;
    gt.segments.pop_back();
    // The 40 px landing on void no longer count: IoU = 60 / 100.
    PQReport r = panoptic_quality(shifted_pred(4), gt);
    CHECK(r.per_class.at(0).tp == 1);
    CHECK(r.per_class.at(0).sq == doctest::Approx(0.6).epsilon(1e-14));
    // A prediction lying entirely on void is ignored.
    PanopticResult pred = shifted_pred(20);
    CHECK(panoptic_quality(pred, gt).per_class.at(0).fp == 0);
}

TEST_CASE("classes absent from both sides are excluded from the average") {
    PanopticResult gt = block_gt(), pred = block_gt();
    pred.segments[1].class_id = 4; // stuff mislabeled
    PQReport r = panoptic_quality(pred, gt);
    CHECK(r.per_class.size() == 3);
    CHECK(r.pq == doctest::Approx(100.0 / 3).epsilon(1e-12));
}

TEST_CASE("PQ equals SQ times RQ on random inputs") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        PanopticResult gt = random_result(rng, 16, 16, 5, 5), pred = random_result(rng, 16, 16, 6, 5);
        PQReport r = panoptic_quality(pred, gt);
        for (const auto& [cls, c] : r.per_class) {
            if (c.tp == 0) continue;
            CHECK(std::fabs(c.pq - c.sq * c.rq) <= 1e-12);
        }
        CHECK((r.pq >= 0 && r.pq <= 100));
    }
}

TEST_CASE("single-class PQ is symmetric in prediction and ground truth") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        PanopticResult a = random_result(rng, 16, 16, 4, 1), b = random_result(rng, 16, 16, 4, 1);
        for (auto* r : {&a, &b})
            for (auto& id : r->ids) id = id ? id : 1; // no void
        PQReport ab = panoptic_quality(a, b), ba = panoptic_quality(b, a);
        CHECK(ab.pq == doctest::Approx(ba.pq).epsilon(1e-12));
        CHECK(ab.fp == ba.fn);
        CHECK(ab.fn == ba.fp);
    }
}

TEST_CASE("PQ is invariant under segment relabeling") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        PanopticResult gt = random_result(rng, 16, 16, 5, 5), pred = random_result(rng, 16, 16, 5, 5);
        PanopticResult relabeled = pred;
        std::vector<std::size_t> perm(6);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin() + 1, perm.end(), rng);
        for (auto& id : relabeled.ids) id = perm[id] * 10;
        for (auto& s : relabeled.segments) s.id = perm[s.id] * 10;
        std::reverse(relabeled.segments.begin(), relabeled.segments.end());
        CHECK(panoptic_quality(relabeled, gt).pq == panoptic_quality(pred, gt).pq);
    }
}

TEST_CASE("accumulated PQ over images") {
    PQAccumulator acc;
    acc.add(block_gt(), block_gt());
    acc.add(shifted_pred(4), block_gt());
    PQReport r = acc.report();
    // Class 0: one TP (IoU 1), one FP, one FN -> 1 / 2. Class 3: 1 TP, 1 FN -> 1 / 1.5.
    CHECK(r.per_class.at(0).pq == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r.per_class.at(3).pq == doctest::Approx(1 / 1.5).epsilon(1e-14));
    CHECK_THROWS_AS(acc.add(shifted_pred(0), PanopticResult{}), DimensionError);
}

TEST_CASE("tube mAP trivial cases") {
    const auto th = default_iou_thresholds();
    REQUIRE(th.size() == 10);
    CHECK(th.front() == 0.5);
    CHECK(th.back() == 0.95);
    std::vector<TrackedInstance> gts = {tube(0, 1.0, {row_mask(20, 0, 5), row_mask(20, 2, 7)}),
                                        tube(1, 1.0, {row_mask(20, 10, 15), row_mask(20, 12, 18)})};
    std::vector<TrackedInstance> preds = gts;
    preds[0].score = 0.8;
    preds[1].score = 0.7;
    TubeAPReport perfect = tube_map(preds, gts, th);
    CHECK(perfect.map == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(tube_map({}, gts, th).map == 0.0);
}

TEST_CASE("tube with IoU exactly 0.6 matches up to threshold 0.6") {
    // Per frame: gt 5 px, pred covers 3 of them plus nothing else -> 3/5.
    std::vector<TrackedInstance> gts = {tube(2, 1.0, {row_mask(20, 0, 5), row_mask(20, 5, 10)})};
    std::vector<TrackedInstance> preds = {tube(2, 0.9, {row_mask(20, 0, 3), row_mask(20, 5, 8)})};
    CHECK(tube_iou(preds[0], gts[0]) == 0.6);
    TubeAPReport r = tube_map(preds, gts, default_iou_thresholds());
    const std::vector<double> expect = {100, 100, 100, 0, 0, 0, 0, 0, 0, 0};
    REQUIRE(r.ap.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(r.ap[i] == doctest::Approx(expect[i]).epsilon(1e-14));
    CHECK(r.map == doctest::Approx(30.0).epsilon(1e-14));
    for (std::size_t i = 1; i < r.ap.size(); ++i) CHECK(r.ap[i] <= r.ap[i - 1]);
}

TEST_CASE("tube AP ranks by score") {
    // Two GT tubes; three predictions ranked TP, FP, TP.
    std::vector<TrackedInstance> gts = {tube(0, 1.0, {row_mask(30, 0, 5)}), tube(0, 1.0, {row_mask(30, 10, 15)})};
    std::vector<TrackedInstance> preds = {tube(0, 0.9, {row_mask(30, 0, 5)}), tube(0, 0.8, {row_mask(30, 20, 25)}),
                                          tube(0, 0.7, {row_mask(30, 10, 15)})};
    // Precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1; interpolated envelope is
    // 1 for recall <= 0.5 (51 points) and 2/3 above (50 points).
    const double expect = 100.0 * (51 * 1.0 + 50 * (2.0 / 3)) / 101;
    CHECK(tube_map(preds, gts, {0.5}).map == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("duplicated frames leave tube AP unchanged") {
    std::mt19937_64 rng(4);
    std::bernoulli_distribution b(0.4);
    auto rand_mask = [&] {
        std::vector<double> m(64);
        for (auto& v : m) v = b(rng);
        return m;
    };
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<TrackedInstance> g1, p1, g2, p2;
        for (int k = 0; k < 3; ++k) {
            auto gm = rand_mask(), pm = rand_mask();
            g1.push_back(tube(k % 2, 1.0, {gm}));
            p1.push_back(tube(k % 2, 0.3 + 0.2 * k, {pm}));
            g2.push_back(tube(k % 2, 1.0, {gm, gm}));
            p2.push_back(tube(k % 2, 0.3 + 0.2 * k, {pm, pm}));
        }
        CHECK(tube_map(p1, g1, {0.1, 0.2, 0.3}).map == tube_map(p2, g2, {0.1, 0.2, 0.3}).map);
    }
}

TEST_CASE("clip tracks follow instance ids") {
    ClipSample clip;
    Scene f0, f1;
    f0.entities = {EntityGT{row_mask(8, 0, 2), 1, true, 5}, EntityGT{row_mask(8, 2, 8), 3, false, 0}};
    f1.entities = {EntityGT{row_mask(8, 1, 3), 1, true, 5}, EntityGT{row_mask(8, 4, 6), 0, true, 6}};
    clip.frames = {f0, f1};
    auto tracks = clip_tracks(clip);
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].id == 5);
    CHECK(tracks[0].masks[1] == row_mask(8, 1, 3));
    CHECK(tracks[1].present == std::vector<bool>{false, true});
    CHECK(tracks[1].masks[0] == std::vector<double>(8, 0.0));
}

TEST_CASE("one-click mIoU") {
    std::vector<std::vector<double>> gts = {row_mask(10, 0, 4), row_mask(10, 2, 8)};
    CHECK(one_click_miou(gts, gts) == 1.0);
    CHECK(one_click_miou({std::vector<double>(10, 0.0), std::vector<double>(10, 0.0)}, gts) == 0.0);
    CHECK(one_click_miou({row_mask(10, 0, 2)}, {gts[0]}) == 0.5);
    CHECK(one_click_miou({row_mask(10, 0, 2), row_mask(10, 2, 8)}, gts) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(one_click_miou({gts[0]}, gts), InputError);
}

TEST_CASE("report formatting") {
    PQReport r = panoptic_quality(block_gt(), block_gt());
    const std::string kv = format_key_values(pq_key_values(r));
    CHECK(kv.find("pq=100.000000\n") != std::string::npos);
    CHECK(kv.find("fn=0.000000\n") != std::string::npos);
    CHECK(format_pq_table(r).find("stuff") != std::string::npos);
    TubeAPReport t;
    t.thresholds = {0.5, 0.75};
    t.ap = {80, 40};
    t.map = 60;
    const std::string tk = format_key_values(tube_key_values(t));
    CHECK(tk == "tube_map=60.000000\nap50=80.000000\nap75=40.000000\n");
}
