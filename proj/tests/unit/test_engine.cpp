#include "doctest.h"
#include "helpers.hpp"

#include "rmps/checkpoint.hpp"
#include "rmps/error.hpp"
#include "rmps/infer.hpp"
#include "rmps/metrics.hpp"
#include "rmps/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace rmps;
using namespace rmps::testing;

namespace {

RunConfig small_run() {
    RunConfig cfg;
    cfg.model.d = 16;
    cfg.model.n_queries = 8;
    cfg.model.heads = 4;
    cfg.model.image_size = 32;
    cfg.model.channels = {4, 8, 8, 16};
    cfg.train.lr = 1e-3;
    cfg.train.steps = 50;
    cfg.train.warmup = 5;
    cfg.train.seed = 3;
    return cfg;
}

// Widen the init so untrained outputs carry structure: varied masks and
// confident classes.
void randomize(Model& m, std::uint64_t seed, double sigma = 0.4) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& p : m.parameters()) {
        const bool gamma = p.name.size() > 6 && p.name.ends_with(".gamma");
        for (auto& v : p.tensor.mutable_data()) v = gamma ? 1.0 + 0.1 * g(rng) : sigma * g(rng);
    }
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

bool same_params(const Model& a, const Model& b) {
    const ParamList pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].name != pb[i].name || !bit_identical(pa[i].tensor, pb[i].tensor)) return false;
    return true;
}

void check_partition(const PanopticResult& r) {
    REQUIRE(r.ids.size() == r.height * r.width);
    std::set<std::size_t> table, in_map;
    for (const auto& s : r.segments) CHECK(table.insert(s.id).second);
    for (std::size_t id : r.ids)
        if (id) in_map.insert(id);
    CHECK(in_map == table);
}

} // namespace

// ---------------------------------------------------------------------------
// Merge and linking on hand-built logits.

TEST_CASE("one saturated full-image query covers every pixel") {
    Tensor cls = Tensor::full({1, 6}, -10.0);
    cls.mutable_data()[1] = 10.0;
    PanopticResult r = panoptic_merge(cls, Tensor::full({1, 8, 8}, 20.0), 8, 8, 3, InferConfig{});
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0].class_id == 1);
    CHECK(r.segments[0].is_thing);
    for (std::size_t id : r.ids) CHECK(id == r.segments[0].id);
}

TEST_CASE("two disjoint saturated masks give two exact segments") {
    Tensor cls = Tensor::full({3, 6}, -10.0);
    cls.mutable_data()[0 * 6 + 0] = 10.0;
    cls.mutable_data()[1 * 6 + 3] = 10.0; // stuff
    // Third query is no-object.
    cls.mutable_data()[2 * 6 + 5] = 10.0;
    Tensor masks = Tensor::full({3, 8, 8}, -20.0);
    for (std::size_t p = 0; p < 64; ++p) masks.mutable_data()[(p % 8 < 4 ? 0 : 64) + p] = 20.0;
    PanopticResult r = panoptic_merge(cls, masks, 8, 8, 3, InferConfig{});
    REQUIRE(r.segments.size() == 2);
    for (std::size_t p = 0; p < 64; ++p) {
        const Segment* s = r.find(r.ids[p]);
        REQUIRE(s);
        CHECK(s->class_id == (p % 8 < 4 ? 0u : 3u));
    }
    CHECK_FALSE(r.find(r.ids[7])->is_thing);
}

TEST_CASE("low scores give an all-void map") {
    PanopticResult r = panoptic_merge(Tensor::zeros({4, 6}), Tensor::full({4, 8, 8}, 20.0), 8, 8, 3, InferConfig{});
    CHECK(r.segments.empty());
    for (std::size_t id : r.ids) CHECK(id == 0);
}

TEST_CASE("stuff of one class merges and small segments drop") {
    Tensor cls = Tensor::full({3, 6}, -10.0);
    cls.mutable_data()[0 * 6 + 4] = 10.0;
    cls.mutable_data()[1 * 6 + 4] = 9.0;
    cls.mutable_data()[2 * 6 + 2] = 10.0;
    Tensor masks = Tensor::full({3, 8, 8}, -20.0);
    auto md = masks.mutable_data();
    for (std::size_t p = 0; p < 64; ++p) {
        if (p < 24) md[p] = 20.0;            // rows 0-2 to query 0
        else if (p < 56) md[64 + p] = 20.0;  // rows 3-6 to query 1
        else md[128 + p] = 20.0;             // row 7 (8 px) to query 2, below min_area
    }
    PanopticResult r = panoptic_merge(cls, masks, 8, 8, 3, InferConfig{});
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0].class_id == 4);
    for (std::size_t p = 0; p < 64; ++p) CHECK(r.ids[p] == (p < 56 ? r.segments[0].id : 0u));
    CHECK_THROWS_AS(panoptic_merge(cls, Tensor::zeros({2, 8, 8}), 8, 8, 3, InferConfig{}), DimensionError);
}

TEST_CASE("query linking") {
    std::mt19937_64 rng(1);
    Tensor a = random_tensor(rng, {5, 8});
    auto same = link_queries(a, a, 0.5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(same[j] == std::optional<std::size_t>(j));

    const std::size_t perm[] = {3, 0, 4, 1, 2};
    auto moved = link_queries(a, index_rows(a, perm), 0.5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(moved[j] == std::optional<std::size_t>(perm[j]));

    // Orthogonal rows: every similarity is 0.
    Tensor e1 = Tensor::zeros({2, 4}), e2 = Tensor::zeros({2, 4});
    e1.mutable_data()[0] = e1.mutable_data()[5] = 1.0;
    e2.mutable_data()[2] = e2.mutable_data()[7] = 1.0;
    for (auto l : link_queries(e1, e2, 0.5)) CHECK_FALSE(l.has_value());
}

// ---------------------------------------------------------------------------
// Inference on random-weight models.

TEST_CASE("random-weight panoptic inference partitions the image") {
    const RunConfig cfg = small_run();
    InferConfig loose;
    loose.s_min = 0.0;
    loose.min_area = 1;
    std::size_t segments = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Model m = build_model(cfg.model, seed);
        randomize(m, seed);
        Scene s = gen_scene(seed, SceneConfig::from(cfg));
        for (const InferConfig& ic : {cfg.infer, loose}) {
            PanopticResult r = infer_panoptic(m, s.image, ic);
            check_partition(r);
            segments += r.segments.size();
        }
    }
    CHECK(segments > 20);
}

TEST_CASE("panoptic inference is invariant to query order") {
    const RunConfig cfg = small_run();
    InferConfig loose;
    loose.s_min = 0.0;
    loose.min_area = 1;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Model m = build_model(cfg.model, seed);
        randomize(m, 100 + seed);
        Scene s = gen_scene(seed, SceneConfig::from(cfg));
        PanopticResult base = infer_panoptic(m, s.image, loose).canonical();
        std::vector<std::size_t> perm(cfg.model.n_queries);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(perm.begin(), perm.end(), rng);
        m.query_embed = index_rows(m.query_embed, perm).detach();
        PanopticResult moved = infer_panoptic(m, s.image, loose).canonical();
        std::size_t diff = 0;
        for (std::size_t i = 0; i < base.ids.size(); ++i) diff += moved.ids[i] != base.ids[i];
        INFO("seed=" << seed << " differing pixels=" << diff);
        CHECK(moved.ids == base.ids);
        REQUIRE(moved.segments.size() == base.segments.size());
        for (std::size_t i = 0; i < base.segments.size(); ++i) CHECK(moved.segments[i].class_id == base.segments[i].class_id);
    }
}

TEST_CASE("interactive inference contract and prompt independence") {
    const RunConfig cfg = small_run();
    Model m = build_model(cfg.model, 4);
    randomize(m, 4);
    Scene s = gen_scene(4, SceneConfig::from(cfg));
    const VisualPrompt p1 = VisualPrompt::point(10.5, 12.5, 32, 32), p2 = VisualPrompt::box(2, 3, 20, 17, 32, 32);
    const VisualPrompt both[] = {p1, p2}, alone[] = {p1}, twice[] = {p2, p2};
    auto mb = infer_interactive(m, s.image, both, cfg.infer);
    auto ma = infer_interactive(m, s.image, alone, cfg.infer);
    auto mt = infer_interactive(m, s.image, twice, cfg.infer);
    REQUIRE(mb.size() == 2);
    CHECK(mb[0].size() == 32 * 32);
    CHECK(mb[0] == ma[0]);
    CHECK(mt[0] == mt[1]);
    CHECK(mt[0] == mb[1]);
    CHECK_THROWS_AS(infer_interactive(m, s.image, {}, cfg.infer), InputError);
}

TEST_CASE("prompt-driven video inference") {
    const RunConfig cfg = small_run();
    Model m = build_model(cfg.model, 5);
    randomize(m, 5);
    Scene s = gen_scene(5, SceneConfig::from(cfg));
    const VisualPrompt p = VisualPrompt::point(16.5, 20.5, 32, 32);
    const Tensor one[] = {s.image};
    CHECK(infer_prompt_video(m, one, p, cfg.infer)[0] == infer_interactive(m, s.image, std::span(&p, 1), cfg.infer)[0]);
    const Tensor three[] = {s.image, s.image, s.image};
    auto masks = infer_prompt_video(m, three, p, cfg.infer);
    REQUIRE(masks.size() == 3);
    CHECK(masks[0].size() == 32 * 32);
    CHECK(masks[1] == masks[0]);
    CHECK(masks[2] == masks[0]);
}

TEST_CASE("video inference keeps ids across identical windows") {
    RunConfig cfg = small_run();
    Model m = build_model(cfg.model, 6);
    randomize(m, 6);
    Scene s = gen_scene(6, SceneConfig::from(cfg));
    InferConfig ic = cfg.infer;
    ic.vis_score_min = 0.0;
    const Tensor frames[] = {s.image, s.image, s.image, s.image, s.image};
    auto tracks = infer_vis(m, frames, ic);
    CHECK_FALSE(tracks.empty());
    std::set<std::size_t> ids;
    for (const auto& t : tracks) {
        CHECK(ids.insert(t.id).second);
        CHECK(t.masks.size() == 5);
        CHECK(t.present == std::vector<bool>(5, true));
        CHECK(t.class_id < cfg.model.thing_classes);
        CHECK(t.masks[2] == t.masks[0]);
    }
    CHECK(tracks.size() <= cfg.model.n_queries);
}

// ---------------------------------------------------------------------------
// Training.

TEST_CASE("learning-rate schedule") {
    TrainConfig t;
    t.lr = 1e-4;
    t.warmup = 500;
    t.steps = 12000;
    CHECK(learning_rate(t, 250) == doctest::Approx(0.5e-4).epsilon(1e-15));
    CHECK(learning_rate(t, 500) == 1e-4);
    CHECK(learning_rate(t, 7999) == 1e-4);
    CHECK(learning_rate(t, 8000) == doctest::Approx(1e-5).epsilon(1e-15));
    CHECK(learning_rate(t, 11000) == doctest::Approx(1e-6).epsilon(1e-15));
}

TEST_CASE("initial loss is finite and positive for every batch type") {
    const RunConfig cfg = small_run();
    Model m = build_model(cfg.model, 1);
    DatasetStream stream(cfg, 1);
    for (int i = 0; i < 3; ++i) {
        Batch b = stream.next();
        LossResult r = batch_loss(m, b, cfg.loss);
        INFO(to_string(b.kind));
        CHECK(std::isfinite(r.total.item()));
        CHECK(r.total.item() > 0.0);
    }
}

TEST_CASE("training is deterministic and changes the weights") {
    const RunConfig cfg = small_run();
    Model a = build_model(cfg.model, 2), b = build_model(cfg.model, 2);
    const Model init = build_model(cfg.model, 2);
    CHECK(same_params(a, init));
    OptimizerState sa, sb;
    auto ra = train(a, sa, cfg, 6), rb = train(b, sb, cfg, 6);
    REQUIRE(ra.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(ra[i].loss == rb[i].loss);
        CHECK(std::isfinite(ra[i].loss));
        CHECK(ra[i].kind == DatasetStream(cfg, cfg.train.seed).kind_at(i));
    }
    CHECK(same_params(a, b));
    CHECK_FALSE(same_params(a, init));
    CHECK(sa.step == 6);
}

TEST_CASE("a group step averages its samples") {
    const RunConfig cfg = small_run();
    DatasetStream stream(cfg, 4);
    const Batch b = stream.next();
    Model one = build_model(cfg.model, 4), two = build_model(cfg.model, 4);
    OptimizerState s1, s2;
    const StepResult r1 = train_step(one, b, s1, cfg);
    // Two copies of one sample give the single-sample gradient up to
    // accumulation order.
    const Batch pair[] = {b, b};
    const StepResult r2 = train_step(two, pair, s2, cfg);
    CHECK(r2.loss == r1.loss);
    CHECK(r2.grad_norm == doctest::Approx(r1.grad_norm).epsilon(1e-12));
    const ParamList p1 = one.parameters(), p2 = two.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) worst = std::max(worst, max_abs_diff(p1[i].tensor, p2[i].tensor));
    CHECK(worst <= 1e-9);

    const Batch mixed[] = {b, stream.next()};
    CHECK_THROWS_AS(train_step(two, mixed, s2, cfg), ContractError);
}

TEST_CASE("checkpoint roundtrip and resume") {
    const RunConfig cfg = small_run();
    Model full = build_model(cfg.model, 9), half = build_model(cfg.model, 9);
    OptimizerState sf, sh;
    train(full, sf, cfg, 4);
    train(half, sh, cfg, 2);
    const auto path = temp_path("rmps_engine_ckpt.bin");
    save_checkpoint(path.string(), half, sh);
    LoadedCheckpoint loaded = load_checkpoint(path.string(), cfg.model);
    CHECK(loaded.model.cfg == cfg.model);
    CHECK(same_params(loaded.model, half));
    CHECK(loaded.optimizer.step == 2);
    CHECK(loaded.optimizer.m == sh.m);
    CHECK(loaded.optimizer.v == sh.v);

    // Resuming from the checkpoint continues the same trajectory.
    train(loaded.model, loaded.optimizer, cfg, 2);
    CHECK(same_params(loaded.model, full));

    // A second save is byte-identical to the first.
    const auto again = temp_path("rmps_engine_ckpt2.bin");
    save_checkpoint(again.string(), half, sh);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 4) == "RMPS");
    std::filesystem::remove(again);

    SUBCASE("truncated file") {
        const auto cut = temp_path("rmps_engine_cut.bin");
        std::ofstream(cut, std::ios::binary) << b1.substr(0, b1.size() / 2);
        CHECK_THROWS_AS(load_checkpoint(cut.string()), ParseError);
        std::filesystem::remove(cut);
    }
    SUBCASE("bad magic") {
        const auto bad = temp_path("rmps_engine_bad.bin");
        std::ofstream(bad, std::ios::binary) << "XXXX" << b1.substr(4);
        CHECK_THROWS_AS(load_checkpoint(bad.string()), ParseError);
        std::filesystem::remove(bad);
    }
    SUBCASE("mismatched width") {
        ModelConfig other = cfg.model;
        other.d = 32;
        try {
            load_checkpoint(path.string(), other);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("model.d") != std::string::npos);
        }
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_path("rmps_no_such.bin").string()), IoError); }
    std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Configuration.

TEST_CASE("config parsing") {
    std::istringstream in("# comment\nmodel.d = 32\nmodel.arch = d\nadapter.obj = CA\ntrain.lr = 0.001 # inline\n"
                          "data.ratio = 1,25,1\ninfer.s_min = 0.4\n\n");
    RunConfig c = parse_config(in);
    CHECK(c.model.d == 32);
    CHECK(c.model.arch == MetaArch::d);
    CHECK(c.model.adapter.obj == AdapterKind::ca);
    CHECK(c.train.lr == 0.001);
    CHECK(c.data.ratio == std::array<std::size_t, 3>{1, 25, 1});
    CHECK(c.infer.s_min == 0.4);

    std::ostringstream out;
    write_config(out, c);
    std::istringstream back(out.str());
    RunConfig r = parse_config(back);
    CHECK(r.model == c.model);
    CHECK(r.train.lr == c.train.lr);
    CHECK(r.data.ratio == c.data.ratio);

    auto rejects = [](const std::string& text, const std::string& needle) {
        std::istringstream s(text);
        try {
            parse_config(s);
            return false;
        } catch (const ConfigError& e) {
            return std::string(e.what()).find(needle) != std::string::npos;
        }
    };
    CHECK(rejects("model.depth = 3\n", "model.depth"));
    CHECK(rejects("model.d = abc\n", "model.d"));
    CHECK(rejects("model.d\n", "line 1"));
    CHECK(rejects("model.arch = e\n", "meta-architecture"));
    CHECK(rejects("model.n_queries = 6\n", "n_queries"));
    CHECK(rejects("loss.mask_targets = bilinear\n", "mask target"));

    std::istringstream extra("loss.mask_targets = area\ntrain.batch = 4\n");
    RunConfig e = parse_config(extra);
    CHECK(e.loss.mask_targets == MaskTargetRule::area);
    CHECK(e.train.batch == 4);
    std::ostringstream again;
    write_config(again, e);
    CHECK(again.str().find("loss.mask_targets = area") != std::string::npos);
    CHECK(again.str().find("train.batch = 4") != std::string::npos);
    CHECK_THROWS_AS(load_config(temp_path("rmps_no_such.cfg").string()), IoError);
}
