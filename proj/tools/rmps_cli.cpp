// rmps: train, evaluate, benchmark and inspect the segmentation model.

#include "rmps/checkpoint.hpp"
#include "rmps/error.hpp"
#include "rmps/evaluate.hpp"
#include "rmps/flops.hpp"
#include "rmps/image_io.hpp"
#include "rmps/infer.hpp"
#include "rmps/latency.hpp"
#include "rmps/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace rmps;

namespace {

RunConfig load_run_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

std::vector<Tensor> clip_images(const ClipSample& clip) {
    std::vector<Tensor> frames;
    for (const auto& f : clip.frames) frames.push_back(f.image);
    return frames;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string loss_log;
    std::size_t log_every = 50;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = load_run_config(a.config);
    if (a.seed_set) cfg.train.seed = a.seed;
    if (a.steps > 0) cfg.train.steps = a.steps;
    Model model = build_model(cfg.model, cfg.train.seed);
    OptimizerState opt;

    std::ofstream log;
    if (!a.loss_log.empty()) {
        log.open(a.loss_log);
        if (!log) throw IoError("cannot open loss log '" + a.loss_log + "'");
    }
    std::printf("params=%zu steps=%zu seed=%llu\n", count_params(model), cfg.train.steps,
                static_cast<unsigned long long>(cfg.train.seed));
    train(model, opt, cfg, cfg.train.steps, [&](std::size_t step, const StepResult& r) {
        if (log) log << step << ' ' << to_string(r.kind) << ' ' << r.loss << '\n';
        if (a.log_every > 0 && (step % a.log_every == 0 || step == cfg.train.steps)) {
            std::printf("step=%zu kind=%s loss=%.6f lr=%.3g grad_norm=%.4g\n", step, to_string(r.kind).c_str(), r.loss,
                        r.lr, r.grad_norm);
            std::fflush(stdout);
        }
    });
    save_checkpoint(a.out, model, opt);
    std::printf("checkpoint=%s\n", a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::string config;
    std::string task;
    std::size_t scenes = 200;
    std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
    LoadedCheckpoint ck = a.config.empty() ? load_checkpoint(a.ckpt) : load_checkpoint(a.ckpt, load_config(a.config).model);
    RunConfig cfg = load_run_config(a.config);
    cfg.model = ck.model.cfg;
    EvalOptions opt{a.scenes, a.seed, cfg.model.clip_frames};
    std::vector<std::pair<std::string, double>> kv;
    if (a.task == "panoptic") {
        auto r = evaluate_panoptic(ck.model, cfg, opt);
        std::fputs(format_pq_table(r.report).c_str(), stdout);
        kv = pq_key_values(r.report);
    } else if (a.task == "vis") {
        kv = tube_key_values(evaluate_vis(ck.model, cfg, opt).report);
    } else if (a.task == "interactive") {
        auto r = evaluate_interactive(ck.model, cfg, opt);
        kv = {{"miou_1click", r.miou}, {"prompts", double(r.prompts)}};
    } else if (a.task == "promptvideo") {
        auto r = evaluate_prompt_video(ck.model, cfg, opt);
        kv = {{"miou_prompt_video", r.miou}, {"masks", double(r.prompts)}};
    } else {
        throw ConfigError("unknown task '" + a.task + "'");
    }
    kv.insert(kv.begin(), {"scenes", double(a.scenes)});
    std::fputs(format_key_values(kv).c_str(), stdout);
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config;
    std::string decoder = "pool_dcg";
    std::string arch = "c";
    std::size_t iters = 30;
    std::size_t warmup = 5;
};

int run_bench(const BenchArgs& a) {
    RunConfig cfg = load_run_config(a.config);
    cfg.model.decoder = parse_decoder_kind(a.decoder);
    cfg.model.arch = parse_meta_arch(a.arch);
    cfg.model.validate();
    const std::size_t size = cfg.model.image_size;
    FlopsReport flops = count_flops(cfg.model, cfg.model.decoder, size, size);
    Model model = build_model(cfg.model, cfg.train.seed);

    Tensor image = Tensor::full({3, size, size}, 0.5);
    FeatureMap features;
    {
        NoGradGuard g;
        features = model_features(model, image);
    }
    LatencyReport dec = measure_decoder_latency(model, features, a.iters, a.warmup);
    LatencyReport full = measure_model_latency(model, image, a.iters, a.warmup);

    std::printf("arch=%s\ndecoder=%s\n", a.arch.c_str(), a.decoder.c_str());
    for (const auto& [name, value] : flops.components) {
        std::printf("flops.%s=%llu\n", name.c_str(), static_cast<unsigned long long>(value));
    }
    std::printf("flops_backbone=%llu\nflops_decoder=%llu\nflops_adapters=%llu\nflops_total=%llu\n",
                static_cast<unsigned long long>(flops.backbone), static_cast<unsigned long long>(flops.decoder),
                static_cast<unsigned long long>(flops.adapters), static_cast<unsigned long long>(flops.total));
    std::printf("params=%zu\nparams_analytic=%llu\n", count_params(model),
                static_cast<unsigned long long>(flops.params));
    std::printf("decoder_median_ms=%.6f\ndecoder_p90_ms=%.6f\n", dec.median_ms, dec.p90_ms);
    std::printf("median_ms=%.6f\np90_ms=%.6f\n", full.median_ms, full.p90_ms);
    std::printf("iterations=%zu\nwarmup=%zu\nthreads=%zu\nbuild_mode=%s\n", full.iterations, full.warmup, full.threads,
                full.build_mode.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct DemoArgs {
    std::string ckpt;
    std::string task;
    std::uint64_t seed = 0;
    std::string out;
};

RgbImage overlay(const Tensor& image, const std::vector<std::size_t>& ids) {
    RgbImage img = RgbImage::from_tensor(image);
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            const std::size_t id = ids[r * img.width + c];
            if (id == 0) continue;
            auto base = img.get(r, c);
            auto col = palette_color(id);
            std::array<std::uint8_t, 3> mix{};
            for (int k = 0; k < 3; ++k) mix[k] = std::uint8_t((int(base[k]) + 3 * int(col[k])) / 4);
            img.set(r, c, mix);
        }
    }
    return img;
}

void mark_point(RgbImage& img, const VisualPrompt& p) {
    const long pr = long(p.coords[1]), pc = long(p.coords[0]);
    for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
            const long r = pr + dr, c = pc + dc;
            if (r >= 0 && c >= 0 && r < long(img.height) && c < long(img.width)) img.set(r, c, {255, 255, 255});
        }
}

std::vector<std::size_t> binary_ids(const std::vector<double>& mask, std::size_t id) {
    std::vector<std::size_t> ids(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) ids[i] = mask[i] > 0.5 ? id : 0;
    return ids;
}

int run_demo(const DemoArgs& a) {
    LoadedCheckpoint ck = load_checkpoint(a.ckpt);
    RunConfig cfg;
    cfg.model = ck.model.cfg;
    const Model& model = ck.model;
    std::filesystem::create_directories(a.out);
    const std::string dir = a.out + "/";
    NoGradGuard guard;
    Scene scene = heldout_scene(cfg, a.seed, 0);
    write_ppm(dir + "input.ppm", RgbImage::from_tensor(scene.image));

    if (a.task == "panoptic") {
        PanopticResult r = infer_panoptic(model, scene.image, cfg.infer);
        write_ppm(dir + "panoptic.ppm", overlay(scene.image, r.ids));
        write_ppm(dir + "panoptic_gt.ppm", overlay(scene.image, scene_panoptic(scene).ids));
        std::printf("segments=%zu\n", r.segments.size());
    } else if (a.task == "vis") {
        ClipSample clip = gen_pseudo_video(scene, cfg.model.clip_frames, a.seed);
        auto frames = clip_images(clip);
        auto tracks = infer_vis(model, frames, cfg.infer);
        const std::size_t plane = scene.size * scene.size;
        for (std::size_t t = 0; t < frames.size(); ++t) {
            std::vector<std::size_t> ids(plane, 0);
            for (const auto& tr : tracks) {
                if (!tr.present[t]) continue;
                for (std::size_t p = 0; p < plane; ++p)
                    if (tr.masks[t][p] > 0.5 && ids[p] == 0) ids[p] = tr.id;
            }
            write_ppm(dir + "frame" + std::to_string(t) + ".ppm", overlay(frames[t], ids));
        }
        std::printf("tracks=%zu\n", tracks.size());
    } else if (a.task == "interactive") {
        auto prompts = sample_prompts(scene, PromptMode::test, a.seed).prompts;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const VisualPrompt p[] = {prompts[i].prompt};
            auto masks = infer_interactive(model, scene.image, p, cfg.infer);
            RgbImage img = overlay(scene.image, binary_ids(masks[0], i + 1));
            mark_point(img, p[0]);
            write_ppm(dir + "prompt" + std::to_string(i) + ".ppm", img);
        }
        std::printf("prompts=%zu\n", prompts.size());
    } else if (a.task == "promptvideo") {
        ClipSample clip = gen_pseudo_video(scene, cfg.model.clip_frames, a.seed);
        auto frames = clip_images(clip);
        auto tracks = clip_tracks(clip);
        if (tracks.empty()) throw InputError("demo: scene has no things to prompt");
        const VisualPrompt prompt = center_point_prompt(tracks[0].masks[0], scene.size, scene.size);
        auto masks = infer_prompt_video(model, frames, prompt, cfg.infer);
        for (std::size_t t = 0; t < masks.size(); ++t) {
            RgbImage img = overlay(frames[t], binary_ids(masks[t], 1));
            if (t == 0) mark_point(img, prompt);
            write_ppm(dir + "frame" + std::to_string(t) + ".ppm", img);
        }
        std::printf("frames=%zu\n", masks.size());
    } else {
        throw ConfigError("unknown task '" + a.task + "'");
    }
    return 0;
}

// ---------------------------------------------------------------------------

int run_gradcheck(const std::string& scope, std::optional<std::uint64_t> seed) {
    const GradScope s = parse_grad_scope(scope);
    bool ok = true;
    for (const auto& r : run_grad_checks(s, seed.value_or(default_grad_seed(s)))) {
        std::puts(format_report(r).c_str());
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

int run_dump(std::size_t scenes, std::uint64_t seed, const std::string& out, const std::string& config) {
    RunConfig cfg = load_run_config(config);
    std::filesystem::create_directories(out);
    for (std::size_t i = 0; i < scenes; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene%04zu", i);
        dump_scene(heldout_scene(cfg, seed, i), out, stem);
    }
    std::printf("scenes=%zu\n", scenes);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rmps: real-time multi-purpose segmentation on synthetic scenes"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train from scratch and write a checkpoint");
    train_cmd->add_option("--config", ta.config, "key = value config file");
    train_cmd->add_option("--steps", ta.steps, "Training steps (overrides train.steps)");
    auto* seed_opt = train_cmd->add_option("--seed", ta.seed, "Seed for weights and data (overrides train.seed)");
    train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
    train_cmd->add_option("--loss-log", ta.loss_log, "Write 'step kind loss' per step to this file");
    train_cmd->add_option("--log-every", ta.log_every, "Print progress every N steps (0 = quiet)");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on held-out scenes");
    eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--task", ea.task, "Task")->required()->check(
        CLI::IsMember({"panoptic", "vis", "interactive", "promptvideo"}));
    eval_cmd->add_option("--scenes", ea.scenes, "Number of held-out scenes or clips");
    eval_cmd->add_option("--seed", ea.seed, "Held-out data seed");
    eval_cmd->add_option("--config", ea.config, "Config for inference thresholds; its model keys must match");

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "FLOPs, parameters and latency of one configuration");
    bench_cmd->add_option("--config", ba.config, "key = value config file");
    bench_cmd->add_option("--decoder", ba.decoder, "Decoder query update")->check(
        CLI::IsMember({"per_pixel_ca", "pool_dc", "pool_dcg"}));
    bench_cmd->add_option("--arch", ba.arch, "Meta-architecture")->check(CLI::IsMember({"a", "b", "c", "d"}));
    bench_cmd->add_option("--iters", ba.iters, "Timed iterations (>= 20)");
    bench_cmd->add_option("--warmup", ba.warmup, "Untimed warmup iterations");

    DemoArgs da;
    auto* demo_cmd = app.add_subcommand("demo", "Write PPM overlays for one held-out scene");
    demo_cmd->add_option("--ckpt", da.ckpt, "Checkpoint path")->required();
    demo_cmd->add_option("--task", da.task, "Task")->required()->check(
        CLI::IsMember({"panoptic", "vis", "interactive", "promptvideo"}));
    demo_cmd->add_option("--seed", da.seed, "Scene seed");
    demo_cmd->add_option("--out", da.out, "Output directory")->required();

    std::string scope;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    grad_cmd->add_option("--scope", scope, "ops, decoder or loss")->required()->check(
        CLI::IsMember({"ops", "decoder", "loss"}));
    std::optional<std::uint64_t> grad_seed;
    grad_cmd->add_option("--seed", grad_seed, "Input seed (default pinned per scope)");

    std::size_t dump_scenes = 8;
    std::uint64_t dump_seed = 0;
    std::string dump_out, dump_config;
    auto* dump_cmd = app.add_subcommand("dump-data", "Write synthetic scenes with ground truth");
    dump_cmd->add_option("--scenes", dump_scenes, "Number of scenes");
    dump_cmd->add_option("--seed", dump_seed, "Data seed");
    dump_cmd->add_option("--out", dump_out, "Output directory")->required();
    dump_cmd->add_option("--config", dump_config, "key = value config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }
    ta.seed_set = seed_opt->count() > 0;

    try {
        if (*train_cmd) return run_train(ta);
        if (*eval_cmd) return run_eval(ea);
        if (*bench_cmd) return run_bench(ba);
        if (*demo_cmd) return run_demo(da);
        if (*grad_cmd) return run_gradcheck(scope, grad_seed);
        if (*dump_cmd) return run_dump(dump_scenes, dump_seed, dump_out, dump_config);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
