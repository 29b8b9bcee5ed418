#include "rmps/synth_data.hpp"

#include "rmps/error.hpp"
#include "rmps/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace rmps {

namespace {

constexpr std::array<std::array<double, 3>, kThingClasses> kThingColors{{
    {0.90, 0.25, 0.20}, // circle
    {0.25, 0.80, 0.30}, // square
    {0.95, 0.85, 0.20}, // triangle
}};
constexpr std::array<double, 3> kUpperColor{0.55, 0.70, 0.90};
constexpr std::array<double, 3> kLowerColor{0.50, 0.40, 0.25};
constexpr std::size_t kMaxLayoutAttempts = 10000;
constexpr std::size_t kMaxVelocityAttempts = 64;
constexpr int kSuper = 4;

bool inside(const ThingLayout& t, double x, double y) {
    const double dx = x - t.cx, dy = y - t.cy;
    switch (t.kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= t.radius * t.radius;
    case ShapeKind::square: return std::abs(dx) <= t.radius && std::abs(dy) <= t.radius;
    case ShapeKind::triangle: {
        // Upright equilateral triangle with circumradius r: apex (0, -r),
        // base corners (+-r sqrt(3)/2, r/2).
        const double r = t.radius;
        if (dy > 0.5 * r) return false;
        const double half_width = (dy + r) / std::sqrt(3.0);
        return dy >= -r && std::abs(dx) <= half_width;
    }
    }
    return false;
}

// Fraction of the 4x4 supersamples of pixel (row, col) inside the shape.
double coverage(const ThingLayout& t, std::size_t row, std::size_t col) {
    int hits = 0;
    for (int j = 0; j < kSuper; ++j) {
        const double y = double(row) + (j + 0.5) / kSuper;
        for (int i = 0; i < kSuper; ++i) {
            const double x = double(col) + (i + 0.5) / kSuper;
            hits += inside(t, x, y) ? 1 : 0;
        }
    }
    return double(hits) / (kSuper * kSuper);
}

std::size_t shape_area(const ThingLayout& t) {
    // Count over an unbounded canvas around the shape so clipping at image
    // borders shows up as lost area.
    const long r = long(std::ceil(t.radius)) + 2;
    std::size_t area = 0;
    for (long row = long(std::floor(t.cy)) - r; row <= long(std::floor(t.cy)) + r; ++row) {
        for (long col = long(std::floor(t.cx)) - r; col <= long(std::floor(t.cx)) + r; ++col) {
            int hits = 0;
            for (int j = 0; j < kSuper; ++j)
                for (int i = 0; i < kSuper; ++i)
                    hits += inside(t, double(col) + (i + 0.5) / kSuper, double(row) + (j + 0.5) / kSuper) ? 1 : 0;
            if (2 * hits >= kSuper * kSuper) ++area;
        }
    }
    return area;
}

bool four_connected(const std::vector<double>& mask, std::size_t h, std::size_t w) {
    std::size_t start = mask.size(), total = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] > 0.5) {
            ++total;
            if (start == mask.size()) start = i;
        }
    }
    if (total == 0) return false;
    std::vector<char> seen(mask.size(), 0);
    std::vector<std::size_t> stack{start};
    seen[start] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        ++reached;
        const std::size_t r = p / w, c = p % w;
        auto visit = [&](std::size_t q) {
            if (!seen[q] && mask[q] > 0.5) {
                seen[q] = 1;
                stack.push_back(q);
            }
        };
        if (r > 0) visit(p - w);
        if (r + 1 < h) visit(p + w);
        if (c > 0) visit(p - 1);
        if (c + 1 < w) visit(p + 1);
    }
    return reached == total;
}

// Every thing keeps at least half of its unclipped area visible and stays
// 4-connected.
bool things_valid(const Scene& s) {
    std::size_t k = 0;
    for (const auto& e : s.entities) {
        if (!e.is_thing) continue;
        const ThingLayout* t = nullptr;
        for (const auto& cand : s.layout.things)
            if (cand.instance_id == e.instance_id) t = &cand;
        if (!t) return false;
        const std::size_t full = shape_area(*t);
        if (full < 8 || 2 * e.area() < full || !four_connected(e.mask, s.size, s.size)) return false;
        ++k;
    }
    return k == s.layout.things.size();
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Dyadic grid so that integer translations re-render exactly.
double snap(double v) { return std::round(v * 8.0) / 8.0; }

SceneLayout draw_layout(std::mt19937_64& rng, const SceneConfig& cfg, std::size_t things) {
    const double s = double(cfg.size);
    SceneLayout L;
    L.size = cfg.size;
    const double scale = cfg.scale_jitter ? uniform(rng, 0.5, 1.5) : 1.0;
    const double split = uniform(rng, 0.3 * s, 0.7 * s);
    L.split_row = std::size_t(std::clamp(std::lround(0.5 * s + scale * (split - 0.5 * s)), 1L, long(cfg.size) - 1));
    for (std::size_t c = 0; c < 3; ++c) {
        L.upper_color[c] = std::clamp(kUpperColor[c] + uniform(rng, -0.05, 0.05), 0.0, 1.0);
        L.lower_color[c] = std::clamp(kLowerColor[c] + uniform(rng, -0.05, 0.05), 0.0, 1.0);
    }
    for (std::size_t i = 0; i < things; ++i) {
        ThingLayout t;
        t.kind = ShapeKind(std::uniform_int_distribution<int>(0, int(kThingClasses) - 1)(rng));
        const double radius = uniform(rng, 0.07 * s, 0.16 * s);
        const double margin = radius * 0.5;
        const double cx = uniform(rng, margin, s - margin), cy = uniform(rng, margin, s - margin);
        t.radius = snap(std::max(1.5, scale * radius));
        t.cx = snap(0.5 * s + scale * (cx - 0.5 * s));
        t.cy = snap(0.5 * s + scale * (cy - 0.5 * s));
        const double brightness = uniform(rng, 0.8, 1.15);
        for (std::size_t c = 0; c < 3; ++c) t.color[c] = std::clamp(kThingColors[std::size_t(t.kind)][c] * brightness, 0.0, 1.0);
        t.instance_id = i + 1;
        L.things.push_back(t);
    }
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    L.noise.resize(3 * cfg.size * cfg.size);
    for (auto& v : L.noise) v = noise(rng);
    return L;
}

} // namespace

SceneConfig SceneConfig::from(const RunConfig& run) {
    SceneConfig c;
    c.size = run.model.image_size;
    c.min_things = run.data.min_things;
    c.max_things = run.data.max_things;
    c.scale_jitter = run.data.scale_jitter;
    return c;
}

void SceneConfig::validate() const {
    if (size != 32 && size != 64 && size != 96) {
        throw ConfigError("scene size " + std::to_string(size) + " must be one of 32, 64, 96");
    }
    if (min_things < 1 || max_things > 4 || min_things > max_things) {
        throw ConfigError("thing count range [" + std::to_string(min_things) + ", " + std::to_string(max_things) +
                          "] must lie within [1, 4]");
    }
    if (!(noise_sigma >= 0)) throw ConfigError("noise sigma must be non-negative");
}

std::size_t EntityGT::area() const {
    return std::size_t(std::count_if(mask.begin(), mask.end(), [](double v) { return v > 0.5; }));
}

std::size_t Scene::thing_count() const {
    return std::size_t(std::count_if(entities.begin(), entities.end(), [](const EntityGT& e) { return e.is_thing; }));
}

Scene render_layout(const SceneLayout& L, std::uint64_t seed) {
    const std::size_t n = L.size, plane = n * n;
    std::vector<double> img(3 * plane);
    std::vector<std::size_t> owner(plane, 0); // 0 = stuff, else 1 + index into things
    for (std::size_t r = 0; r < n; ++r) {
        const auto& base = r < L.split_row ? L.upper_color : L.lower_color;
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + r * n + c] = base[ch];
    }
    for (std::size_t k = 0; k < L.things.size(); ++k) {
        const auto& t = L.things[k];
        const long r0 = std::max(0L, long(std::floor(t.cy - t.radius)) - 1);
        const long r1 = std::min(long(n) - 1, long(std::ceil(t.cy + t.radius)) + 1);
        const long c0 = std::max(0L, long(std::floor(t.cx - t.radius)) - 1);
        const long c1 = std::min(long(n) - 1, long(std::ceil(t.cx + t.radius)) + 1);
        for (long r = r0; r <= r1; ++r) {
            for (long c = c0; c <= c1; ++c) {
                const double cov = coverage(t, std::size_t(r), std::size_t(c));
                if (cov <= 0) continue;
                const std::size_t p = std::size_t(r) * n + std::size_t(c);
                for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + p] = (1 - cov) * img[ch * plane + p] + cov * t.color[ch];
                if (cov >= 0.5) owner[p] = k + 1;
            }
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] + L.noise[i], 0.0, 1.0);

    Scene s;
    s.seed = seed;
    s.size = n;
    s.image = Tensor({3, n, n}, std::move(img));
    s.layout = L;
    for (std::size_t k = 0; k < L.things.size(); ++k) {
        EntityGT e;
        e.mask.assign(plane, 0.0);
        for (std::size_t p = 0; p < plane; ++p) e.mask[p] = owner[p] == k + 1 ? 1.0 : 0.0;
        e.class_id = std::size_t(L.things[k].kind);
        e.is_thing = true;
        e.instance_id = L.things[k].instance_id;
        if (e.area() > 0) s.entities.push_back(std::move(e));
    }
    for (std::size_t band = 0; band < 2; ++band) {
        EntityGT e;
        e.mask.assign(plane, 0.0);
        for (std::size_t p = 0; p < plane; ++p) {
            const bool upper = p / n < L.split_row;
            if (owner[p] == 0 && upper == (band == 0)) e.mask[p] = 1.0;
        }
        e.class_id = band == 0 ? kUpperStuffClass : kLowerStuffClass;
        if (e.area() > 0) s.entities.push_back(std::move(e));
    }
    return s;
}

Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t things =
        std::uniform_int_distribution<std::size_t>(cfg.min_things, cfg.max_things)(rng);
    for (std::size_t attempt = 0; attempt < kMaxLayoutAttempts; ++attempt) {
        Scene s = render_layout(draw_layout(rng, cfg, things), seed);
        if (things_valid(s)) return s;
    }
    throw ContractError("gen_scene: no valid layout for seed " + std::to_string(seed));
}

ClipSample translate_clip(const Scene& scene, std::size_t frames, const std::vector<std::array<int, 2>>& velocities) {
    if (velocities.size() != scene.layout.things.size()) throw InputError("translate_clip: one velocity per thing required");
    ClipSample clip;
    clip.velocities = velocities;
    for (std::size_t t = 0; t < frames; ++t) {
        SceneLayout L = scene.layout;
        for (std::size_t k = 0; k < L.things.size(); ++k) {
            L.things[k].cx += double(t) * velocities[k][0];
            L.things[k].cy += double(t) * velocities[k][1];
        }
        clip.frames.push_back(render_layout(L, scene.seed));
    }
    return clip;
}

ClipSample gen_pseudo_video(const Scene& scene, std::size_t frames, std::uint64_t seed) {
    if (frames < 2) throw InputError("gen_pseudo_video: need at least 2 frames");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> v(-3, 3);
    const std::size_t n = scene.layout.things.size();
    for (std::size_t attempt = 0; attempt < kMaxVelocityAttempts; ++attempt) {
        std::vector<std::array<int, 2>> vel(n);
        for (auto& x : vel) x = {v(rng), v(rng)};
        ClipSample clip = translate_clip(scene, frames, vel);
        if (std::all_of(clip.frames.begin(), clip.frames.end(), things_valid)) return clip;
    }
    return translate_clip(scene, frames, std::vector<std::array<int, 2>>(n, {0, 0}));
}

std::array<std::size_t, 2> distance_transform_argmax(const std::vector<double>& mask, std::size_t h, std::size_t w) {
    if (mask.size() != h * w) throw DimensionError("distance_transform_argmax: mask size does not match extents");
    // Outside pixels, including a one-pixel ring beyond the image border.
    std::vector<std::array<long, 2>> outside;
    for (long r = -1; r <= long(h); ++r) {
        for (long c = -1; c <= long(w); ++c) {
            const bool in_image = r >= 0 && c >= 0 && r < long(h) && c < long(w);
            if (!in_image || mask[std::size_t(r) * w + std::size_t(c)] <= 0.5) outside.push_back({r, c});
        }
    }
    long best = -1;
    std::array<std::size_t, 2> arg{0, 0};
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (mask[r * w + c] <= 0.5) continue;
            long d2 = std::numeric_limits<long>::max();
            for (const auto& o : outside) {
                const long dr = long(r) - o[0], dc = long(c) - o[1];
                d2 = std::min(d2, dr * dr + dc * dc);
            }
            if (d2 > best) {
                best = d2;
                arg = {r, c};
            }
        }
    }
    if (best < 0) throw InputError("distance_transform_argmax: empty mask");
    return arg;
}

VisualPrompt center_point_prompt(const std::vector<double>& mask, std::size_t h, std::size_t w) {
    double sr = 0, sc = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            if (mask[r * w + c] > 0.5) {
                sr += double(r);
                sc += double(c);
                ++n;
            }
    if (n == 0) throw InputError("center_point_prompt: empty mask");
    std::size_t r = std::size_t(std::lround(sr / double(n)));
    std::size_t c = std::size_t(std::lround(sc / double(n)));
    if (mask[r * w + c] <= 0.5) {
        const auto a = distance_transform_argmax(mask, h, w);
        r = a[0];
        c = a[1];
    }
    return VisualPrompt::point(double(c) + 0.5, double(r) + 0.5, double(w), double(h));
}

VisualPrompt tight_box_prompt(const std::vector<double>& mask, std::size_t h, std::size_t w) {
    std::size_t rmin = h, rmax = 0, cmin = w, cmax = 0;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            if (mask[r * w + c] > 0.5) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (rmin == h) throw InputError("tight_box_prompt: empty mask");
    return VisualPrompt::box(double(cmin), double(rmin), double(cmax + 1), double(rmax + 1), double(w), double(h));
}

PromptSampling sample_prompts(const Scene& scene, PromptMode mode, std::uint64_t seed, std::size_t max_entities) {
    PromptSampling out;
    const std::size_t n = scene.size;
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < scene.entities.size(); ++i) {
        if (scene.entities[i].area() == 0) {
            out.warnings.push_back("entity " + std::to_string(i) + " has an empty mask; skipped");
            continue;
        }
        chosen.push_back(i);
    }
    if (mode == PromptMode::test) {
        for (std::size_t i : chosen) {
            const auto& m = scene.entities[i].mask;
            out.prompts.push_back({center_point_prompt(m, n, n), i, m});
        }
        return out;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    if (chosen.size() > max_entities) chosen.resize(max_entities);
    for (std::size_t i : chosen) {
        const auto& m = scene.entities[i].mask;
        std::vector<std::size_t> interior;
        for (std::size_t p = 0; p < m.size(); ++p)
            if (m[p] > 0.5) interior.push_back(p);
        const std::size_t p = interior[std::uniform_int_distribution<std::size_t>(0, interior.size() - 1)(rng)];
        out.prompts.push_back({VisualPrompt::point(double(p % n) + 0.5, double(p / n) + 0.5, double(n), double(n)), i, m});
        out.prompts.push_back({tight_box_prompt(m, n, n), i, m});
    }
    return out;
}

std::string to_string(BatchKind kind) {
    switch (kind) {
    case BatchKind::panoptic: return "panoptic";
    case BatchKind::video: return "video";
    case BatchKind::prompt: return "prompt";
    }
    return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    // splitmix64 finalizer over a simple combination.
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + index * 0x94D049BB133111EBULL +
                      0x2545F4914F6CDD1DULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

DatasetStream::DatasetStream(const RunConfig& cfg, std::uint64_t seed)
    : scene_cfg_(SceneConfig::from(cfg)),
      ratio_(cfg.data.ratio),
      clip_frames_(cfg.model.clip_frames),
      max_prompt_entities_(cfg.data.max_prompt_entities),
      seed_(seed) {
    scene_cfg_.validate();
    if (ratio_[0] + ratio_[1] + ratio_[2] == 0) throw ConfigError("data.ratio must have a non-zero entry");
}

BatchKind DatasetStream::kind_at(std::size_t index) const {
    const std::size_t pos = index % (ratio_[0] + ratio_[1] + ratio_[2]);
    if (pos < ratio_[0]) return BatchKind::panoptic;
    if (pos < ratio_[0] + ratio_[1]) return BatchKind::video;
    return BatchKind::prompt;
}

Batch DatasetStream::make(BatchKind kind, std::size_t sample) const {
    Batch b;
    b.index = sample;
    b.kind = kind;
    b.scene = gen_scene(derive_seed(seed_, 1, sample), scene_cfg_);
    if (b.kind == BatchKind::video) {
        b.clip = gen_pseudo_video(b.scene, clip_frames_, derive_seed(seed_, 2, sample));
    } else if (b.kind == BatchKind::prompt) {
        b.prompts = sample_prompts(b.scene, PromptMode::train, derive_seed(seed_, 3, sample), max_prompt_entities_).prompts;
    }
    return b;
}

Batch DatasetStream::next() {
    Batch b = make(kind_at(index_), index_);
    ++index_;
    return b;
}

std::vector<Batch> DatasetStream::next_group(std::size_t size) {
    if (size == 0) throw ConfigError("batch size must be positive");
    std::vector<Batch> group;
    group.reserve(size);
    const BatchKind kind = kind_at(index_);
    for (std::size_t j = 0; j < size; ++j) group.push_back(make(kind, index_ * size + j));
    ++index_;
    return group;
}

std::vector<std::size_t> rle_encode(const std::vector<double>& mask) {
    std::vector<std::size_t> runs;
    bool current = false;
    std::size_t len = 0;
    for (double v : mask) {
        const bool on = v > 0.5;
        if (on != current) {
            runs.push_back(len);
            len = 0;
            current = on;
        }
        ++len;
    }
    runs.push_back(len);
    return runs;
}

std::vector<double> rle_decode(const std::vector<std::size_t>& runs, std::size_t total) {
    std::vector<double> mask;
    mask.reserve(total);
    bool on = false;
    for (std::size_t r : runs) {
        mask.insert(mask.end(), r, on ? 1.0 : 0.0);
        on = !on;
    }
    if (mask.size() != total) throw ParseError("run lengths cover " + std::to_string(mask.size()) + " of " +
                                               std::to_string(total) + " pixels");
    return mask;
}

void dump_scene(const Scene& scene, const std::string& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir) / stem;
    write_ppm(base.string() + ".ppm", RgbImage::from_tensor(scene.image));
    std::ofstream gt(base.string() + ".gt.txt");
    if (!gt) throw IoError("cannot write '" + base.string() + ".gt.txt'");
    gt << "# class is_thing instance_id rle(row-major, zeros first)\n";
    for (const auto& e : scene.entities) {
        gt << e.class_id << ' ' << (e.is_thing ? 1 : 0) << ' ' << e.instance_id;
        for (std::size_t r : rle_encode(e.mask)) gt << ' ' << r;
        gt << '\n';
    }
}

} // namespace rmps
