#include "rmps/config.hpp"

#include "rmps/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace rmps {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ':') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t x = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.d", [](RunConfig& c, auto& k, auto& v) { c.model.d = to_size(k, v); }},
        {"model.n_queries", [](RunConfig& c, auto& k, auto& v) { c.model.n_queries = to_size(k, v); }},
        {"model.heads", [](RunConfig& c, auto& k, auto& v) { c.model.heads = to_size(k, v); }},
        {"model.arch", [](RunConfig& c, auto&, auto& v) { c.model.arch = parse_meta_arch(v); }},
        {"model.decoder", [](RunConfig& c, auto&, auto& v) { c.model.decoder = parse_decoder_kind(v); }},
        {"model.prompt_in_mhsa", [](RunConfig& c, auto& k, auto& v) { c.model.prompt_in_mhsa = to_bool(k, v); }},
        {"model.mix_residual", [](RunConfig& c, auto& k, auto& v) { c.model.mix_residual = to_bool(k, v); }},
        {"model.image_size", [](RunConfig& c, auto& k, auto& v) { c.model.image_size = to_size(k, v); }},
        {"model.clip_frames", [](RunConfig& c, auto& k, auto& v) { c.model.clip_frames = to_size(k, v); }},
        {"model.channels",
         [](RunConfig& c, auto& k, auto& v) {
             auto parts = split_list(v);
             if (parts.size() != 4) throw ConfigError("config key '" + k + "': expected 4 channel counts");
             for (std::size_t i = 0; i < 4; ++i) c.model.channels[i] = to_size(k, parts[i]);
         }},
        {"adapter.obj", [](RunConfig& c, auto&, auto& v) { c.model.adapter.obj = parse_adapter_kind(v); }},
        {"adapter.prompt", [](RunConfig& c, auto&, auto& v) { c.model.adapter.prompt = parse_adapter_kind(v); }},
        {"loss.cls", [](RunConfig& c, auto& k, auto& v) { c.loss.cls = to_double(k, v); }},
        {"loss.ce", [](RunConfig& c, auto& k, auto& v) { c.loss.ce = to_double(k, v); }},
        {"loss.dice", [](RunConfig& c, auto& k, auto& v) { c.loss.dice = to_double(k, v); }},
        {"loss.no_object", [](RunConfig& c, auto& k, auto& v) { c.loss.no_object = to_double(k, v); }},
        {"loss.mask_targets", [](RunConfig& c, auto&, auto& v) { c.loss.mask_targets = parse_mask_target_rule(v); }},
        {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = to_double(k, v); }},
        {"train.steps", [](RunConfig& c, auto& k, auto& v) { c.train.steps = to_size(k, v); }},
        {"train.batch", [](RunConfig& c, auto& k, auto& v) { c.train.batch = to_size(k, v); }},
        {"train.warmup", [](RunConfig& c, auto& k, auto& v) { c.train.warmup = to_size(k, v); }},
        {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = to_double(k, v); }},
        {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = to_double(k, v); }},
        {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = to_double(k, v); }},
        {"train.decay_at",
         [](RunConfig& c, auto& k, auto& v) {
             auto parts = split_list(v);
             if (parts.size() != 2) throw ConfigError("config key '" + k + "': expected two fractions");
             for (std::size_t i = 0; i < 2; ++i) c.train.decay_at[i] = to_double(k, parts[i]);
         }},
        {"train.grad_clip", [](RunConfig& c, auto& k, auto& v) { c.train.grad_clip = to_double(k, v); }},
        {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = to_size(k, v); }},
        {"data.ratio",
         [](RunConfig& c, auto& k, auto& v) {
             auto parts = split_list(v);
             if (parts.size() != 3) throw ConfigError("config key '" + k + "': expected panoptic,video,prompt");
             for (std::size_t i = 0; i < 3; ++i) c.data.ratio[i] = to_size(k, parts[i]);
         }},
        {"data.min_things", [](RunConfig& c, auto& k, auto& v) { c.data.min_things = to_size(k, v); }},
        {"data.max_things", [](RunConfig& c, auto& k, auto& v) { c.data.max_things = to_size(k, v); }},
        {"data.max_prompt_entities",
         [](RunConfig& c, auto& k, auto& v) { c.data.max_prompt_entities = to_size(k, v); }},
        {"data.scale_jitter", [](RunConfig& c, auto& k, auto& v) { c.data.scale_jitter = to_bool(k, v); }},
        {"infer.s_min", [](RunConfig& c, auto& k, auto& v) { c.infer.s_min = to_double(k, v); }},
        {"infer.keep_frac", [](RunConfig& c, auto& k, auto& v) { c.infer.keep_frac = to_double(k, v); }},
        {"infer.min_area", [](RunConfig& c, auto& k, auto& v) { c.infer.min_area = to_size(k, v); }},
        {"infer.sim_threshold", [](RunConfig& c, auto& k, auto& v) { c.infer.sim_threshold = to_double(k, v); }},
        {"infer.vis_score_min", [](RunConfig& c, auto& k, auto& v) { c.infer.vis_score_min = to_double(k, v); }},
        {"infer.mask_threshold", [](RunConfig& c, auto& k, auto& v) { c.infer.mask_threshold = to_double(k, v); }},
    };
    return table;
}

} // namespace

AdapterVariant ModelConfig::effective_adapter() const {
    if (!has_adapters()) return {AdapterKind::none, AdapterKind::none};
    return adapter;
}

void ModelConfig::validate() const {
    if (d == 0 || d % 4 != 0) throw ConfigError("model.d must be a positive multiple of 4");
    if (heads == 0 || d % heads != 0) throw ConfigError("model.heads must divide model.d");
    if (n_queries == 0) throw ConfigError("model.n_queries must be positive");
    if (image_size == 0 || image_size % 16 != 0) throw ConfigError("model.image_size must be a positive multiple of 16");
    if (clip_frames == 0) throw ConfigError("model.clip_frames must be >= 1");
    for (auto c : channels) {
        if (c == 0) throw ConfigError("model.channels entries must be positive");
    }
}

std::string to_string(MetaArch arch) {
    switch (arch) {
    case MetaArch::a: return "a";
    case MetaArch::b: return "b";
    case MetaArch::c: return "c";
    case MetaArch::d: return "d";
    }
    return "?";
}

std::string to_string(AdapterKind kind) {
    switch (kind) {
    case AdapterKind::none: return "none";
    case AdapterKind::dc: return "DC";
    case AdapterKind::ca: return "CA";
    }
    return "?";
}

std::string to_string(DecoderKind kind) {
    switch (kind) {
    case DecoderKind::pool_dcg: return "pool_dcg";
    case DecoderKind::pool_dc: return "pool_dc";
    case DecoderKind::per_pixel_ca: return "per_pixel_ca";
    }
    return "?";
}

std::string to_string(MaskTargetRule rule) { return rule == MaskTargetRule::area ? "area" : "nearest"; }

MetaArch parse_meta_arch(const std::string& text) {
    if (text == "a") return MetaArch::a;
    if (text == "b") return MetaArch::b;
    if (text == "c") return MetaArch::c;
    if (text == "d") return MetaArch::d;
    throw ConfigError("invalid meta-architecture '" + text + "' (expected a, b, c or d)");
}

AdapterKind parse_adapter_kind(const std::string& text) {
    std::string t = text;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
    if (t == "none" || t == "-") return AdapterKind::none;
    if (t == "dc") return AdapterKind::dc;
    if (t == "ca") return AdapterKind::ca;
    throw ConfigError("invalid adapter kind '" + text + "' (expected none, DC or CA)");
}

DecoderKind parse_decoder_kind(const std::string& text) {
    if (text == "pool_dcg") return DecoderKind::pool_dcg;
    if (text == "pool_dc") return DecoderKind::pool_dc;
    if (text == "per_pixel_ca") return DecoderKind::per_pixel_ca;
    throw ConfigError("invalid decoder kind '" + text + "' (expected per_pixel_ca, pool_dc or pool_dcg)");
}

MaskTargetRule parse_mask_target_rule(const std::string& text) {
    if (text == "nearest") return MaskTargetRule::nearest;
    if (text == "area") return MaskTargetRule::area;
    throw ConfigError("invalid mask target rule '" + text + "' (expected nearest or area)");
}

void apply_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, key, value);
}

RunConfig parse_config(std::istream& in, RunConfig base) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    base.model.validate();
    if (base.data.min_things == 0 || base.data.min_things > base.data.max_things || base.data.max_things > 4) {
        throw ConfigError("data.min_things/data.max_things must satisfy 1 <= min <= max <= 4");
    }
    if (base.model.n_queries <= base.data.max_things + base.model.stuff_classes) {
        throw ConfigError("model.n_queries must exceed the maximum entity count per scene");
    }
    return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    return parse_config(in, std::move(base));
}

std::map<std::string, double> model_config_entries(const ModelConfig& m) {
    std::map<std::string, double> e;
    e["model.d"] = double(m.d);
    e["model.n_queries"] = double(m.n_queries);
    e["model.heads"] = double(m.heads);
    e["model.thing_classes"] = double(m.thing_classes);
    e["model.stuff_classes"] = double(m.stuff_classes);
    e["model.arch"] = double(int(m.arch));
    e["model.decoder"] = double(int(m.decoder));
    e["model.prompt_in_mhsa"] = m.prompt_in_mhsa ? 1.0 : 0.0;
    e["model.mix_residual"] = m.mix_residual ? 1.0 : 0.0;
    e["model.image_size"] = double(m.image_size);
    e["model.clip_frames"] = double(m.clip_frames);
    for (std::size_t i = 0; i < 4; ++i) e["model.channels." + std::to_string(i)] = double(m.channels[i]);
    e["adapter.obj"] = double(int(m.adapter.obj));
    e["adapter.prompt"] = double(int(m.adapter.prompt));
    return e;
}

void write_config(std::ostream& out, const RunConfig& c) {
    out << "model.d = " << c.model.d << '\n'
        << "model.n_queries = " << c.model.n_queries << '\n'
        << "model.heads = " << c.model.heads << '\n'
        << "model.arch = " << to_string(c.model.arch) << '\n'
        << "model.decoder = " << to_string(c.model.decoder) << '\n'
        << "model.prompt_in_mhsa = " << (c.model.prompt_in_mhsa ? "true" : "false") << '\n'
        << "model.mix_residual = " << (c.model.mix_residual ? "true" : "false") << '\n'
        << "model.image_size = " << c.model.image_size << '\n'
        << "model.clip_frames = " << c.model.clip_frames << '\n'
        << "adapter.obj = " << to_string(c.model.adapter.obj) << '\n'
        << "adapter.prompt = " << to_string(c.model.adapter.prompt) << '\n'
        << "loss.cls = " << c.loss.cls << '\n'
        << "loss.ce = " << c.loss.ce << '\n'
        << "loss.dice = " << c.loss.dice << '\n'
        << "loss.mask_targets = " << to_string(c.loss.mask_targets) << '\n'
        << "train.lr = " << c.train.lr << '\n'
        << "train.steps = " << c.train.steps << '\n'
        << "train.warmup = " << c.train.warmup << '\n'
        << "train.batch = " << c.train.batch << '\n'
        << "data.ratio = " << c.data.ratio[0] << ',' << c.data.ratio[1] << ',' << c.data.ratio[2] << '\n'
        << "infer.s_min = " << c.infer.s_min << '\n';
}

} // namespace rmps
