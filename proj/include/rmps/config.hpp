#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace rmps {

/// Meta-architectures: (a) shared decoder, (b) decoupled decoders,
/// (c) shared decoder + adapters, (d) decoupled decoders + adapters.
enum class MetaArch { a, b, c, d };

enum class AdapterKind { none, dc, ca };

/// Query update used inside each decoder stage.
enum class DecoderKind { pool_dcg, pool_dc, per_pixel_ca };

/// How full-resolution ground truth is reduced to stride-4 mask targets:
/// sample the cell centre, or take the covered fraction of the cell.
enum class MaskTargetRule { nearest, area };

struct AdapterVariant {
    AdapterKind obj = AdapterKind::dc;
    AdapterKind prompt = AdapterKind::ca;

    friend bool operator==(const AdapterVariant&, const AdapterVariant&) = default;
};

inline constexpr std::size_t kDecoderStages = 3;

struct ModelConfig {
    std::size_t d = 64;
    std::size_t n_queries = 20;
    std::size_t heads = 4;
    std::size_t thing_classes = 3;
    std::size_t stuff_classes = 2;
    MetaArch arch = MetaArch::c;
    AdapterVariant adapter{};
    DecoderKind decoder = DecoderKind::pool_dcg;
    bool prompt_in_mhsa = false;
    bool mix_residual = false;
    std::size_t image_size = 64;
    std::size_t clip_frames = 2;
    std::array<std::size_t, 4> channels{16, 32, 64, 128};

    std::size_t num_classes() const { return thing_classes + stuff_classes; }
    std::size_t no_object() const { return num_classes(); }
    std::size_t ffn_hidden() const { return 2 * d; }
    bool has_adapters() const { return arch == MetaArch::c || arch == MetaArch::d; }
    bool decoupled() const { return arch == MetaArch::b || arch == MetaArch::d; }
    /// Adapter variant actually instantiated (none for architectures without adapters).
    AdapterVariant effective_adapter() const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossWeights {
    double cls = 2.0;
    double ce = 5.0;
    double dice = 5.0;
    double no_object = 0.1;
    MaskTargetRule mask_targets = MaskTargetRule::nearest;
};

struct TrainConfig {
    double lr = 1e-4;
    std::size_t steps = 2000;
    std::size_t warmup = 500;
    std::size_t batch = 1; // samples of one data type per step
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::array<double, 2> decay_at{2.0 / 3.0, 11.0 / 12.0};
    double grad_clip = 0.0; // 0 disables global-norm clipping
    std::uint64_t seed = 0;
};

struct DataConfig {
    std::array<std::size_t, 3> ratio{1, 1, 1}; // panoptic : video : prompt
    std::size_t min_things = 1;
    std::size_t max_things = 4;
    std::size_t max_prompt_entities = 3;
    bool scale_jitter = false;
};

struct InferConfig {
    double s_min = 0.30;
    double keep_frac = 0.5;
    std::size_t min_area = 16;
    double sim_threshold = 0.5;
    double vis_score_min = 0.05;
    double mask_threshold = 0.5;
};

struct RunConfig {
    ModelConfig model;
    LossWeights loss;
    TrainConfig train;
    DataConfig data;
    InferConfig infer;
};

std::string to_string(MetaArch arch);
std::string to_string(AdapterKind kind);
std::string to_string(DecoderKind kind);
std::string to_string(MaskTargetRule rule);
MetaArch parse_meta_arch(const std::string& text);
AdapterKind parse_adapter_kind(const std::string& text);
DecoderKind parse_decoder_kind(const std::string& text);
MaskTargetRule parse_mask_target_rule(const std::string& text);

/// Applies one `key = value` assignment. Unknown keys and malformed values
/// raise ConfigError naming the key.
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Parses the namespaced key = value text format; '#' starts a comment.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Model keys with their current values, as written into checkpoints.
std::map<std::string, double> model_config_entries(const ModelConfig& model);
void write_config(std::ostream& out, const RunConfig& config);

} // namespace rmps
