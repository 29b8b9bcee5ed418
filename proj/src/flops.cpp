#include "rmps/flops.hpp"

#include <algorithm>

namespace rmps {

namespace {

using u64 = std::uint64_t;

u64 linear_params(u64 in, u64 out) { return in * out + out; }
u64 ffn_params(u64 in, u64 hidden, u64 out) { return linear_params(in, hidden) + linear_params(hidden, out); }

// q, v, o with bias; k without.
u64 attention_params(u64 d) { return 4 * d * d + 3 * d; }

u64 update_params(DecoderKind kind, u64 d) {
    switch (kind) {
    case DecoderKind::pool_dcg: return 2 * (linear_params(d, d) + 2 * d);
    case DecoderKind::pool_dc: return 2 * d;
    case DecoderKind::per_pixel_ca: return attention_params(d);
    }
    return 0;
}

u64 decoder_params(const ModelConfig& cfg, bool with_classifier) {
    const u64 d = cfg.d, c1 = cfg.num_classes() + 1;
    u64 stage = update_params(cfg.decoder, d) + attention_params(d) + ffn_params(d, cfg.ffn_hidden(), d);
    u64 head = linear_params(d, d) + (with_classifier ? ffn_params(d, d, c1) : 0);
    return kDecoderStages * stage + (kDecoderStages + 1) * head;
}

u64 adapter_params(AdapterKind kind, u64 d) {
    switch (kind) {
    case AdapterKind::none: return 0;
    case AdapterKind::dc: return 2 * (linear_params(d, d) + 2 * d);
    case AdapterKind::ca: return attention_params(d) + d * d; // plus the PE projection
    }
    return 0;
}

// Self-attention and FFN mixing over n rows.
u64 mix_flops(u64 n, u64 d, u64 hidden) {
    return 4 * matmul_flops(n, d, d) + matmul_flops(n, d, n) + matmul_flops(n, n, d) + matmul_flops(n, d, hidden) +
           matmul_flops(n, hidden, d);
}

u64 mask_flops(u64 n, u64 positions, u64 d) { return matmul_flops(n, d, d) + matmul_flops(n, d, positions); }

u64 classifier_flops(u64 n, u64 d, u64 c1) { return matmul_flops(n, d, d) + matmul_flops(n, d, c1); }

u64 adapter_flops(AdapterKind kind, u64 n, u64 positions, u64 d) {
    switch (kind) {
    case AdapterKind::none: return 0;
    case AdapterKind::dc: return query_update_flops(DecoderKind::pool_dcg, n, positions, d);
    case AdapterKind::ca:
        // The positional projection of the key input is the extra term.
        return query_update_flops(DecoderKind::per_pixel_ca, n, positions, d) + matmul_flops(positions, d, d);
    }
    return 0;
}

} // namespace

std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n) { return 2 * m * k * n; }

std::uint64_t conv_flops(std::uint64_t k, std::uint64_t cin, std::uint64_t cout, std::uint64_t out_h,
                         std::uint64_t out_w) {
    return 2 * k * k * cin * cout * out_h * out_w;
}

std::uint64_t FlopsReport::component(const std::string& name) const {
    for (const auto& [n, v] : components)
        if (n == name) return v;
    return 0;
}

std::uint64_t query_update_flops(DecoderKind kind, std::uint64_t n, std::uint64_t positions, std::uint64_t d) {
    const u64 pooling = matmul_flops(n, positions, d);
    const u64 combine = 3 * n * d; // two products and one sum per element
    switch (kind) {
    case DecoderKind::pool_dcg: return pooling + 2 * matmul_flops(n, d, d) + combine;
    case DecoderKind::pool_dc: return pooling + combine;
    case DecoderKind::per_pixel_ca:
        return matmul_flops(n, d, d) + 2 * matmul_flops(positions, d, d) + matmul_flops(n, d, positions) +
               matmul_flops(n, positions, d) + matmul_flops(n, d, d);
    }
    return 0;
}

std::uint64_t decoder_stage_flops(DecoderKind kind, std::uint64_t n, std::uint64_t positions, std::uint64_t d,
                                  std::uint64_t classes_plus_one) {
    return query_update_flops(kind, n, positions, d) + mix_flops(n, d, 2 * d) + mask_flops(n, positions, d) +
           classifier_flops(n, d, classes_plus_one);
}

std::uint64_t analytic_backbone_params(const ModelConfig& cfg) {
    u64 total = 0, in = 3;
    for (std::size_t s = 0; s < 4; ++s) {
        const u64 c = cfg.channels[s];
        total += 9 * in * c + c + 2 * c + 9 * c * c + c + 2 * c;
        in = c;
    }
    for (std::size_t l = 0; l < 3; ++l) total += u64(cfg.channels[l + 1]) * cfg.d + cfg.d + 9 * u64(cfg.d) * cfg.d + cfg.d;
    return total;
}

std::uint64_t analytic_param_count(const ModelConfig& cfg) {
    const u64 d = cfg.d;
    u64 total = analytic_backbone_params(cfg);
    total += linear_params(d, d) + d;   // prompt encoder
    total += u64(cfg.n_queries) * d;    // query embeddings
    total += decoder_params(cfg, true);
    if (cfg.decoupled()) total += decoder_params(cfg, false);
    const AdapterVariant v = cfg.effective_adapter();
    total += adapter_params(v.obj, d) + adapter_params(v.prompt, d);
    return total;
}

FlopsReport count_flops(const ModelConfig& base, DecoderKind kind, std::size_t height, std::size_t width,
                        std::size_t frames, std::size_t prompts) {
    ModelConfig cfg = base;
    cfg.decoder = kind;
    FlopsReport r;
    const u64 d = cfg.d, c1 = cfg.num_classes() + 1, n = cfg.n_queries, k = prompts, hidden = cfg.ffn_hidden();

    u64 h = height, w = width, in = 3;
    for (std::size_t s = 0; s < 4; ++s) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        const u64 c = cfg.channels[s];
        const u64 f = frames * (conv_flops(3, in, c, h, w) + conv_flops(3, c, c, h, w));
        r.components.push_back({"backbone.stage" + std::to_string(s + 1), f});
        r.backbone += f;
        in = c;
    }
    const u64 h4 = (height + 3) / 4, w4 = (width + 3) / 4;
    for (std::size_t l = 0; l < 3; ++l) {
        const u64 lh = h4 >> l, lw = w4 >> l;
        const u64 f = frames * (conv_flops(1, cfg.channels[l + 1], d, lh, lw) + conv_flops(3, d, d, lh, lw));
        r.components.push_back({"backbone.fpn" + std::to_string(l), f});
        r.backbone += f;
    }

    const u64 positions = frames * h4 * w4;
    auto add_decoder = [&](const std::string& name, u64 f) {
        r.components.push_back({name, f});
        r.decoder += f;
    };
    add_decoder("decoder.initial", mask_flops(n, positions, d) + classifier_flops(n, d, c1));
    for (std::size_t s = 0; s < kDecoderStages; ++s) {
        add_decoder("decoder.stage" + std::to_string(s + 1), decoder_stage_flops(kind, n, positions, d, c1));
    }
    if (k > 0) {
        const bool decoupled = cfg.decoupled();
        u64 f = matmul_flops(k, d, d) + mask_flops(k, positions, d);
        for (std::size_t s = 0; s < kDecoderStages; ++s) {
            f += query_update_flops(kind, k, positions, d) + mask_flops(k, positions, d);
            if (decoupled) {
                f += k * mix_flops(1, d, hidden);
            } else if (cfg.prompt_in_mhsa) {
                f += mix_flops(n + k, d, hidden) - mix_flops(n, d, hidden);
            }
        }
        add_decoder("decoder.prompts", f);
    }

    const AdapterVariant v = cfg.effective_adapter();
    if (v.obj != AdapterKind::none) {
        const u64 f = adapter_flops(v.obj, n, positions, d) + mask_flops(n, positions, d) + classifier_flops(n, d, c1);
        r.components.push_back({"adapter.obj", f});
        r.adapters += f;
    }
    if (k > 0 && v.prompt != AdapterKind::none) {
        const u64 f = adapter_flops(v.prompt, k, positions, d) + mask_flops(k, positions, d);
        r.components.push_back({"adapter.prompt", f});
        r.adapters += f;
    }
    r.total = r.backbone + r.decoder + r.adapters;
    r.params = analytic_param_count(cfg);
    return r;
}

} // namespace rmps
