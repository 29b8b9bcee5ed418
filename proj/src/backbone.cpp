#include "rmps/backbone.hpp"

#include "rmps/error.hpp"

#include <cmath>

namespace rmps {

Tensor FeatureMap::data() const {
    if (mode == FeatureMode::image) return reshape(pixels, {height, width, channels});
    return reshape(pixels, {frames, height, width, channels});
}

FeatureMap FeatureMap::frame(std::size_t t) const {
    if (t >= frames) throw DimensionError("FeatureMap::frame: index " + std::to_string(t) + " out of range");
    return make_image_features(slice_rows(pixels, t * plane(), plane()), height, width);
}

FeatureMap make_image_features(Tensor pixels, std::size_t height, std::size_t width) {
    if (pixels.rank() != 2 || pixels.dim(0) != height * width) {
        throw DimensionError("make_image_features: pixels " + shape_str(pixels.shape()) + " do not cover " +
                             std::to_string(height) + "x" + std::to_string(width));
    }
    FeatureMap f;
    f.mode = FeatureMode::image;
    f.frames = 1;
    f.height = height;
    f.width = width;
    f.channels = pixels.dim(1);
    f.pixels = std::move(pixels);
    return f;
}

FeatureMap stack_frames(std::span<const FeatureMap> frames) {
    if (frames.empty()) throw DimensionError("stack_frames: no frames");
    std::vector<Tensor> parts;
    for (const auto& f : frames) {
        if (f.mode != FeatureMode::image || f.height != frames[0].height || f.width != frames[0].width ||
            f.channels != frames[0].channels) {
            throw DimensionError("stack_frames: frames must be image maps of identical shape");
        }
        parts.push_back(f.pixels);
    }
    FeatureMap out = frames[0];
    out.mode = FeatureMode::video;
    out.frames = frames.size();
    out.pixels = concat_rows(parts);
    return out;
}

ConvLayer ConvLayer::init(Initializer& init, std::size_t in, std::size_t out, std::size_t k) {
    return {init.trunc_normal({out, in, k, k}), Tensor::zeros({out})};
}

Tensor ConvLayer::operator()(const Tensor& x, int stride) const {
    const int k = int(weight.dim(2));
    return conv2d(x, weight, bias, stride, k / 2);
}

void ConvLayer::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

BackboneWeights BackboneWeights::init(Initializer& init, const ModelConfig& cfg) {
    BackboneWeights w;
    std::size_t in = 3;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t c = cfg.channels[s];
        w.stages[s].down = ConvLayer::init(init, in, c, 3);
        w.stages[s].down_norm = Norm::init(c);
        w.stages[s].conv = ConvLayer::init(init, c, c, 3);
        w.stages[s].conv_norm = Norm::init(c);
        in = c;
    }
    for (std::size_t l = 0; l < 3; ++l) {
        w.laterals[l] = ConvLayer::init(init, cfg.channels[l + 1], cfg.d, 1);
        w.outputs[l] = ConvLayer::init(init, cfg.d, cfg.d, 3);
    }
    return w;
}

void BackboneWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string p = prefix + ".stage" + std::to_string(s + 1);
        stages[s].down.collect(p + ".down", out);
        stages[s].down_norm.collect(p + ".down_norm", out);
        stages[s].conv.collect(p + ".conv", out);
        stages[s].conv_norm.collect(p + ".conv_norm", out);
    }
    for (std::size_t l = 0; l < 3; ++l) {
        laterals[l].collect(prefix + ".fpn.lateral" + std::to_string(l), out);
        outputs[l].collect(prefix + ".fpn.output" + std::to_string(l), out);
    }
}

Tensor channel_norm(const Tensor& x, const Norm& norm) {
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor rows = transpose(reshape(x, {c, h * w}));
    return reshape(transpose(norm(rows)), {c, h, w});
}

FeatureMap backbone_forward(const Tensor& image, const BackboneWeights& w) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw InputError("backbone_forward: expected [3 x H x W] image, got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), wd = image.dim(2);
    if (h % 16 != 0 || wd % 16 != 0) {
        throw InputError("backbone_forward: image extents " + std::to_string(h) + "x" + std::to_string(wd) +
                         " must be divisible by 16");
    }
    std::array<Tensor, 4> feats;
    Tensor x = image;
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& st = w.stages[s];
        x = relu(channel_norm(st.down(x, 2), st.down_norm));
        x = relu(channel_norm(st.conv(x, 1), st.conv_norm));
        feats[s] = x;
    }
    // Top-down pathway over strides 16 -> 8 -> 4.
    Tensor p16 = w.laterals[2](feats[3], 1);
    Tensor p8 = add(w.laterals[1](feats[2], 1), bilinear_resize(p16, feats[2].dim(1), feats[2].dim(2)));
    Tensor p4 = add(w.laterals[0](feats[1], 1), bilinear_resize(p8, feats[1].dim(1), feats[1].dim(2)));
    const std::size_t fh = feats[1].dim(1), fw = feats[1].dim(2);
    Tensor fused = w.outputs[0](p4, 1);
    fused = add(fused, bilinear_resize(w.outputs[1](p8, 1), fh, fw));
    fused = add(fused, bilinear_resize(w.outputs[2](p16, 1), fh, fw));
    const std::size_t d = fused.dim(0);
    return make_image_features(transpose(reshape(fused, {d, fh * fw})), fh, fw);
}

FeatureMap backbone_forward_video(const Tensor& clip, const BackboneWeights& w) {
    if (clip.rank() != 4) throw InputError("backbone_forward_video: expected [T x 3 x H x W], got " + shape_str(clip.shape()));
    const std::size_t t = clip.dim(0);
    std::vector<FeatureMap> frames;
    for (std::size_t i = 0; i < t; ++i) {
        Tensor frame = reshape(slice_rows(clip, i, 1), {clip.dim(1), clip.dim(2), clip.dim(3)});
        frames.push_back(backbone_forward(frame, w));
    }
    return stack_frames(frames);
}

} // namespace rmps
