#pragma once

#include "rmps/config.hpp"
#include "rmps/layers.hpp"
#include "rmps/tensor.hpp"

#include <array>

namespace rmps {

enum class FeatureMode { image, video };

/// Stride-4 feature map. `pixels` holds the map flattened to
/// [frames * height * width x channels], frame-major then row-major, which is
/// the layout every decoder contraction works on.
struct FeatureMap {
    static constexpr std::size_t stride = 4;

    FeatureMode mode = FeatureMode::image;
    std::size_t frames = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    Tensor pixels;

    std::size_t plane() const { return height * width; }
    std::size_t positions() const { return frames * height * width; }
    /// [h x w x d] for images, [T x h x w x d] for video.
    Tensor data() const;
    /// Image-mode view of frame t.
    FeatureMap frame(std::size_t t) const;
};

FeatureMap make_image_features(Tensor pixels, std::size_t height, std::size_t width);
FeatureMap stack_frames(std::span<const FeatureMap> frames);

struct ConvLayer {
    Tensor weight; // [out x in x k x k]
    Tensor bias;   // [out]

    static ConvLayer init(Initializer& init, std::size_t in, std::size_t out, std::size_t k);
    Tensor operator()(const Tensor& x, int stride) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct BackboneStage {
    ConvLayer down; // 3x3 stride 2
    Norm down_norm;
    ConvLayer conv; // 3x3 stride 1
    Norm conv_norm;
};

struct BackboneWeights {
    std::array<BackboneStage, 4> stages;
    std::array<ConvLayer, 3> laterals; // 1x1 on strides 4, 8, 16
    std::array<ConvLayer, 3> outputs;  // 3x3 on strides 4, 8, 16

    static BackboneWeights init(Initializer& init, const ModelConfig& cfg);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Layer norm over channels of a [C x H x W] map.
Tensor channel_norm(const Tensor& x, const Norm& norm);

FeatureMap backbone_forward(const Tensor& image, const BackboneWeights& w);
/// clip: [T x 3 x H x W]; frames are processed independently and stacked.
FeatureMap backbone_forward_video(const Tensor& clip, const BackboneWeights& w);

} // namespace rmps
