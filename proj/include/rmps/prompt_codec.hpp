#pragma once

#include "rmps/layers.hpp"
#include "rmps/tensor.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rmps {

enum class PromptKind { point, box };

/// A point (x, y) or box (x1, y1, x2, y2) in pixel coordinates of a
/// width x height image. Points satisfy 0 <= x < W, 0 <= y < H; boxes satisfy
/// 0 <= x1 < x2 <= W and 0 <= y1 < y2 <= H (edge coordinates).
struct VisualPrompt {
    PromptKind kind = PromptKind::point;
    std::array<double, 4> coords{};
    double image_width = 0;
    double image_height = 0;

    static VisualPrompt point(double x, double y, double width, double height);
    static VisualPrompt box(double x1, double y1, double x2, double y2, double width, double height);

    /// Throws InputError when the coordinates violate the invariants.
    void validate() const;

    friend bool operator==(const VisualPrompt&, const VisualPrompt&) = default;
};

/// Sine-cosine encoding of normalized coordinates (nx, ny) with d/4 bands per
/// axis, frequency 2*pi*2^j for band j. Layout, with B = d/4:
///   [0, B)    sin(w_j nx)      [B, 2B)   cos(w_j nx)
///   [2B, 3B)  sin(w_j ny)      [3B, 4B)  cos(w_j ny)
/// so band 0 of x sits at index 0 (sin) and B (cos).
std::vector<double> positional_encoding(double nx, double ny, std::size_t d);

/// Encoding of every cell center of an h x w grid, [h*w x d].
Tensor grid_positional_encoding(std::size_t height, std::size_t width, std::size_t d);

struct PromptEncoderWeights {
    Linear affine;    // d -> d, shared by points and boxes
    Tensor box_embed; // [d]

    static PromptEncoderWeights init(Initializer& init, std::size_t d);
    std::size_t d() const { return affine.in(); }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// [1 x d] query for a point prompt.
Tensor encode_point(const VisualPrompt& p, const PromptEncoderWeights& w);
/// [1 x d] query for a box: mean of both corner encodings plus the box embedding.
Tensor encode_box(const VisualPrompt& b, const PromptEncoderWeights& w);
/// [K x d]; row i encodes prompts[i].
Tensor encode_prompts(std::span<const VisualPrompt> prompts, const PromptEncoderWeights& w);

/// Replay file: one prompt per line, `point x y` or `box x1 y1 x2 y2`.
std::vector<VisualPrompt> read_prompts(std::istream& in, double width, double height);
std::vector<VisualPrompt> read_prompt_file(const std::string& path, double width, double height);
void write_prompts(std::ostream& out, std::span<const VisualPrompt> prompts);

} // namespace rmps
