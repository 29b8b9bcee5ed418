#pragma once

#include "rmps/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rmps {

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // interleaved RGB, row-major

    static RgbImage from_tensor(const Tensor& image); // [3 x H x W] in [0, 1]
    void set(std::size_t row, std::size_t col, std::array<std::uint8_t, 3> rgb);
    std::array<std::uint8_t, 3> get(std::size_t row, std::size_t col) const;
};

/// Binary P6 PPM, maxval 255.
void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);

/// Distinct deterministic color for a segment or instance id (0 is black).
std::array<std::uint8_t, 3> palette_color(std::size_t id);

} // namespace rmps
