#include "rmps/image_io.hpp"

#include "rmps/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rmps {

RgbImage RgbImage::from_tensor(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("RgbImage::from_tensor: expected [3 x H x W], got " + shape_str(image.shape()));
    }
    RgbImage out;
    out.height = image.dim(1);
    out.width = image.dim(2);
    out.pixels.resize(3 * out.height * out.width);
    const std::size_t plane = out.height * out.width;
    auto d = image.data();
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            out.pixels[3 * p + c] = std::uint8_t(std::lround(std::clamp(d[c * plane + p], 0.0, 1.0) * 255.0));
        }
    }
    return out;
}

void RgbImage::set(std::size_t row, std::size_t col, std::array<std::uint8_t, 3> rgb) {
    std::copy(rgb.begin(), rgb.end(), pixels.begin() + 3 * (row * width + col));
}

std::array<std::uint8_t, 3> RgbImage::get(std::size_t row, std::size_t col) const {
    const std::size_t o = 3 * (row * width + col);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
}

void write_ppm(const std::string& path, const RgbImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), std::streamsize(image.pixels.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

RgbImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string magic;
    std::size_t maxval = 0;
    RgbImage img;
    in >> magic >> img.width >> img.height >> maxval;
    if (magic != "P6" || maxval != 255 || !in) throw ParseError("'" + path + "' is not an 8-bit P6 image");
    in.get();
    img.pixels.resize(3 * img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!in) throw ParseError("'" + path + "' is truncated");
    return img;
}

std::array<std::uint8_t, 3> palette_color(std::size_t id) {
    if (id == 0) return {0, 0, 0};
    // Golden-ratio hue walk with fixed saturation and value.
    const double h = std::fmod(double(id) * 0.618033988749895, 1.0) * 6.0;
    const double s = 0.75, v = 0.95;
    const int sector = int(h);
    const double f = h - sector;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
    }
    return {std::uint8_t(std::lround(r * 255)), std::uint8_t(std::lround(g * 255)), std::uint8_t(std::lround(b * 255))};
}

} // namespace rmps
