#include "rmps/prompt_codec.hpp"

#include "rmps/error.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rmps {

namespace {

std::string describe(const VisualPrompt& p) {
    std::ostringstream os;
    if (p.kind == PromptKind::point) {
        os << "point (" << p.coords[0] << ", " << p.coords[1] << ")";
    } else {
        os << "box (" << p.coords[0] << ", " << p.coords[1] << ", " << p.coords[2] << ", " << p.coords[3] << ")";
    }
    os << " in " << p.image_width << "x" << p.image_height;
    return os.str();
}

// Pre-affine encoding of one prompt row.
std::vector<double> prompt_features(const VisualPrompt& p, std::size_t d) {
    p.validate();
    if (p.kind == PromptKind::point) {
        return positional_encoding(p.coords[0] / p.image_width, p.coords[1] / p.image_height, d);
    }
    auto a = positional_encoding(p.coords[0] / p.image_width, p.coords[1] / p.image_height, d);
    auto b = positional_encoding(p.coords[2] / p.image_width, p.coords[3] / p.image_height, d);
    for (std::size_t i = 0; i < d; ++i) a[i] = 0.5 * (a[i] + b[i]);
    return a;
}

} // namespace

VisualPrompt VisualPrompt::point(double x, double y, double width, double height) {
    return {PromptKind::point, {x, y, 0.0, 0.0}, width, height};
}

VisualPrompt VisualPrompt::box(double x1, double y1, double x2, double y2, double width, double height) {
    return {PromptKind::box, {x1, y1, x2, y2}, width, height};
}

void VisualPrompt::validate() const {
    if (!(image_width > 0) || !(image_height > 0)) throw InputError("prompt image extents must be positive");
    for (double c : coords) {
        if (!std::isfinite(c)) throw InputError("non-finite prompt coordinate: " + describe(*this));
    }
    if (kind == PromptKind::point) {
        if (coords[0] < 0 || coords[0] >= image_width || coords[1] < 0 || coords[1] >= image_height) {
            throw InputError("point prompt out of range: " + describe(*this));
        }
        return;
    }
    if (!(coords[0] < coords[2]) || !(coords[1] < coords[3])) {
        throw InputError("degenerate box prompt: " + describe(*this));
    }
    if (coords[0] < 0 || coords[1] < 0 || coords[2] > image_width || coords[3] > image_height) {
        throw InputError("box prompt out of range: " + describe(*this));
    }
}

std::vector<double> positional_encoding(double nx, double ny, std::size_t d) {
    if (d == 0 || d % 4 != 0) throw InputError("positional_encoding: width must be a positive multiple of 4");
    const std::size_t bands = d / 4;
    std::vector<double> e(d);
    double freq = 2.0 * std::numbers::pi;
    for (std::size_t j = 0; j < bands; ++j) {
        e[j] = std::sin(freq * nx);
        e[bands + j] = std::cos(freq * nx);
        e[2 * bands + j] = std::sin(freq * ny);
        e[3 * bands + j] = std::cos(freq * ny);
        freq *= 2.0;
    }
    return e;
}

Tensor grid_positional_encoding(std::size_t height, std::size_t width, std::size_t d) {
    std::vector<double> values;
    values.reserve(height * width * d);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            auto e = positional_encoding((double(x) + 0.5) / double(width), (double(y) + 0.5) / double(height), d);
            values.insert(values.end(), e.begin(), e.end());
        }
    }
    return Tensor({height * width, d}, std::move(values));
}

PromptEncoderWeights PromptEncoderWeights::init(Initializer& init, std::size_t d) {
    return {Linear::init(init, d, d), init.trunc_normal({d})};
}

void PromptEncoderWeights::collect(const std::string& prefix, ParamList& out) const {
    affine.collect(prefix + ".affine", out);
    out.push_back({prefix + ".box_embed", box_embed});
}

Tensor encode_point(const VisualPrompt& p, const PromptEncoderWeights& w) {
    if (p.kind != PromptKind::point) throw InputError("encode_point: prompt is a box");
    return encode_prompts(std::span(&p, 1), w);
}

Tensor encode_box(const VisualPrompt& b, const PromptEncoderWeights& w) {
    if (b.kind != PromptKind::box) throw InputError("encode_box: prompt is a point");
    return encode_prompts(std::span(&b, 1), w);
}

Tensor encode_prompts(std::span<const VisualPrompt> prompts, const PromptEncoderWeights& w) {
    if (prompts.empty()) throw InputError("encode_prompts: prompt list is empty");
    const std::size_t d = w.d();
    const std::size_t k = prompts.size();
    std::vector<double> features;
    features.reserve(k * d);
    std::vector<double> is_box(k);
    for (std::size_t i = 0; i < k; ++i) {
        auto f = prompt_features(prompts[i], d);
        features.insert(features.end(), f.begin(), f.end());
        is_box[i] = prompts[i].kind == PromptKind::box ? 1.0 : 0.0;
    }
    Tensor q = w.affine(Tensor({k, d}, std::move(features)));
    Tensor box_rows = matmul(Tensor({k, 1}, std::move(is_box)), reshape(w.box_embed, {1, d}));
    return add(q, box_rows);
}

std::vector<VisualPrompt> read_prompts(std::istream& in, double width, double height) {
    std::vector<VisualPrompt> prompts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind)) continue;
        auto fail = [&]() {
            throw ParseError("prompt file line " + std::to_string(lineno) + ": expected 'point x y' or 'box x1 y1 x2 y2'");
        };
        VisualPrompt p;
        if (kind == "point") {
            double x, y;
            if (!(ls >> x >> y)) fail();
            p = VisualPrompt::point(x, y, width, height);
        } else if (kind == "box") {
            double x1, y1, x2, y2;
            if (!(ls >> x1 >> y1 >> x2 >> y2)) fail();
            p = VisualPrompt::box(x1, y1, x2, y2, width, height);
        } else {
            fail();
        }
        std::string extra;
        if (ls >> extra) fail();
        p.validate();
        prompts.push_back(p);
    }
    return prompts;
}

std::vector<VisualPrompt> read_prompt_file(const std::string& path, double width, double height) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prompt file '" + path + "'");
    return read_prompts(in, width, height);
}

void write_prompts(std::ostream& out, std::span<const VisualPrompt> prompts) {
    for (const auto& p : prompts) {
        if (p.kind == PromptKind::point) {
            out << "point " << p.coords[0] << ' ' << p.coords[1] << '\n';
        } else {
            out << "box " << p.coords[0] << ' ' << p.coords[1] << ' ' << p.coords[2] << ' ' << p.coords[3] << '\n';
        }
    }
}

} // namespace rmps
