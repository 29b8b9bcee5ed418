#include "rmps/layers.hpp"

#include <cmath>

namespace rmps {

std::size_t total_elements(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

Tensor Initializer::trunc_normal(Shape shape, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
        do {
            v = dist(rng_);
        } while (std::abs(v) > 2.0 * sigma);
    }
    return Tensor(std::move(shape), std::move(values));
}

Tensor Initializer::normal(Shape shape, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng_);
    return Tensor(std::move(shape), std::move(values));
}

Linear Linear::init(Initializer& init, std::size_t in, std::size_t out) {
    return {init.trunc_normal({in, out}), Tensor::zeros({out})};
}

Linear Linear::init_no_bias(Initializer& init, std::size_t in, std::size_t out) {
    return {init.trunc_normal({in, out}), Tensor()};
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Norm Norm::init(std::size_t width) { return {Tensor::ones({width}), Tensor::zeros({width})}; }

void Norm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Ffn Ffn::init(Initializer& init, std::size_t in, std::size_t hidden, std::size_t out) {
    Ffn f;
    f.fc1 = Linear::init(init, in, hidden);
    f.fc2 = Linear::init(init, hidden, out);
    return f;
}

void Ffn::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

} // namespace rmps
