#pragma once

#include "rmps/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace rmps {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

std::size_t total_elements(const ParamList& params);

/// Deterministic weight initializer. Truncated normal draws are resampled
/// outside two standard deviations.
class Initializer {
  public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor trunc_normal(Shape shape, double sigma = 0.02);
    Tensor normal(Shape shape, double sigma = 1.0);
    std::mt19937_64& rng() { return rng_; }

  private:
    std::mt19937_64 rng_;
};

/// y = x W + b with W stored [in x out]; `bias` may be undefined.
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear init(Initializer& init, std::size_t in, std::size_t out);
    static Linear init_no_bias(Initializer& init, std::size_t in, std::size_t out);
    Tensor operator()(const Tensor& x) const;
    std::size_t in() const { return weight.dim(0); }
    std::size_t out() const { return weight.dim(1); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Norm {
    Tensor gamma;
    Tensor beta;

    static Norm init(std::size_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// FC -> GELU -> FC.
struct Ffn {
    Linear fc1;
    Linear fc2;

    static Ffn init(Initializer& init, std::size_t in, std::size_t hidden, std::size_t out);
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
    void collect(const std::string& prefix, ParamList& out) const;
};

} // namespace rmps
