#pragma once

#include "rmps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rmps::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double sigma = 1.0) {
    std::normal_distribution<double> dist(0.0, sigma);
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = dist(rng);
    return t;
}

inline Tensor random_uniform(std::mt19937_64& rng, Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = dist(rng);
    return t;
}

// Owning copy, safe to iterate when `t` is a temporary.
inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    return max_abs_diff(a.data(), b.data());
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Naive references.

inline std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
    const long cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const long cout = w.dim(0), k = w.dim(2);
    const long oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    std::vector<double> y(cout * oh * ow, 0.0);
    for (long o = 0; o < cout; ++o)
        for (long r = 0; r < oh; ++r)
            for (long c = 0; c < ow; ++c) {
                double s = 0.0;
                for (long i = 0; i < cin; ++i)
                    for (long u = 0; u < k; ++u)
                        for (long v = 0; v < k; ++v) {
                            const long yy = r * stride + u - pad, xx = c * stride + v - pad;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                            s += x[(i * h + yy) * wd + xx] * w[((o * cin + i) * k + u) * k + v];
                        }
                y[(o * oh + r) * ow + c] = s;
            }
    return y;
}

} // namespace rmps::testing
