#include "doctest.h"
#include "helpers.hpp"

#include "rmps/error.hpp"
#include "rmps/tensor.hpp"

#include <cmath>
#include <numbers>

using namespace rmps;
using namespace rmps::testing;

TEST_CASE("matmul: identity, annihilator and loop oracle") {
    std::mt19937_64 rng(1);
    Tensor b = random_tensor(rng, {3, 2});
    Tensor eye = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 4] = 1.0;
    CHECK(bit_identical(matmul(eye, b), b));

    Tensor z = matmul(Tensor::zeros({2, 4}), random_tensor(rng, {4, 3}));
    CHECK(z.shape() == Shape{2, 3});
    for (double v : z.data()) CHECK(v == 0.0);

    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> ext(1, 8);
        Tensor a = random_tensor(rng, {ext(rng), ext(rng)});
        Tensor c = random_tensor(rng, {a.dim(1), ext(rng)});
        CHECK(max_abs_diff(matmul(a, c).data(), naive_matmul(a, c)) <= 1e-12);
    }
}

TEST_CASE("matmul rows do not depend on the batch they are computed in") {
    std::mt19937_64 rng(2);
    Tensor a = random_tensor(rng, {37, 19});
    Tensor b = random_tensor(rng, {19, 23});
    Tensor full = matmul(a, b);
    for (std::size_t r : {0u, 5u, 36u}) {
        Tensor one = matmul(slice_rows(a, r, 1), b);
        CHECK(bit_identical(one, slice_rows(full, r, 1)));
    }
}

TEST_CASE("matmul shape errors name the shapes") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("conv2d: identity kernel, hand sum and loop oracle") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor(rng, {3, 5, 6});
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
    CHECK(max_abs_diff(conv2d(x, w, 1, 0), x) == 0.0);

    Tensor y = conv2d(Tensor::ones({1, 5, 5}), Tensor::ones({1, 1, 3, 3}), 1, 1);
    for (std::size_t r = 1; r < 4; ++r)
        for (std::size_t c = 1; c < 4; ++c) CHECK(y.at({0, r, c}) == 9.0);
    CHECK(y.at({0, 0, 0}) == 4.0);

    for (int trial = 0; trial < 40; ++trial) {
        std::uniform_int_distribution<std::size_t> ext(1, 8);
        const int stride = 1 + trial % 2;
        const std::size_t k = (trial % 3 == 0) ? 1 : 3;
        const int pad = k == 3 ? 1 : 0;
        Tensor xi = random_tensor(rng, {ext(rng), ext(rng) + 2, ext(rng) + 2});
        Tensor wi = random_tensor(rng, {ext(rng), xi.dim(0), k, k});
        CHECK(max_abs_diff(conv2d(xi, wi, stride, pad).data(), naive_conv(xi, wi, stride, pad)) <= 1e-12);
    }
}

TEST_CASE("elementwise closed forms") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    Tensor x = Tensor({3}, {0.5, 2.0, 7.0});
    for (double v : values(relu(scale(x, -1.0)))) CHECK(v == 0.0);
    const double c = std::sqrt(2.0 / std::numbers::pi);
    for (double v : {-2.0, 0.1, 3.0}) {
        CHECK(gelu_value(v) == doctest::Approx(0.5 * v * (1 + std::tanh(c * (v + 0.044715 * v * v * v)))).epsilon(1e-15));
        const double h = 1e-5;
        const double fd = (gelu_value(v + h) - gelu_value(v - h)) / (2 * h);
        CHECK(std::fabs(fd - gelu_derivative(v)) / std::fabs(gelu_derivative(v)) < 1e-6);
    }
}

TEST_CASE("broadcast add over leading extent 1") {
    Tensor a = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor({1, 3}, {10, 20, 30});
    Tensor c = add(a, b);
    CHECK(c.at({1, 2}) == 36.0);
    CHECK_THROWS_AS(add(a, Tensor::zeros({2, 1})), DimensionError);
}

TEST_CASE("softmax closed forms and simplex property") {
    Tensor u = softmax(Tensor::full({4}, 3.0), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(softmax(Tensor({1}, {-7.0}), 0).item() == 1.0);
    Tensor s = softmax(Tensor({2}, {0.0, std::log(3.0)}), 0);
    CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-14));

    std::mt19937_64 rng(4);
    Tensor x = random_tensor(rng, {5, 7}, 10.0);
    for (int axis : {0, 1}) {
        Tensor p = softmax(x, axis);
        const std::size_t outer = axis == 1 ? 5 : 7, inner = axis == 1 ? 7 : 5;
        for (std::size_t o = 0; o < outer; ++o) {
            double total = 0.0;
            for (std::size_t i = 0; i < inner; ++i) {
                const double v = axis == 1 ? p.at({o, i}) : p.at({i, o});
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(std::fabs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("layer_norm closed forms") {
    Tensor g = Tensor::ones({3}), b = Tensor::zeros({3});
    for (double v : values(layer_norm(Tensor::full({2, 3}, 4.0), g, b))) CHECK(v == 0.0);
    Tensor y = layer_norm(Tensor({1, 2}, {1.0, 3.0}), Tensor::ones({2}), Tensor::zeros({2}));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("bilinear_resize") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor(rng, {2, 3, 4});
    CHECK(bit_identical(bilinear_resize(x, 3, 4), x));
    for (double v : values(bilinear_resize(Tensor::full({1, 3, 3}, 0.7), 7, 5))) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));

    // Half-pixel sampling: output 1 reads source 0.25, output 2 reads 0.75.
    Tensor cb = Tensor({1, 2, 2}, {0.0, 1.0, 1.0, 0.0});
    Tensor up = bilinear_resize(cb, 4, 4);
    CHECK(std::fabs(up.at({0, 1, 1}) - 0.375) <= 1e-12);
    CHECK(std::fabs(up.at({0, 1, 2}) - 0.625) <= 1e-12);
    // Midpoints between the two interior samples of a row or column.
    CHECK(std::fabs(0.5 * (up.at({0, 1, 1}) + up.at({0, 1, 2})) - 0.5) <= 1e-12);
    CHECK(std::fabs(0.5 * (up.at({0, 1, 1}) + up.at({0, 2, 1})) - 0.5) <= 1e-12);
}

TEST_CASE("backward: sum and square") {
    std::mt19937_64 rng(6);
    Tensor x = random_tensor(rng, {3, 4});
    x.set_requires_grad(true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
    x.zero_grad();
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x[i]).epsilon(1e-15));
}

TEST_CASE("backward accumulates through shared subexpressions") {
    Tensor x = Tensor({2}, {1.5, -2.0});
    x.set_requires_grad(true);
    Tensor y = mul(x, x);
    backward(sum(add(y, mul(y, x)))); // x^2 + x^3
    CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 3 * 1.5 * 1.5));
    CHECK(x.grad()[1] == doctest::Approx(2 * -2.0 + 3 * 4.0));
}

TEST_CASE("backward contract errors") {
    Tensor x = Tensor({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
    Tensor c = Tensor::scalar(3.0);
    CHECK_THROWS_AS(backward(c), ContractError);
}

TEST_CASE("no-grad guard records nothing") {
    Tensor x = Tensor({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    {
        NoGradGuard g;
        Tensor y = sum(mul(x, x));
        CHECK_FALSE(y.tape_id().has_value());
    }
    CHECK(grad_enabled());
}

TEST_CASE("forward passes are bit-reproducible") {
    std::mt19937_64 rng(7);
    Tensor x = random_tensor(rng, {4, 6, 6});
    Tensor w = random_tensor(rng, {5, 4, 3, 3});
    Tensor a = softmax(gelu(conv2d(x, w, 2, 1)), 2);
    Tensor b = softmax(gelu(conv2d(x, w, 2, 1)), 2);
    CHECK(bit_identical(a, b));
}

TEST_CASE("losses: closed forms") {
    // ln 2 per pixel for zero logits.
    Tensor z = Tensor::zeros({2, 8});
    Tensor t = Tensor::ones({2, 8});
    CHECK(bce_with_logits(z, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    // Disjoint saturated masks of 8 pixels each: 1 - 1/(16 + 1).
    std::vector<double> p(32, -20.0), g(32, 0.0);
    for (int i = 0; i < 8; ++i) p[i] = 20.0;
    for (int i = 8; i < 16; ++i) g[i] = 1.0;
    const double d = dice_loss(Tensor({32}, p), Tensor({32}, g)).item();
    CHECK(d == doctest::Approx(1.0 - 1.0 / 17.0).epsilon(1e-7));

    // Two on-pixels each, overlap one: 1 - (2 + 1) / (4 + 1).
    std::vector<double> p2(6, -20.0), g2(6, 0.0);
    p2[0] = p2[1] = 20.0;
    g2[1] = g2[2] = 1.0;
    CHECK(dice_loss(Tensor({6}, p2), Tensor({6}, g2)).item() == doctest::Approx(0.4).epsilon(1e-7));

    std::vector<double> same(10, -20.0), gs(10, 0.0);
    same[3] = same[4] = 20.0;
    gs[3] = gs[4] = 1.0;
    CHECK(dice_loss(Tensor({10}, same), Tensor({10}, gs)).item() < 1e-6);
}

TEST_CASE("slicing and concatenation invert each other") {
    std::mt19937_64 rng(8);
    Tensor x = random_tensor(rng, {5, 6});
    const Tensor rows[] = {slice_rows(x, 0, 2), slice_rows(x, 2, 3)};
    CHECK(bit_identical(concat_rows(rows), x));
    const Tensor cols[] = {slice_cols(x, 0, 1), slice_cols(x, 1, 5)};
    CHECK(bit_identical(concat_cols(cols), x));
    const std::size_t order[] = {4, 0, 0};
    Tensor picked = index_rows(x, order);
    CHECK(bit_identical(slice_rows(picked, 1, 1), slice_rows(x, 0, 1)));
    CHECK_THROWS_AS(slice_rows(x, 4, 2), DimensionError);
}
