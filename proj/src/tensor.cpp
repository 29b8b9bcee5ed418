#include "rmps/tensor.hpp"

#include "rmps/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rmps {

namespace {

// Neumaier-compensated running sum. Long reductions feed scalar losses,
// whose round-off sets the floor for finite-difference checks.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double t = sum + v;
        carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};


thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > kMaxRank) {
        throw DimensionError("tensor rank must be in [1, 5], got shape " + shape_str(shape));
    }
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape));
    }
}

std::vector<double>& grad_buffer(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

bool needs_tape(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

Tensor new_tensor(Shape shape, std::vector<double> data) {
    return Tensor(std::move(shape), std::move(data));
}

void record(std::string_view op, Tensor& out, std::vector<std::shared_ptr<TensorImpl>> parents,
            std::function<void(std::span<const double>)> fn) {
    auto& impl = *out.impl();
    impl.requires_grad = true;
    TapeNode node{op, std::move(parents), out.impl(), std::move(fn)};
    impl.node = g_tape.append(std::move(node));
}

[[noreturn]] void dim_error(std::string_view op, const Shape& a, const Shape& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
    throw DimensionError(os.str());
}

// Leading-extent-1 broadcasting: the smaller operand must equal a trailing
// block of the output shape, so it is tiled as a whole.
Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
    const Shape& big = a.size() >= b.size() ? a : b;
    const Shape& other = a.size() >= b.size() ? b : a;
    Shape out = big;
    std::size_t offset = big.size() - other.size();
    Shape padded(offset, 1);
    padded.insert(padded.end(), other.begin(), other.end());
    // Determine output extents and check each operand is a trailing block.
    for (std::size_t i = 0; i < big.size(); ++i) {
        if (big[i] == padded[i]) continue;
        if (big[i] != 1 && padded[i] != 1) dim_error(op, a, b);
        out[i] = std::max(big[i], padded[i]);
    }
    auto is_trailing_block = [&](const Shape& s) {
        Shape p(out.size() - s.size(), 1);
        p.insert(p.end(), s.begin(), s.end());
        std::size_t k = p.size();
        while (k > 0 && p[k - 1] == out[k - 1]) --k;
        return std::all_of(p.begin(), p.begin() + long(k), [](std::size_t e) { return e == 1; });
    };
    if (!is_trailing_block(a) || !is_trailing_block(b)) dim_error(op, a, b);
    return out;
}

void check_rank2(std::string_view op, const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
    }
}

} // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor make_tensor(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }
Tensor Tensor::full(Shape shape, double value) {
    validate_shape(shape);
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}
Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape()[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
        flat = flat * shape()[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() { return grad_buffer(*impl_); }

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

std::optional<std::size_t> Tensor::tape_id() const { return impl_ ? impl_->node : std::nullopt; }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

// ---------------------------------------------------------------------------

std::size_t Tape::append(TapeNode node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

void Tape::clear() {
    for (auto& n : nodes_) {
        if (n.output) n.output->node.reset();
    }
    nodes_.clear();
}

void Tape::run_backward(std::size_t from) {
    for (std::size_t i = from + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.output->grad.empty()) continue;
        n.backward(n.output->grad);
    }
}

Tape& active_tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    auto id = loss.tape_id();
    if (!id) throw ContractError("backward: loss is not on the tape");
    auto& g = grad_buffer(*loss.impl());
    g[0] += 1.0;
    g_tape.run_backward(*id);
    g_tape.clear();
}

// ---------------------------------------------------------------------------

namespace kernels {

// c[i, :] (+)= sum_p a[i, p] * b[p, :], accumulated in increasing p. Every
// output row runs the same instruction sequence whatever m is, so a row's
// bits never depend on which other rows share the call.
void gemm_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        const double* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            const double x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = bp[j];
                c0[j] = std::fma(x0, bj, c0[j]);
                c1[j] = std::fma(x1, bj, c1[j]);
                c2[j] = std::fma(x2, bj, c2[j]);
                c3[j] = std::fma(x3, bj, c3[j]);
            }
        }
    }
    for (; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            const double x = ai[p];
            for (std::size_t j = 0; j < n; ++j) ci[j] = std::fma(x, bp[j], ci[j]);
        }
    }
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Idx = Eigen::Index;
    Eigen::Map<RowMat> cm(c, Idx(m), Idx(n));
    Eigen::Map<const RowMat> am(a, Idx(trans_a ? k : m), Idx(trans_a ? m : k));
    Eigen::Map<const RowMat> bm(b, Idx(trans_b ? n : k), Idx(trans_b ? k : n));
    if (!accumulate) cm.setZero();
    if (trans_a && trans_b) {
        cm.noalias() += am.transpose() * bm.transpose();
    } else if (trans_a) {
        cm.noalias() += am.transpose() * bm;
    } else if (trans_b) {
        cm.noalias() += am * bm.transpose();
    } else {
        cm.noalias() += am * bm;
    }
}

} // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) dim_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    kernels::gemm_rows(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    Tensor result = new_tensor({m, n}, std::move(out));
    if (needs_tape({&a, &b})) {
        auto ai = a.impl(), bi = b.impl();
        record("matmul", result, {ai, bi}, [ai, bi, m, k, n](std::span<const double> g) {
            if (ai->requires_grad) {
                kernels::gemm(g.data(), bi->data.data(), grad_buffer(*ai).data(), m, n, k, false, true, true);
            }
            if (bi->requires_grad) {
                kernels::gemm(ai->data.data(), g.data(), grad_buffer(*bi).data(), k, m, n, true, false, true);
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    check_rank2("transpose", a);
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    auto src = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
    Tensor result = new_tensor({c, r}, std::move(out));
    if (needs_tape({&a})) {
        auto ai = a.impl();
        record("transpose", result, {ai}, [ai, r, c](std::span<const double> g) {
            auto& ga = grad_buffer(*ai);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        });
    }
    return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != a.numel()) dim_error("reshape", a.shape(), shape);
    Tensor result = new_tensor(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
    if (needs_tape({&a})) {
        auto ai = a.impl();
        record("reshape", result, {ai}, [ai](std::span<const double> g) {
            auto& ga = grad_buffer(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM

namespace {

struct ConvGeometry {
    std::size_t cin, h, w, cout, k, ho, wo;
    int stride, pad;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = long(oy) * g.stride - g.pad + long(ki);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= long(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.h + std::size_t(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = long(ox) * g.stride - g.pad + long(kj);
                        dst[ox] = (ix < 0 || ix >= long(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = long(oy) * g.stride - g.pad + long(ki);
                    if (iy < 0 || iy >= long(g.h)) continue;
                    double* dst = dx + (c * g.h + std::size_t(iy)) * g.w;
                    const double* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = long(ox) * g.stride - g.pad + long(kj);
                        if (ix >= 0 && ix < long(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
        dim_error("conv2d", x.shape(), w.shape());
    }
    if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
    ConvGeometry g{};
    g.cin = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.cout = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    g.pad = pad;
    if (g.k % 2 == 0) throw DimensionError("conv2d: kernel extent must be odd, got " + shape_str(w.shape()));
    const long hs = long(g.h) + 2 * pad - long(g.k);
    const long ws = long(g.w) + 2 * pad - long(g.k);
    if (hs < 0 || ws < 0) {
        throw DimensionError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                             " and kernel " + shape_str(w.shape()));
    }
    g.ho = std::size_t(hs / stride + 1);
    g.wo = std::size_t(ws / stride + 1);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) dim_error("conv2d bias", w.shape(), bias->shape());

    const std::size_t ckk = g.cin * g.k * g.k;
    const std::size_t plane = g.ho * g.wo;
    auto cols = std::make_shared<std::vector<double>>(ckk * plane);
    im2col(x.data().data(), g, cols->data());
    std::vector<double> out(g.cout * plane);
    kernels::gemm(w.data().data(), cols->data(), out.data(), g.cout, ckk, plane, false, false, false);
    if (bias) {
        auto bd = bias->data();
        for (std::size_t c = 0; c < g.cout; ++c) {
            double* row = out.data() + c * plane;
            for (std::size_t p = 0; p < plane; ++p) row[p] += bd[c];
        }
    }
    Tensor result = new_tensor({g.cout, g.ho, g.wo}, std::move(out));
    const Tensor none;
    if (needs_tape({&x, &w, bias ? bias : &none})) {
        auto xi = x.impl(), wi = w.impl();
        auto bi = bias ? bias->impl() : nullptr;
        std::vector<std::shared_ptr<TensorImpl>> parents{xi, wi};
        if (bi) parents.push_back(bi);
        record("conv2d", result, std::move(parents), [xi, wi, bi, cols, g, ckk, plane](std::span<const double> gr) {
            if (wi->requires_grad) {
                kernels::gemm(gr.data(), cols->data(), grad_buffer(*wi).data(), g.cout, plane, ckk, false, true, true);
            }
            if (bi && bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                for (std::size_t c = 0; c < g.cout; ++c) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) s += gr[c * plane + p];
                    gb[c] += s;
                }
            }
            if (xi->requires_grad) {
                std::vector<double> dcols(ckk * plane);
                kernels::gemm(wi->data.data(), gr.data(), dcols.data(), ckk, g.cout, plane, true, false, false);
                col2im(dcols.data(), g, grad_buffer(*xi).data());
            }
        });
    }
    return result;
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    return conv2d_impl(x, w, nullptr, stride, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    return conv2d_impl(x, w, &bias, stride, pad);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double sigmoid_value(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor unary(Unary kind, const Tensor& x) {
    auto src = x.data();
    std::vector<double> out(src.size());
    switch (kind) {
    case Unary::sigmoid:
        for (std::size_t i = 0; i < src.size(); ++i) out[i] = sigmoid_value(src[i]);
        break;
    case Unary::relu:
        for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] > 0 ? src[i] : 0.0;
        break;
    case Unary::gelu:
        for (std::size_t i = 0; i < src.size(); ++i) out[i] = gelu_value(src[i]);
        break;
    }
    Tensor result = new_tensor(x.shape(), std::move(out));
    if (needs_tape({&x})) {
        auto xi = x.impl();
        std::weak_ptr<TensorImpl> yw = result.impl();
        static constexpr std::string_view names[] = {"sigmoid", "relu", "gelu"};
        record(names[int(kind)], result, {xi}, [xi, yw, kind](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            const auto& xs = xi->data;
            switch (kind) {
            case Unary::sigmoid: {
                auto y = yw.lock();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y->data[i] * (1.0 - y->data[i]);
                break;
            }
            case Unary::relu:
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xs[i] > 0 ? g[i] : 0.0;
                break;
            case Unary::gelu:
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_derivative(xs[i]);
                break;
            }
        });
    }
    return result;
}

Tensor sigmoid(const Tensor& x) { return unary(Unary::sigmoid, x); }
Tensor relu(const Tensor& x) { return unary(Unary::relu, x); }
Tensor gelu(const Tensor& x) { return unary(Unary::gelu, x); }

Tensor binary(Binary kind, const Tensor& a, const Tensor& b) {
    static constexpr std::string_view names[] = {"add", "sub", "mul"};
    Shape out_shape = broadcast_shape(names[int(kind)], a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = a.numel(), nb = b.numel();
    auto ad = a.data(), bd = b.data();
    std::vector<double> out(n);
    switch (kind) {
    case Binary::add:
        for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
        break;
    case Binary::sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
        break;
    case Binary::mul:
        for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
        break;
    }
    Tensor result = new_tensor(std::move(out_shape), std::move(out));
    if (needs_tape({&a, &b})) {
        auto ai = a.impl(), bi = b.impl();
        record(names[int(kind)], result, {ai, bi}, [ai, bi, kind, na, nb](std::span<const double> g) {
            const std::size_t n = g.size();
            if (ai->requires_grad) {
                auto& ga = grad_buffer(*ai);
                if (kind == Binary::mul) {
                    for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * bi->data[i % nb];
                } else {
                    for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
                }
            }
            if (bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                switch (kind) {
                case Binary::add:
                    for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
                    break;
                case Binary::sub:
                    for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
                    break;
                case Binary::mul:
                    for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * ai->data[i % na];
                    break;
                }
            }
        });
    }
    return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
    auto src = a.data();
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] * factor;
    Tensor result = new_tensor(a.shape(), std::move(out));
    if (needs_tape({&a})) {
        auto ai = a.impl();
        record("scale", result, {ai}, [ai, factor](std::span<const double> g) {
            auto& ga = grad_buffer(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return result;
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const int r = int(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    const std::size_t len = s[axis];
    auto src = x.data();
    std::vector<double> out(src.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = src[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, src[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(src[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    Tensor result = new_tensor(s, std::move(out));
    if (needs_tape({&x})) {
        auto xi = x.impl();
        std::weak_ptr<TensorImpl> yw = result.impl();
        record("softmax", result, {xi}, [xi, yw, outer, inner, len](std::span<const double> g) {
            auto y = yw.lock();
            auto& gx = grad_buffer(*xi);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y->data[base + j * inner];
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        gx[idx] += y->data[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
        dim_error("layer_norm", x.shape(), gamma.shape());
    }
    const std::size_t rows = x.numel() / d;
    auto src = x.data();
    auto gd = gamma.data(), bd = beta.data();
    std::vector<double> out(src.size());
    auto xhat = std::make_shared<std::vector<double>>(src.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = src.data() + r * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += row[j];
        m /= double(d);
        double v = 0.0;
        for (std::size_t j = 0; j < d; ++j) v += (row[j] - m) * (row[j] - m);
        v /= double(d);
        const double is = 1.0 / std::sqrt(v + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - m) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gd[j] + bd[j];
        }
    }
    Tensor result = new_tensor(x.shape(), std::move(out));
    if (needs_tape({&x, &gamma, &beta})) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
        record("layer_norm", result, {xi, gi, bi}, [xi, gi, bi, xhat, inv_std, rows, d](std::span<const double> g) {
            if (gi->requires_grad) {
                auto& gg = grad_buffer(*gi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
            }
            if (bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
            if (xi->requires_grad) {
                auto& gx = grad_buffer(*xi);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * gi->data[j];
                        mean_dh += dh;
                        mean_dh_h += dh * (*xhat)[r * d + j];
                    }
                    mean_dh /= double(d);
                    mean_dh_h /= double(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * gi->data[j];
                        gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return result;
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw DimensionError("bilinear_resize: expected [C x H x W], got " + shape_str(x.shape()));
    if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output extents must be >= 1");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) {
        // Identity resampling: plain copy keeps the result bit-identical.
        return reshape(x, x.shape());
    }
    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double sc = double(in) / double(out);
        for (std::size_t o = 0; o < out; ++o) {
            double src = (double(o) + 0.5) * sc - 0.5;
            if (src < 0) src = 0;
            std::size_t i0 = std::min(std::size_t(src), in - 1);
            std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, src - double(i0)};
        }
        return t;
    };
    auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
    auto src = x.data();
    std::vector<double> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = src.data() + ch * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = (*ty)[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& b = (*tx)[ox];
                const double top = plane[a.i0 * w + b.i0] * (1 - b.frac) + plane[a.i0 * w + b.i1] * b.frac;
                const double bot = plane[a.i1 * w + b.i0] * (1 - b.frac) + plane[a.i1 * w + b.i1] * b.frac;
                out[(ch * out_h + oy) * out_w + ox] = top * (1 - a.frac) + bot * a.frac;
            }
        }
    }
    Tensor result = new_tensor({c, out_h, out_w}, std::move(out));
    if (needs_tape({&x})) {
        auto xi = x.impl();
        record("bilinear_resize", result, {xi}, [xi, ty, tx, c, h, w, out_h, out_w](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double* plane = gx.data() + ch * h * w;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto& a = (*ty)[oy];
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto& b = (*tx)[ox];
                        const double v = g[(ch * out_h + oy) * out_w + ox];
                        plane[a.i0 * w + b.i0] += v * (1 - a.frac) * (1 - b.frac);
                        plane[a.i0 * w + b.i1] += v * (1 - a.frac) * b.frac;
                        plane[a.i1 * w + b.i0] += v * a.frac * (1 - b.frac);
                        plane[a.i1 * w + b.i1] += v * a.frac * b.frac;
                    }
                }
            }
        });
    }
    return result;
}

Tensor sum(const Tensor& x) {
    CompensatedSum s;
    for (double v : x.data()) s.add(v);
    Tensor result = Tensor::scalar(s.value());
    if (needs_tape({&x})) {
        auto xi = x.impl();
        record("sum", result, {xi}, [xi](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (auto& v : gx) v += g[0];
        });
    }
    return result;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / double(x.numel())); }

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (rows.empty()) throw DimensionError("index_rows: empty row list for " + shape_str(x.shape()));
    const std::size_t n0 = x.dim(0);
    const std::size_t stride = x.numel() / n0;
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * stride);
    auto src = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n0) throw DimensionError("index_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
        std::copy_n(src.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    Tensor result = new_tensor(std::move(out_shape), std::move(out));
    if (needs_tape({&x})) {
        auto xi = x.impl();
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        record("index_rows", result, {xi}, [xi, idx, stride](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < stride; ++j) gx[idx[i] * stride + j] += g[i * stride + j];
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > x.dim(0)) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") invalid for " + shape_str(x.shape()));
    }
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    return index_rows(x, idx);
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Shape out_shape = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), out_shape.begin() + 1)) {
            dim_error("concat_rows", parts[0].shape(), p.shape());
        }
        total += p.dim(0);
    }
    out_shape[0] = total;
    std::vector<double> out;
    out.reserve(shape_numel(out_shape));
    bool tape = false;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        tape = tape || needs_tape({&p});
    }
    Tensor result = new_tensor(std::move(out_shape), std::move(out));
    if (tape) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        record("concat_rows", result, impls, [impls](std::span<const double> g) {
            std::size_t off = 0;
            for (const auto& p : impls) {
                if (p->requires_grad) {
                    auto& gp = grad_buffer(*p);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                }
                off += p->data.size();
            }
        });
    }
    return result;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    check_rank2("slice_cols", x);
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (count == 0 || begin + count > c) {
        throw DimensionError("slice_cols: range invalid for " + shape_str(x.shape()));
    }
    std::vector<double> out(r * count);
    auto src = x.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(src.data() + i * c + begin, count, out.data() + i * count);
    Tensor result = new_tensor({r, count}, std::move(out));
    if (needs_tape({&x})) {
        auto xi = x.impl();
        record("slice_cols", result, {xi}, [xi, r, c, begin, count](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < count; ++j) gx[i * c + begin + j] += g[i * count + j];
        });
    }
    return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts[0].dim(0);
    std::size_t c = 0;
    bool tape = false;
    for (const auto& p : parts) {
        check_rank2("concat_cols", p);
        if (p.dim(0) != r) dim_error("concat_cols", parts[0].shape(), p.shape());
        c += p.dim(1);
        tape = tape || needs_tape({&p});
    }
    std::vector<double> out(r * c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.dim(1);
        auto src = p.data();
        for (std::size_t i = 0; i < r; ++i) std::copy_n(src.data() + i * pc, pc, out.data() + i * c + off);
        off += pc;
    }
    Tensor result = new_tensor({r, c}, std::move(out));
    if (tape) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        record("concat_cols", result, impls, [impls, r, c](std::span<const double> g) {
            std::size_t off = 0;
            for (const auto& p : impls) {
                const std::size_t pc = p->shape[1];
                if (p->requires_grad) {
                    auto& gp = grad_buffer(*p);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + off + j];
                }
                off += pc;
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Fused losses

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape()) dim_error("bce_with_logits", logits.shape(), target.shape());
    auto x = logits.data(), t = target.data();
    const double n = double(x.size());
    CompensatedSum total;
    for (std::size_t i = 0; i < x.size(); ++i) {
        total.add(std::max(x[i], 0.0) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i]))));
    }
    Tensor result = Tensor::scalar(total.value() / n);
    if (needs_tape({&logits})) {
        auto xi = logits.impl(), ti = target.impl();
        record("bce_with_logits", result, {xi}, [xi, ti, n](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += g[0] * (sigmoid_value(xi->data[i]) - ti->data[i]) / n;
            }
        });
    }
    return result;
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps) {
    if (logits.shape() != target.shape()) dim_error("dice_loss", logits.shape(), target.shape());
    const std::size_t rows = logits.rank() == 1 ? 1 : logits.dim(0);
    const std::size_t cols = logits.numel() / rows;
    auto x = logits.data(), t = target.data();
    auto probs = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> inter(rows), denom(rows);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        CompensatedSum it, sp, sg;
        for (std::size_t j = 0; j < cols; ++j) {
            const double p = sigmoid_value(x[r * cols + j]);
            (*probs)[r * cols + j] = p;
            it.add(p * t[r * cols + j]);
            sp.add(p);
            sg.add(t[r * cols + j]);
        }
        inter[r] = it.value();
        denom[r] = sp.value() + sg.value() + eps;
        total += 1.0 - (2.0 * inter[r] + eps) / denom[r];
    }
    Tensor result = Tensor::scalar(total / double(rows));
    if (needs_tape({&logits})) {
        auto xi = logits.impl(), ti = target.impl();
        record("dice_loss", result, {xi}, [xi, ti, probs, inter, denom, rows, cols, eps](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t r = 0; r < rows; ++r) {
                const double s = denom[r];
                const double numer = 2.0 * inter[r] + eps;
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t idx = r * cols + j;
                    const double p = (*probs)[idx];
                    const double dldp = -(2.0 * ti->data[idx] * s - numer) / (s * s);
                    gx[idx] += g[0] * dldp * p * (1.0 - p) / double(rows);
                }
            }
        });
    }
    return result;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                             std::span<const double> weights) {
    check_rank2("softmax_cross_entropy", logits);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n || weights.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels / " +
                             std::to_string(weights.size()) + " weights for logits " + shape_str(logits.shape()));
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c) throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        wsum += weights[i];
    }
    if (wsum <= 0.0) throw ContractError("softmax_cross_entropy: weights must have a positive sum");
    auto x = logits.data();
    auto probs = std::make_shared<std::vector<double>>(n * c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data() + i * c;
        double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
        total += weights[i] * (lse - row[labels[i]]);
    }
    Tensor result = Tensor::scalar(total / wsum);
    if (needs_tape({&logits})) {
        auto xi = logits.impl();
        std::vector<std::size_t> lab(labels.begin(), labels.end());
        std::vector<double> w(weights.begin(), weights.end());
        record("softmax_cross_entropy", result, {xi}, [xi, probs, lab, w, wsum, n, c](std::span<const double> g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < n; ++i) {
                const double f = g[0] * w[i] / wsum;
                for (std::size_t j = 0; j < c; ++j) {
                    gx[i * c + j] += f * ((*probs)[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return result;
}

} // namespace rmps
