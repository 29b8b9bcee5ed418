#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rmps {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a gradient is accumulated
    bool requires_grad = false;
    std::optional<std::size_t> node;
};

/// Dense row-major array of doubles with optional participation in the
/// reverse-mode tape.
///
/// A Tensor is a handle: copies share the same storage and gradient buffer.
/// Operations never mutate their inputs, so tensors that are not parameters
/// behave as immutable values once created.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Writable access is intended for parameter updates and for filling
    // freshly constructed tensors; it bypasses the tape.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    std::optional<std::size_t> tape_id() const;

    /// Copy of the values with no tape history.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_tensor(std::shared_ptr<TensorImpl>);

    std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor(std::shared_ptr<TensorImpl> impl);

// ---------------------------------------------------------------------------
// Tape

struct TapeNode {
    std::string_view op_kind;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::shared_ptr<TensorImpl> output;
    // Receives the output gradient; accumulates into parents. Saved values
    // live in the closure.
    std::function<void(std::span<const double>)> backward;
};

/// Append-only record of one forward pass. One tape per thread.
class Tape {
  public:
    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t append(TapeNode node);
    void clear();
    void run_backward(std::size_t from);

  private:
    std::vector<TapeNode> nodes_;
};

Tape& active_tape();

bool grad_enabled();

/// Disables tape recording for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Accumulates d loss / d t into every reachable tensor that requires grad,
/// then clears the tape. Throws ContractError unless loss is a scalar on tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. All shape failures raise DimensionError naming the shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

enum class Unary { sigmoid, relu, gelu };
enum class Binary { add, sub, mul };

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor unary(Unary kind, const Tensor& x);
Tensor binary(Binary kind, const Tensor& a, const Tensor& b);

double gelu_value(double x);
double gelu_derivative(double x);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Rows along axis 0, in the given order (repeats allowed).
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
/// Column block of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

/// Mean binary cross-entropy with logits over all elements.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);
/// Mean over rows of 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps),
/// p = sigmoid(logits). Rank-1 inputs are one row.
Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps = 1.0);
/// Weighted mean softmax cross-entropy: sum_i w_i CE_i / sum_i w_i.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                             std::span<const double> weights);

namespace kernels {
/// Row-stable product: each output row's bits are independent of how many
/// rows share the call. Used by matmul's forward pass.
void gemm_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
/// Blocked (Eigen) product with optional transposes; used by convolution and
/// every backward rule.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate);
}

} // namespace rmps
