#pragma once

#include <functional>
#include <initializer_list>
#include <memory>

#include "jmt/common.hpp"

namespace jmt {

namespace detail {
struct TensorImpl;
}

// Dense float64 tensor with row-major flat storage and reverse-mode
// automatic differentiation. A Tensor is a cheap handle; copies share the
// underlying buffer and graph node.
//
// Gradients accumulate additively on leaf tensors created with
// requires_grad=true. Interior nodes use traversal-local buffers, so calling
// backward() twice on the same graph without zero_grad() exactly doubles
// every leaf gradient.
//
// Tensors and their graphs are not thread safe; one graph belongs to one
// thread. Independent graphs may live on different threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);
  static Tensor normal(Shape shape, double mean, double stddev, Rng& rng,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t numel() const;

  const std::vector<double>& data() const;
  std::vector<double>& data();

  double at(int64_t i) const;
  double at(int64_t i, int64_t j) const;
  double& at(int64_t i);
  double& at(int64_t i, int64_t j);

  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Value copy detached from any graph. requires_grad is off on the result.
  Tensor detach() const;

  // Runs reverse-mode differentiation from this scalar. Populates grad on
  // every reachable leaf with requires_grad set.
  void backward() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// While a NoGradGuard is alive on a thread, ops record no graph nodes.
// Used for frozen-backbone feature extraction and evaluation passes.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- elementwise / structural ops -----------------------------------------
// All ops validate shapes and throw ShapeError naming the offending shapes.
// Broadcasting is limited to scalar-vs-tensor; everything else requires
// matching shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t stop);

Tensor softmax(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_axis(const Tensor& a, int axis);
Tensor variance_axis(const Tensor& a, int axis);  // population (1/N)

// Row-wise bias add: x is [T x D], bias is [D].
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Inverted dropout: zeroes elements with probability rate and scales
// survivors by 1/(1-rate) so inference needs no rescaling. Identity when
// training is false. rate outside [0, 1) throws ConfigError.
Tensor dropout(const Tensor& a, double rate, bool training, Rng& rng);

// Patch extraction for 1D convolution: x is [L x C], result is
// [L_out x C*kernel] with L_out = floor((L-kernel)/stride)+1 and column
// c*kernel+j holding x[t*stride+j, c].
Tensor im2col1d(const Tensor& x, int64_t kernel, int64_t stride);

// Max pooling over [L x C] along the first axis; ties route the gradient to
// the earliest maximal position.
Tensor maxpool1d(const Tensor& x, int64_t kernel, int64_t stride);

// Fused per-row layer normalization over the last axis with affine output.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double epsilon);

// Mean softmax cross-entropy over rows of logits [N x C]; labels holds N
// class indices. Stable log-sum-exp formulation.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

// Compares the autodiff gradient of f at x against central finite
// differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps), coordinate by
// coordinate, and returns the maximum relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
//
// x must be a leaf with requires_grad. f must be deterministic. When
// max_coords > 0 only that many coordinates (seeded random subset) are
// probed, which keeps large parameter tensors affordable.
double check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                       double epsilon = 1e-4, int64_t max_coords = 0,
                       uint64_t coord_seed = 0);

}  // namespace jmt
