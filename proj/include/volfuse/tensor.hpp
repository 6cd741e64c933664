// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace volfuse {

using Shape = std::vector<std::size_t>;

/// Raised when an operation sees or produces NaN/Inf, or when its inputs
/// violate a shape contract.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward()
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(TensorNode&)> backward;

  std::vector<double>& ensure_grad();
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major float64 array participating in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Values produced
/// by operations are never mutated afterwards; only leaves (parameters) are
/// updated in place, by the optimizer, between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's storage; throws for operation outputs.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  bool has_grad() const;
  /// Gradient buffer; zeros when backward() never reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  /// Value copy detached from any graph.
  Tensor detach(bool requires_grad = false) const;

  const char* op_name() const;

  // Used by operation implementations.
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
void backward(const Tensor& loss);

/// While alive, operations on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operation vocabulary. Every function records a node when any input requires
// grad. Elementwise binary ops broadcast numpy-style over equal-rank shapes
// (each dimension equal or 1).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// (..., k) x (k, m) -> (..., m); leading dims of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
/// (B, n, k) x (B, k, m) -> (B, n, m)
Tensor bmm(const Tensor& a, const Tensor& b);
/// Affine map over the last axis: x * w + bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

/// Sum of all elements; rank-0 result.
Tensor sum(const Tensor& a);
/// Sum of all elements divided by the element count.
Tensor mean(const Tensor& a);
/// Sum over one axis, which is removed from the result.
Tensor sum_axis(const Tensor& a, std::size_t axis);
/// Minimum over one axis (removed); the gradient flows to the first argmin.
Tensor min_axis(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& logits, std::size_t axis);
/// Normalizes over the last axis, then applies gamma/beta (shape (C,)).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& x);

/// Rows of `a` (axis 0) at `index`.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// Zero tensor with `rows` rows; row i of `a` is added into row index[i].
Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t rows);

/// Grouped bilinear sampling with zero padding.
///
/// grid: (G*d, H, W); loc: (N, G, 2) holding (x along W, y along H) in cell
/// units, nodes at integer positions. Group g reads channels [g*d, (g+1)*d).
/// Returns (N, G, d).
Tensor sample_bilinear_2d(const Tensor& grid, const Tensor& loc);
/// Single-location form: grid (C, H, W) at (u, v) -> (C,).
Tensor sample_bilinear_2d(const Tensor& grid, double u, double v);

/// Grouped trilinear sampling with zero padding.
///
/// volume: (G*d, H, W, Z); loc: (N, G, 3) holding (x along H, y along W,
/// z along Z) in cell units. Returns (N, G, d).
Tensor sample_trilinear_3d(const Tensor& volume, const Tensor& loc);
/// Single-location form: volume (C, H, W, Z) at (x, y, z) -> (C,).
Tensor sample_trilinear_3d(const Tensor& volume, double x, double y, double z);

namespace testing {
/// Corrupts the softmax backward pass (scales its gradient by 1.01). Used to
/// prove that the gradient checks detect a wrong derivative.
void set_softmax_backward_fault(bool enabled);
bool softmax_backward_fault();
}  // namespace testing

}  // namespace volfuse
