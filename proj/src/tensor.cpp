// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "volfuse/tensor.hpp"


#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace volfuse {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

namespace {

std::atomic<bool> g_softmax_fault{false};
thread_local bool t_grad_enabled = true;

[[noreturn]] void fail(const char* op, const std::string& what) {
  throw NumericError(std::string(op) + ": " + what);
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) fail(op, "undefined tensor argument");
}

void check_finite(const char* op, const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(op, std::string("non-finite ") + what);
  }
}

// Builds an output node. Inputs are retained only when a gradient can flow.
NodePtr make_node(const char* op, Shape shape, std::vector<double> data,
                  std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<TensorNode>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  check_finite(op, node->data, "output");
  for (const Tensor* in : inputs) {
    if (t_grad_enabled && in->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* in : inputs) node->inputs.push_back(in->node());
  }
  return node;
}

NodePtr make_node_list(const char* op, Shape shape, std::vector<double> data,
                       const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<TensorNode>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  check_finite(op, node->data, "output");
  for (const auto& in : inputs) {
    if (t_grad_enabled && in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->inputs.push_back(in.node());
  }
  return node;
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise binary operations.

enum class BinOp { kAdd, kSub, kMul };

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // zero on broadcast dims
  bool same = false;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  if (a.size() != b.size()) {
    fail(op, "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  p.out.resize(a.size());
  p.stride_a.resize(a.size());
  p.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      fail(op, "incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    }
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element in order.
template <typename Fn>
void for_each_broadcast(const Broadcast& p, Fn&& fn) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

Tensor binary(const char* op, BinOp kind, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  const Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
  const auto& da = a.node()->data;
  const auto& db = b.node()->data;
  std::vector<double> out(shape_numel(plan.out));
  switch (kind) {
    case BinOp::kAdd:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] + db[j]; });
      break;
    case BinOp::kSub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] - db[j]; });
      break;
    case BinOp::kMul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = da[i] * db[j]; });
      break;
  }
  auto node = make_node(op, plan.out, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [plan, kind](TensorNode& self) {
      auto& na = *self.inputs[0];
      auto& nb = *self.inputs[1];
      const auto& g = self.grad;
      if (na.requires_grad) {
        auto& ga = na.ensure_grad();
        if (kind == BinOp::kMul) {
          const auto& vb = nb.data;
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * vb[j]; });
        } else {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
        }
      }
      if (nb.requires_grad) {
        auto& gb = nb.ensure_grad();
        if (kind == BinOp::kMul) {
          const auto& va = na.data;
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * va[i]; });
        } else if (kind == BinOp::kSub) {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] -= g[o]; });
        } else {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += g[o]; });
        }
      }
    };
  }
  return Tensor(node);
}

// Unary elementwise op with derivative expressed through input and output.
template <typename F, typename D>
Tensor unary(const char* op, const Tensor& x, F&& f, D&& dfdx) {
  require_defined(op, x);
  const auto& in = x.node()->data;
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto node = make_node(op, x.shape(), std::move(out), {&x});
  if (node->requires_grad) {
    node->backward = [dfdx](TensorNode& self) {
      auto& nx = *self.inputs[0];
      auto& gx = nx.ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(nx.data[i], self.data[i]);
    };
  }
  return Tensor(node);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw NumericError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw NumericError("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                       " values");
  }
  check_finite("tensor", data, "value");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw NumericError("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw NumericError("tensor: axis " + std::to_string(axis) + " out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw NumericError("tensor: undefined");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw NumericError("tensor: undefined");
  if (!node_->is_leaf()) throw NumericError("tensor: only leaves may be mutated");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw NumericError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!node_) throw NumericError("tensor: undefined");
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& loss) {
  require_defined("backward", loss);
  if (loss.numel() != 1) {
    throw NumericError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; a grey node reached again means a cycle.
  enum : char { kWhite = 0, kGrey = 1, kBlack = 2 };
  std::unordered_map<TensorNode*, char> state;
  std::vector<TensorNode*> order;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  state[loss.node().get()] = kGrey;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next++].get();
      if (!child->requires_grad) continue;
      char& s = state[child];
      if (s == kGrey) throw NumericError("backward: cycle detected in compute graph");
      if (s == kWhite) {
        s = kGrey;
        stack.emplace_back(child, 0);
      }
    } else {
      state[node] = kBlack;
      order.push_back(node);
      stack.pop_back();
    }
  }

  TensorNode* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->is_leaf()) continue;
    if (!node->grad.empty()) node->backward(*node);
    // Intermediate gradients are not needed once propagated.
    std::vector<double>().swap(node->grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        // Logistic sigmoid in its overflow-free branches.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

// ---------------------------------------------------------------------------
// Matrix products
//
// Every output element is accumulated from zero over k in ascending order, on
// every code path. Library GEMV/GEMM kernels choose their summation order from
// buffer alignment, which made results differ in the last bit between runs.

namespace {

template <std::size_t R, std::size_t J>
void gemm_tile(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
               std::size_t k, bool accumulate) {
  double t[R][J] = {};
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* br = b + kk * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * lda + kk];
      for (std::size_t j = 0; j < J; ++j) t[r][j] += av * br[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < J; ++j) c[r * ldc + j] = accumulate ? c[r * ldc + j] + t[r][j] : t[r][j];
  }
}

template <std::size_t R>
void gemm_rows(const double* a, const double* b, double* c, std::size_t k, std::size_t m, bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= m; j += 32) gemm_tile<R, 32>(a, k, b + j, m, c + j, m, k, accumulate);
  for (; j + 8 <= m; j += 8) gemm_tile<R, 8>(a, k, b + j, m, c + j, m, k, accumulate);
  for (; j < m; ++j) gemm_tile<R, 1>(a, k, b + j, m, c + j, m, k, accumulate);
}

// c (n, m) = a (n, k) b (k, m), or c += a b. Row-major.
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) gemm_rows<4>(a + i * k, b, c + i * m, k, m, accumulate);
  for (; i < n; ++i) gemm_rows<1>(a + i * k, b, c + i * m, k, m, accumulate);
}

std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// Gradients of c = a b given dc: da += dc b^T, db += a^T dc.
void gemm_backward(const double* g, TensorNode& na, TensorNode& nb, std::size_t a_off,
                   std::size_t b_off, std::size_t n, std::size_t k, std::size_t m) {
  if (na.requires_grad) {
    const auto bt = transposed(nb.data.data() + b_off, k, m);
    gemm(g, bt.data(), na.ensure_grad().data() + a_off, n, m, k, true);
  }
  if (nb.requires_grad) {
    const auto at = transposed(na.data.data() + a_off, n, k);
    gemm(at.data(), g, nb.ensure_grad().data() + b_off, k, n, m, true);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() < 2 || b.rank() != 2) {
    fail("matmul", "expects rank>=2 x rank-2, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t k = a.shape().back();
  if (k != b.dim(0)) fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.numel() / k;
  const std::size_t m = b.dim(1);
  Shape out_shape = a.shape();
  out_shape.back() = m;
  std::vector<double> out(n * m);
  gemm(a.node()->data.data(), b.node()->data.data(), out.data(), n, k, m, false);
  auto node = make_node("matmul", std::move(out_shape), std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [n, k, m](TensorNode& self) {
      gemm_backward(self.grad.data(), *self.inputs[0], *self.inputs[1], 0, 0, n, k, m);
    };
  }
  return Tensor(node);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_defined("bmm", a);
  require_defined("bmm", b);
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    fail("bmm", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
  std::vector<double> out(batch * n * m);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(a.node()->data.data() + i * n * k, b.node()->data.data() + i * k * m, out.data() + i * n * m, n, k, m, false);
  }
  auto node = make_node("bmm", {batch, n, m}, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [batch, n, k, m](TensorNode& self) {
      for (std::size_t i = 0; i < batch; ++i) {
        gemm_backward(self.grad.data() + i * n * m, *self.inputs[0], *self.inputs[1], i * n * k,
                      i * k * m, n, k, m);
      }
    };
  }
  return Tensor(node);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined("linear", bias);
  if (bias.rank() != 1 || w.rank() != 2 || bias.dim(0) != w.dim(1)) {
    fail("linear", "bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Tensor y = matmul(x, w);
  Shape bshape(y.rank(), 1);
  bshape.back() = bias.dim(0);
  return add(y, reshape(bias, bshape));
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) {
    fail("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto node = make_node("reshape", std::move(shape), a.node()->data, {&a});
  if (node->requires_grad) {
    node->backward = [](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  require_defined("permute", a);
  const std::size_t rank = a.rank();
  if (perm.size() != rank) fail("permute", "permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) fail("permute", "invalid permutation");
    seen[p] = true;
  }
  const auto in_strides = strides_of(a.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = a.dim(perm[i]);
    src_stride[i] = in_strides[perm[i]];
  }
  // map[o] = source flat index of output element o
  const std::size_t n = a.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
      (*map)[o] = src;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const auto& in = a.node()->data;
  for (std::size_t o = 0; o < n; ++o) out[o] = in[(*map)[o]];
  auto node = make_node("permute", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [map](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < map->size(); ++o) g[(*map)[o]] += self.grad[o];
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("transpose", "expects rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail("concat", "no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) fail("concat", "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) fail("concat", "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) fail("concat", "shape mismatch " + shape_str(s) + " vs " + shape_str(first));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    const auto& src = p.node()->data;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src.begin() + o * ext * os.inner, ext * os.inner,
                  out.begin() + (o * os.extent + offset) * os.inner);
    }
    offset += ext;
  }
  auto node = make_node_list("concat", out_shape, std::move(out), parts);
  if (node->requires_grad) {
    node->backward = [os, offsets](TensorNode& self) {
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        auto& in = *self.inputs[i];
        if (!in.requires_grad) continue;
        auto& g = in.ensure_grad();
        const std::size_t ext = g.size() / (os.outer * os.inner);
        for (std::size_t o = 0; o < os.outer; ++o) {
          const double* src = self.grad.data() + (o * os.extent + offsets[i]) * os.inner;
          double* dst = g.data() + o * ext * os.inner;
          for (std::size_t j = 0; j < ext * os.inner; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return Tensor(node);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined("slice", a);
  if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) {
    fail("slice", "range [" + std::to_string(start) + ", +" + std::to_string(length) + ") invalid for " +
                      shape_str(a.shape()));
  }
  const AxisSplit is = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto& src = a.node()->data;
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src.begin() + (o * is.extent + start) * is.inner, length * is.inner,
                out.begin() + o * length * is.inner);
  }
  auto node = make_node("slice", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [is, start, length](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < is.outer; ++o) {
        const double* src = self.grad.data() + o * length * is.inner;
        double* dst = g.data() + (o * is.extent + start) * is.inner;
        for (std::size_t j = 0; j < length * is.inner; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double acc = 0.0;
  for (double v : a.node()->data) acc += v;
  auto node = make_node("sum", {}, {acc}, {&a});
  if (node->requires_grad) {
    node->backward = [](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  double acc = 0.0;
  for (double v : a.node()->data) acc += v;
  const double n = static_cast<double>(a.numel());
  auto node = make_node("mean", {}, {acc / n}, {&a});
  if (node->requires_grad) {
    node->backward = [n](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      const double share = self.grad[0] / n;
      for (auto& v : g) v += share;
    };
  }
  return Tensor(node);
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_defined("sum_axis", a);
  if (axis >= a.rank()) fail("sum_axis", "axis out of range");
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& src = a.node()->data;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += src[(o * s.extent + e) * s.inner + i];
  auto node = make_node("sum_axis", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [s](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
    };
  }
  return Tensor(node);
}

Tensor min_axis(const Tensor& a, std::size_t axis) {
  require_defined("min_axis", a);
  if (axis >= a.rank()) fail("min_axis", "axis out of range");
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner);
  auto argmin = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  const auto& src = a.node()->data;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t at = (o * s.extent + e) * s.inner + i;
        if (src[at] < src[best]) best = at;
      }
      out[o * s.inner + i] = src[best];
      (*argmin)[o * s.inner + i] = best;
    }
  }
  auto node = make_node("min_axis", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [argmin](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t j = 0; j < argmin->size(); ++j) g[(*argmin)[j]] += self.grad[j];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& logits, std::size_t axis) {
  require_defined("softmax", logits);
  if (axis >= logits.rank()) fail("softmax", "axis out of range");
  check_finite("softmax", logits.node()->data, "input");
  const AxisSplit s = split_at(logits.shape(), axis);
  const auto& x = logits.node()->data;
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = x[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - mx);
        y[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= z;
    }
  }
  auto node = make_node("softmax", logits.shape(), std::move(y), {&logits});
  if (node->requires_grad) {
    node->backward = [s](TensorNode& self) {
      auto& gx = self.inputs[0]->ensure_grad();
      const auto& y = self.data;
      const auto& gy = self.grad;
      const double fault = testing::softmax_backward_fault() ? 1.01 : 1.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          double dot = 0.0;
          for (std::size_t e = 0; e < s.extent; ++e) dot += gy[base + e * s.inner] * y[base + e * s.inner];
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t at = base + e * s.inner;
            gx[at] += fault * y[at] * (gy[at] - dot);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined("layer_norm", x);
  require_defined("layer_norm", gamma);
  require_defined("layer_norm", beta);
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) fail("layer_norm", "affine parameters do not match width");
  const std::size_t rows = x.numel() / c;
  const auto& in = x.node()->data;
  const auto& gm = gamma.node()->data;
  const auto& bt = beta.node()->data;
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gm[j] + bt[j];
    }
  }
  auto node = make_node("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta});
  if (node->requires_grad) {
    node->backward = [xhat, rstd, rows, c](TensorNode& self) {
      auto& nx = *self.inputs[0];
      auto& ng = *self.inputs[1];
      auto& nb = *self.inputs[2];
      const auto& g = self.grad;
      if (ng.requires_grad) {
        auto& gg = ng.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*xhat)[r * c + j];
      }
      if (nb.requires_grad) {
        auto& gb = nb.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
      }
      if (nx.requires_grad) {
        auto& gx = nx.ensure_grad();
        const auto& gm = ng.data;
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dh = g[r * c + j] * gm[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[r * c + j];
          }
          mean_dh *= inv_c;
          mean_dh_h *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            const double dh = g[r * c + j] * gm[j];
            gx[r * c + j] += (*rstd)[r] * (dh - mean_dh - (*xhat)[r * c + j] * mean_dh_h);
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Row gather/scatter

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_defined("gather_rows", a);
  if (a.rank() < 1 || index.empty()) fail("gather_rows", "needs rank>=1 input and a non-empty index");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.numel() / rows;
  Shape out_shape = a.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  const auto& src = a.node()->data;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) fail("gather_rows", "row " + std::to_string(index[i]) + " out of range");
    std::copy_n(src.begin() + index[i] * width, width, out.begin() + i * width);
  }
  auto node = make_node("gather_rows", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [idx = std::vector<std::size_t>(index.begin(), index.end()), width](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
    };
  }
  return Tensor(node);
}

Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t rows) {
  require_defined("scatter_rows", a);
  if (a.rank() < 1 || a.dim(0) != index.size()) fail("scatter_rows", "index length must equal row count");
  if (rows == 0) fail("scatter_rows", "zero destination rows");
  const std::size_t width = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = rows;
  std::vector<double> out(rows * width, 0.0);
  const auto& src = a.node()->data;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) fail("scatter_rows", "row " + std::to_string(index[i]) + " out of range");
    for (std::size_t j = 0; j < width; ++j) out[index[i] * width + j] += src[i * width + j];
  }
  auto node = make_node("scatter_rows", std::move(out_shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [idx = std::vector<std::size_t>(index.begin(), index.end()), width](TensorNode& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[i * width + j] += self.grad[idx[i] * width + j];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Interpolated sampling

namespace {

// Integer corner index along one axis, or a sentinel when the location is so
// far out that every corner is padding.
bool floor_index(double v, long long& out) {
  if (!(std::abs(v) < 1e15)) return false;
  out = static_cast<long long>(std::floor(v));
  return true;
}

}  // namespace

Tensor sample_bilinear_2d(const Tensor& grid, const Tensor& loc) {
  require_defined("sample_bilinear_2d", grid);
  require_defined("sample_bilinear_2d", loc);
  if (grid.rank() != 3 || loc.rank() != 3 || loc.dim(2) != 2 || grid.dim(0) % loc.dim(1) != 0) {
    fail("sample_bilinear_2d", "grid " + shape_str(grid.shape()) + " incompatible with locations " +
                                   shape_str(loc.shape()));
  }
  const std::size_t groups = loc.dim(1), n = loc.dim(0);
  const std::size_t d = grid.dim(0) / groups;
  const long long h = static_cast<long long>(grid.dim(1)), w = static_cast<long long>(grid.dim(2));
  const std::size_t plane = grid.dim(1) * grid.dim(2);
  const auto& gv = grid.node()->data;
  const auto& lv = loc.node()->data;
  std::vector<double> out(n * groups * d, 0.0);

  auto corners = [h, w](double x, double y, auto&& visit) {
    long long x0, y0;
    if (!floor_index(x, x0) || !floor_index(y, y0)) return;
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy};
    const double dwx[2] = {-1.0, 1.0};
    for (int cy = 0; cy < 2; ++cy) {
      const long long yi = y0 + cy;
      if (yi < 0 || yi >= h) continue;
      for (int cx = 0; cx < 2; ++cx) {
        const long long xi = x0 + cx;
        if (xi < 0 || xi >= w) continue;
        visit(static_cast<std::size_t>(yi * w + xi), wx[cx] * wy[cy], dwx[cx] * wy[cy], wx[cx] * dwx[cy]);
      }
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double x = lv[(i * groups + g) * 2], y = lv[(i * groups + g) * 2 + 1];
      double* o = out.data() + (i * groups + g) * d;
      corners(x, y, [&](std::size_t cell, double wgt, double, double) {
        for (std::size_t c = 0; c < d; ++c) o[c] += wgt * gv[(g * d + c) * plane + cell];
      });
    }
  }
  auto node = make_node("sample_bilinear_2d", {n, groups, d}, std::move(out), {&grid, &loc});
  if (node->requires_grad) {
    node->backward = [n, groups, d, plane, corners](TensorNode& self) {
      auto& ngrid = *self.inputs[0];
      auto& nloc = *self.inputs[1];
      const auto& gv = ngrid.data;
      const auto& lv = nloc.data;
      std::vector<double>* ggrid = ngrid.requires_grad ? &ngrid.ensure_grad() : nullptr;
      std::vector<double>* gloc = nloc.requires_grad ? &nloc.ensure_grad() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t at = (i * groups + g);
          const double* go = self.grad.data() + at * d;
          double dx = 0.0, dy = 0.0;
          corners(lv[at * 2], lv[at * 2 + 1], [&](std::size_t cell, double wgt, double dwdx, double dwdy) {
            for (std::size_t c = 0; c < d; ++c) {
              const std::size_t gi = (g * d + c) * plane + cell;
              if (ggrid) (*ggrid)[gi] += wgt * go[c];
              dx += dwdx * go[c] * gv[gi];
              dy += dwdy * go[c] * gv[gi];
            }
          });
          if (gloc) {
            (*gloc)[at * 2] += dx;
            (*gloc)[at * 2 + 1] += dy;
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor sample_bilinear_2d(const Tensor& grid, double u, double v) {
  if (grid.rank() != 3) fail("sample_bilinear_2d", "grid must be (C, H, W)");
  const Tensor loc = Tensor::from({1, 1, 2}, {u, v});
  return reshape(sample_bilinear_2d(grid, loc), {grid.dim(0)});
}

Tensor sample_trilinear_3d(const Tensor& volume, const Tensor& loc) {
  require_defined("sample_trilinear_3d", volume);
  require_defined("sample_trilinear_3d", loc);
  if (volume.rank() != 4 || loc.rank() != 3 || loc.dim(2) != 3 || volume.dim(0) % loc.dim(1) != 0) {
    fail("sample_trilinear_3d", "volume " + shape_str(volume.shape()) + " incompatible with locations " +
                                    shape_str(loc.shape()));
  }
  const std::size_t groups = loc.dim(1), n = loc.dim(0);
  const std::size_t d = volume.dim(0) / groups;
  const long long sh = static_cast<long long>(volume.dim(1)), sw = static_cast<long long>(volume.dim(2)),
                  sz = static_cast<long long>(volume.dim(3));
  const std::size_t cell_count = volume.dim(1) * volume.dim(2) * volume.dim(3);

  // visit(cell, weight, dweight/dx, dweight/dy, dweight/dz) over in-bounds corners.
  auto corners = [sh, sw, sz](const double* p, auto&& visit) {
    long long x0, y0, z0;
    if (!floor_index(p[0], x0) || !floor_index(p[1], y0) || !floor_index(p[2], z0)) return;
    const double fx = p[0] - static_cast<double>(x0), fy = p[1] - static_cast<double>(y0),
                 fz = p[2] - static_cast<double>(z0);
    const double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy}, wz[2] = {1.0 - fz, fz};
    const double dw[2] = {-1.0, 1.0};
    for (int cx = 0; cx < 2; ++cx) {
      const long long xi = x0 + cx;
      if (xi < 0 || xi >= sh) continue;
      for (int cy = 0; cy < 2; ++cy) {
        const long long yi = y0 + cy;
        if (yi < 0 || yi >= sw) continue;
        for (int cz = 0; cz < 2; ++cz) {
          const long long zi = z0 + cz;
          if (zi < 0 || zi >= sz) continue;
          visit(static_cast<std::size_t>((xi * sw + yi) * sz + zi), wx[cx] * wy[cy] * wz[cz],
                dw[cx] * wy[cy] * wz[cz], wx[cx] * dw[cy] * wz[cz], wx[cx] * wy[cy] * dw[cz]);
        }
      }
    }
  };

  const auto& vv = volume.node()->data;
  const auto& lv = loc.node()->data;
  std::vector<double> out(n * groups * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      double* o = out.data() + (i * groups + g) * d;
      corners(lv.data() + (i * groups + g) * 3, [&](std::size_t cell, double wgt, double, double, double) {
        for (std::size_t c = 0; c < d; ++c) o[c] += wgt * vv[(g * d + c) * cell_count + cell];
      });
    }
  }
  auto node = make_node("sample_trilinear_3d", {n, groups, d}, std::move(out), {&volume, &loc});
  if (node->requires_grad) {
    node->backward = [n, groups, d, cell_count, corners](TensorNode& self) {
      auto& nvol = *self.inputs[0];
      auto& nloc = *self.inputs[1];
      const auto& vv = nvol.data;
      const auto& lv = nloc.data;
      std::vector<double>* gvol = nvol.requires_grad ? &nvol.ensure_grad() : nullptr;
      std::vector<double>* gloc = nloc.requires_grad ? &nloc.ensure_grad() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t at = i * groups + g;
          const double* go = self.grad.data() + at * d;
          double dx = 0.0, dy = 0.0, dz = 0.0;
          corners(lv.data() + at * 3, [&](std::size_t cell, double wgt, double wdx, double wdy, double wdz) {
            for (std::size_t c = 0; c < d; ++c) {
              const std::size_t vi = (g * d + c) * cell_count + cell;
              if (gvol) (*gvol)[vi] += wgt * go[c];
              const double gval = go[c] * vv[vi];
              dx += wdx * gval;
              dy += wdy * gval;
              dz += wdz * gval;
            }
          });
          if (gloc) {
            (*gloc)[at * 3] += dx;
            (*gloc)[at * 3 + 1] += dy;
            (*gloc)[at * 3 + 2] += dz;
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor sample_trilinear_3d(const Tensor& volume, double x, double y, double z) {
  if (volume.rank() != 4) fail("sample_trilinear_3d", "volume must be (C, H, W, Z)");
  const Tensor loc = Tensor::from({1, 1, 3}, {x, y, z});
  return reshape(sample_trilinear_3d(volume, loc), {volume.dim(0)});
}

namespace testing {
void set_softmax_backward_fault(bool enabled) { g_softmax_fault = enabled; }
bool softmax_backward_fault() { return g_softmax_fault; }
}  // namespace testing

}  // namespace volfuse
