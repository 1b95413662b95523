#pragma once

// Define-by-run reverse-mode automatic differentiation over dense double
// arrays. Every op eagerly computes its value; when gradients are enabled and
// some input requires a gradient, the op also records a backward rule.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "moca/tensor.hpp"

namespace moca::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node &)>;

struct Node {
  Tensor value;
  std::vector<double> grad; // empty until something flows into it
  std::vector<NodePtr> parents;
  BackwardFn backward;
  bool requires_grad = false;
  std::uint64_t id = 0;

  /// Gradient buffer, zero-initialized on first access.
  std::vector<double> &grad_buffer();
};

class Var {
public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor &value() const { return node_->value; }
  const Shape &shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value.data; }
  double operator[](std::size_t i) const { return node_->value.data[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  /// ∂loss/∂this after backward(); zeros if nothing reached this node.
  std::vector<double> grad() const;

  Node *node() const { return node_.get(); }
  const NodePtr &ptr() const { return node_; }

private:
  NodePtr node_;
};

// ---- graph construction -------------------------------------------------

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

Var constant(Tensor value);
Var constant(double v);
/// Leaf that accumulates a gradient.
Var parameter(Tensor value);

/// Builds a result node. The backward rule is dropped (and parents released)
/// when recording is off or no parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Seeds ∂loss/∂loss = 1 and propagates in reverse creation order. The graph
/// below `loss` is consumed: intermediate nodes drop their backward rules.
void backward(const Var &loss);

// ---- ops ------------------------------------------------------------------
// Binary elementwise ops broadcast when one operand's shape is a suffix of the
// other's (a scalar broadcasts against anything).

Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var div(const Var &a, const Var &b);

Var neg(const Var &x);
Var scale(const Var &x, double c);
Var add_scalar(const Var &x, double c);
Var exp(const Var &x);
Var log(const Var &x);
Var tanh(const Var &x);
Var relu(const Var &x);
Var softplus(const Var &x);
Var square(const Var &x);
Var reciprocal(const Var &x);
/// max(x, lo) elementwise; no gradient flows through clamped entries.
Var clamp_min(const Var &x, double lo);

/// 2-D matrix product.
Var matmul(const Var &a, const Var &b);
Var transpose(const Var &x);
Var outer(const Var &a, const Var &b);
Var dot(const Var &a, const Var &b);
/// n-vector to n × n diagonal matrix.
Var diag(const Var &v);

Var sum(const Var &x);
Var mean(const Var &x);
/// Log-sum-exp over every element, returns a scalar.
Var logsumexp(const Var &x);
/// Log-sum-exp over the last axis.
Var logsumexp_last(const Var &x);

Var reshape(const Var &x, Shape shape);
/// Concatenates along axis 0; scalars count as length-1 vectors.
Var concat(const std::vector<Var> &parts);
/// Rows [begin, end) along axis 0.
Var slice(const Var &x, std::size_t begin, std::size_t end);
/// Row i along axis 0 (axis dropped).
Var row(const Var &x, std::size_t i);
/// Index j along the last axis (axis dropped).
Var take_last(const Var &x, std::size_t j);
/// Gathers rows along axis 0.
Var gather_rows(const Var &x, std::span<const std::size_t> rows);
/// Zeros of shape {n, v.shape...} with v placed at row i.
Var embed_row(const Var &v, std::size_t n, std::size_t i);

/// Σ_d log N(z_d; mean_d, var_d) for equal-shaped operands.
Var diag_gaussian_logpdf(const Var &z, const Var &mean, const Var &var);

inline Var operator+(const Var &a, const Var &b) { return add(a, b); }
inline Var operator-(const Var &a, const Var &b) { return sub(a, b); }
inline Var operator*(const Var &a, const Var &b) { return mul(a, b); }
inline Var operator/(const Var &a, const Var &b) { return div(a, b); }
inline Var operator-(const Var &a) { return neg(a); }

} // namespace moca::ad
