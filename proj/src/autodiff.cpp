#include "moca/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "moca/errors.hpp"

namespace moca::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

NodePtr new_node(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

bool is_suffix(const Shape &small, const Shape &big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Var &a, const Var &b, const char *op) {
  const Shape &sa = a.shape();
  const Shape &sb = b.shape();
  if (sa == sb) return sa;
  if (b.size() == 1 || is_suffix(sb, sa)) return sa;
  if (a.size() == 1 || is_suffix(sa, sb)) return sb;
  throw ContractViolation(std::string(op) + ": cannot broadcast " +
                          shape_str(sa) + " with " + shape_str(sb));
}

// Parent p's gradient buffer if it participates in the backward pass.
double *grad_ptr(Node &out, std::size_t p) {
  Node &parent = *out.parents[p];
  if (!parent.requires_grad) return nullptr;
  return parent.grad_buffer().data();
}

template <class Fwd, class DA, class DB>
Var binary(const Var &a, const Var &b, const char *name, Fwd fwd, DA da,
           DB db) {
  Shape shape = broadcast_shape(a, b, name);
  Tensor out(shape);
  const std::size_t n = out.size(), na = a.size(), nb = b.size();
  const double *x = a.value().data.data();
  const double *y = b.value().data.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i % na], y[i % nb]);
  return make_result(std::move(out), {a, b}, [=](Node &self) {
    const double *g = self.grad.data();
    const double *xv = self.parents[0]->value.data.data();
    const double *yv = self.parents[1]->value.data.data();
    if (double *ga = grad_ptr(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        ga[i % na] += g[i] * da(xv[i % na], yv[i % nb]);
    if (double *gb = grad_ptr(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        gb[i % nb] += g[i] * db(xv[i % na], yv[i % nb]);
  });
}

// Elementwise op whose derivative is expressed in terms of input and output.
template <class Fwd, class Deriv>
Var unary(const Var &x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
  return make_result(std::move(out), {x}, [=](Node &self) {
    double *gx = grad_ptr(self, 0);
    if (!gx) return;
    const double *xv = self.parents[0]->value.data.data();
    const double *yv = self.value.data.data();
    const double *g = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double lse(const double *x, std::size_t k) {
  double m = kNegInf;
  for (std::size_t i = 0; i < k; ++i) m = std::max(m, x[i]);
  if (m == kNegInf || std::isnan(m)) return m;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

// ∂lse/∂x_i = exp(x_i - lse).
void lse_backward(const double *x, std::size_t k, double out, double g,
                  double *gx) {
  if (!std::isfinite(out) || g == 0.0) return;
  for (std::size_t i = 0; i < k; ++i) gx[i] += g * std::exp(x[i] - out);
}

Shape as_rows(const Shape &s) { return s.empty() ? Shape{1} : s; }

} // namespace

std::vector<double> &Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

double Var::item() const {
  require(size() == 1, "item() on non-scalar of shape " + shape_str(shape()));
  return node_->value.data[0];
}

std::vector<double> Var::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return std::vector<double>(node_->value.size(), 0.0);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var constant(Tensor value) { return Var(new_node(std::move(value), false)); }
Var constant(double v) { return constant(Tensor::scalar(v)); }
Var parameter(Tensor value) { return Var(new_node(std::move(value), true)); }

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  bool needs = false;
  if (t_grad_enabled)
    for (const auto &p : parents) needs = needs || p.requires_grad();
  NodePtr node = new_node(std::move(value), needs);
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto &p : parents) node->parents.push_back(p.ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var &loss) {
  require(loss.size() == 1,
          "backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Parents are always created before children, so descending id order is a
  // valid reverse topological order.
  std::vector<NodePtr> order;
  std::unordered_set<Node *> seen;
  std::vector<NodePtr> stack{loss.ptr()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    NodePtr n = std::move(stack.back());
    stack.pop_back();
    for (auto &p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr &a, const NodePtr &b) { return a->id > b->id; });

  loss.node()->grad_buffer()[0] += 1.0;
  for (const NodePtr &n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (const NodePtr &n : order) {
    if (!n->parents.empty()) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
    }
  }
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var &a, const Var &b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(const Var &a, const Var &b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(const Var &a, const Var &b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(const Var &a, const Var &b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var neg(const Var &x) { return scale(x, -1.0); }

Var scale(const Var &x, double c) {
  return unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(const Var &x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var exp(const Var &x) {
  return unary(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Var log(const Var &x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Var tanh(const Var &x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var &x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var softplus(const Var &x) {
  return unary(
      x, stable_softplus, [](double v, double) { return sigmoid(v); });
}

Var square(const Var &x) {
  return unary(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Var reciprocal(const Var &x) {
  return unary(
      x, [](double v) { return 1.0 / v; },
      [](double, double y) { return -y * y; });
}

Var clamp_min(const Var &x, double lo) {
  return unary(
      x, [lo](double v) { return v < lo ? lo : v; },
      [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var &a, const Var &b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[0],
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  const double *A = a.value().data.data();
  const double *B = b.value().data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double *o = &out.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double *brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
    }
  }
  return make_result(std::move(out), {a, b}, [m, k, n](Node &self) {
    const double *G = self.grad.data();
    const double *A = self.parents[0]->value.data.data();
    const double *B = self.parents[1]->value.data.data();
    if (double *gA = grad_ptr(self, 0)) {
      // gA = G Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double *grow = G + i * n;
          const double *brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[i * k + p] += s;
        }
    }
    if (double *gB = grad_ptr(self, 1)) {
      // gB = Aᵀ G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double *grow = G + i * n;
          double *gbrow = gB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

Var transpose(const Var &x) {
  require(x.shape().size() == 2, "transpose: expected a matrix");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return make_result(std::move(out), {x}, [m, n](Node &self) {
    double *gx = grad_ptr(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[j * m + i];
  });
}

Var outer(const Var &a, const Var &b) {
  const std::size_t m = a.size(), n = b.size();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i] * b[j];
  return make_result(std::move(out), {a, b}, [m, n](Node &self) {
    const double *G = self.grad.data();
    const double *av = self.parents[0]->value.data.data();
    const double *bv = self.parents[1]->value.data.data();
    if (double *ga = grad_ptr(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i] += G[i * n + j] * bv[j];
    if (double *gb = grad_ptr(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j] * av[i];
  });
}

Var dot(const Var &a, const Var &b) {
  require(a.size() == b.size(), "dot: size mismatch");
  return sum(mul(a, b));
}

Var diag(const Var &v) {
  const std::size_t n = v.size();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = v[i];
  return make_result(std::move(out), {v}, [n](Node &self) {
    if (double *gv = grad_ptr(self, 0))
      for (std::size_t i = 0; i < n; ++i) gv[i] += self.grad[i * n + i];
  });
}

// ---- reductions -------------------------------------------------------------

Var sum(const Var &x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.size();
  return make_result(Tensor::scalar(s), {x}, [n](Node &self) {
    if (double *gx = grad_ptr(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Var mean(const Var &x) {
  require(x.size() > 0, "mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var logsumexp(const Var &x) {
  const std::size_t n = x.size();
  const double out = lse(x.value().data.data(), n);
  return make_result(Tensor::scalar(out), {x}, [n](Node &self) {
    if (double *gx = grad_ptr(self, 0))
      lse_backward(self.parents[0]->value.data.data(), n, self.value[0],
                   self.grad[0], gx);
  });
}

Var logsumexp_last(const Var &x) {
  require(!x.shape().empty(), "logsumexp_last: scalar input");
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t k = x.shape().back();
  Tensor out(shape);
  const std::size_t rows = out.size();
  for (std::size_t r = 0; r < rows; ++r)
    out[r] = lse(x.value().data.data() + r * k, k);
  return make_result(std::move(out), {x}, [rows, k](Node &self) {
    double *gx = grad_ptr(self, 0);
    if (!gx) return;
    const double *xv = self.parents[0]->value.data.data();
    for (std::size_t r = 0; r < rows; ++r)
      lse_backward(xv + r * k, k, self.value[r], self.grad[r], gx + r * k);
  });
}

// ---- shape manipulation -------------------------------------------------------

Var reshape(const Var &x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) +
                                        " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.value().data);
  const std::size_t n = x.size();
  return make_result(std::move(out), {x}, [n](Node &self) {
    if (double *gx = grad_ptr(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var> &parts) {
  require(!parts.empty(), "concat: no inputs");
  const Shape first = as_rows(parts[0].shape());
  Shape tail(first.begin() + 1, first.end());
  std::size_t rows = 0;
  for (const auto &p : parts) {
    const Shape s = as_rows(p.shape());
    require(Shape(s.begin() + 1, s.end()) == tail,
            "concat: trailing shape mismatch " + shape_str(s) + " vs " +
                shape_str(first));
    rows += s[0];
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto &p : parts) {
    offsets.push_back(offset);
    std::copy(p.data().begin(), p.data().end(), out.data.begin() + offset);
    offset += p.size();
  }
  return make_result(std::move(out), parts, [offsets](Node &self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      double *gp = grad_ptr(self, p);
      if (!gp) continue;
      const std::size_t n = self.parents[p]->value.size();
      const double *g = self.grad.data() + offsets[p];
      for (std::size_t i = 0; i < n; ++i) gp[i] += g[i];
    }
  });
}

Var slice(const Var &x, std::size_t begin, std::size_t end) {
  require(!x.shape().empty() && begin <= end && end <= x.shape()[0],
          "slice: range out of bounds for " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = end - begin;
  const std::size_t stride = x.size() / x.shape()[0];
  const std::size_t off = begin * stride;
  Tensor out(shape);
  std::copy(x.data().begin() + off, x.data().begin() + off + out.size(),
            out.data.begin());
  const std::size_t n = out.size();
  return make_result(std::move(out), {x}, [off, n](Node &self) {
    if (double *gx = grad_ptr(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[off + i] += self.grad[i];
  });
}

Var row(const Var &x, std::size_t i) {
  Var s = slice(x, i, i + 1);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return reshape(s, shape);
}

Var take_last(const Var &x, std::size_t j) {
  require(!x.shape().empty() && j < x.shape().back(),
          "take_last: index out of range for " + shape_str(x.shape()));
  const std::size_t k = x.shape().back();
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(shape);
  const std::size_t rows = out.size();
  for (std::size_t r = 0; r < rows; ++r) out[r] = x[r * k + j];
  return make_result(std::move(out), {x}, [rows, k, j](Node &self) {
    if (double *gx = grad_ptr(self, 0))
      for (std::size_t r = 0; r < rows; ++r) gx[r * k + j] += self.grad[r];
  });
}

Var gather_rows(const Var &x, std::span<const std::size_t> rows) {
  require(!x.shape().empty(), "gather_rows: scalar input");
  const std::size_t n = x.shape()[0];
  const std::size_t stride = x.size() / std::max<std::size_t>(n, 1);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < n, "gather_rows: index out of range");
    std::copy_n(x.data().begin() + idx[r] * stride, stride,
                out.data.begin() + r * stride);
  }
  return make_result(std::move(out), {x}, [idx, stride](Node &self) {
    double *gx = grad_ptr(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t i = 0; i < stride; ++i)
        gx[idx[r] * stride + i] += self.grad[r * stride + i];
  });
}

Var embed_row(const Var &v, std::size_t n, std::size_t i) {
  require(i < n, "embed_row: row index out of range");
  Shape shape{n};
  shape.insert(shape.end(), v.shape().begin(), v.shape().end());
  Tensor out(shape);
  const std::size_t stride = v.size();
  std::copy(v.data().begin(), v.data().end(), out.data.begin() + i * stride);
  return make_result(std::move(out), {v}, [i, stride](Node &self) {
    if (double *gv = grad_ptr(self, 0))
      for (std::size_t k = 0; k < stride; ++k)
        gv[k] += self.grad[i * stride + k];
  });
}

Var diag_gaussian_logpdf(const Var &z, const Var &mean, const Var &var) {
  require(z.shape() == mean.shape() && z.shape() == var.shape(),
          "diag_gaussian_logpdf: operand shapes differ");
  const std::size_t n = z.size();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = z[i] - mean[i];
    s += -0.5 * (log2pi + std::log(var[i]) + d * d / var[i]);
  }
  return make_result(Tensor::scalar(s), {z, mean, var}, [n](Node &self) {
    const double g = self.grad[0];
    const double *zv = self.parents[0]->value.data.data();
    const double *mv = self.parents[1]->value.data.data();
    const double *vv = self.parents[2]->value.data.data();
    double *gz = grad_ptr(self, 0);
    double *gm = grad_ptr(self, 1);
    double *gv = grad_ptr(self, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = zv[i] - mv[i];
      if (gz) gz[i] += -g * d / vv[i];
      if (gm) gm[i] += g * d / vv[i];
      if (gv) gv[i] += g * 0.5 * (d * d / (vv[i] * vv[i]) - 1.0 / vv[i]);
    }
  });
}

} // namespace moca::ad
