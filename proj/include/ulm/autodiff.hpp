#pragma once

// Eager reverse-mode differentiation over dense double tensors.
//
// Every operation computes its value immediately and appends a node to the
// owning Graph. Node ids are assigned in creation order, so the tape order is
// already topological and backward() just walks it in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ulm/random.hpp"
#include "ulm/tensor.hpp"

namespace ulm::ad {

enum class OpKind {
  leaf,
  matmul,
  batch_matmul,
  add,
  mul,
  scale,
  relu,
  sigmoid,
  softmax_masked,
  dropout,
  concat,
  slice,
  reduce_mean_masked,
  reduce_sum,
  sum_last,
  transpose,
  broadcast,
  reshape,
  masked_bce,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::batch_matmul: return "batch_matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax_masked: return "softmax_masked";
    case OpKind::dropout: return "dropout";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reduce_mean_masked: return "reduce_mean_masked";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::sum_last: return "sum_last";
    case OpKind::transpose: return "transpose";
    case OpKind::broadcast: return "broadcast";
    case OpKind::reshape: return "reshape";
    case OpKind::masked_bce: return "masked_bce";
  }
  return "?";
}

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  inline const Tensor& value() const;
  Shape shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  struct Options {
    bool check_finite = false;
  };

  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  explicit Graph(Options opts) : opts_(opts) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor t) { return push(OpKind::leaf, {}, std::move(t), nullptr, false); }

  /// Leaf whose gradient is accumulated by backward().
  Var variable(Tensor t) { return push(OpKind::leaf, {}, std::move(t), nullptr, true); }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  OpKind op(Var v) const { return nodes_.at(v.id()).op; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool checked() const noexcept { return opts_.check_finite; }

  /// Gradient of the last backward() root w.r.t. v; zeros when unreachable.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
  }

  void backward(Var root) {
    if (root.graph_ != this) throw std::invalid_argument("backward: root belongs to another graph");
    const Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) {
      throw ShapeError("backward requires a scalar root, got shape " + to_string(r.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!r.requires_grad) return;
    grad_ref(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // Op-implementation interface.

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    if (opts_.check_finite) {
      for (std::size_t in : inputs) {
        if (!nodes_.at(in).value.all_finite()) {
          throw NonFiniteError("non-finite input to " + std::string(op_name(kind)));
        }
      }
    }
    bool rg = false;
    for (std::size_t in : inputs) rg = rg || nodes_.at(in).requires_grad;
    return push(kind, std::move(inputs), std::move(value), rg ? std::move(fn) : nullptr, rg);
  }

  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

  /// Mutable gradient buffer, zero-initialized on first touch.
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

 private:
  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn, bool rg) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor(), false, rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  Options opts_{};
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }

namespace detail {

inline void same_graph(Var a, Var b, std::string_view op) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands from different graphs");
  }
}

[[noreturn]] inline void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

/// Numpy-style broadcast of two shapes (left-padded to equal rank).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;  // in out-index space; 0 on broadcast axes
  std::vector<std::size_t> b_strides;
  bool trivial = false;                // identical shapes
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  BroadcastPlan p;
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      p.out[i] = pa[i];
    } else if (pa[i] == 1) {
      p.out[i] = pb[i];
    } else {
      shape_fail(op, a, b);
    }
  }
  const auto sa = row_major_strides(pa);
  const auto sb = row_major_strides(pb);
  p.a_strides.resize(r);
  p.b_strides.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.a_strides[i] = pa[i] == 1 ? 0 : sa[i];
    p.b_strides[i] = pb[i] == 1 ? 0 : sb[i];
  }
  p.trivial = (a == b);
  return p;
}

/// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (p.trivial) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1], sa = p.a_strides[r - 1], sb = p.b_strides[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; i += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * sa, ib + j * sb);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < p.out[ax]) {
        ia += p.a_strides[ax];
        ib += p.b_strides[ax];
        break;
      }
      ia -= p.a_strides[ax] * (p.out[ax] - 1);
      ib -= p.b_strides[ax] * (p.out[ax] - 1);
      idx[ax] = 0;
    }
  }
}

inline void require_binary_mask(const Tensor& mask, std::string_view op) {
  for (double m : mask.data()) {
    if (m != 0.0 && m != 1.0) throw std::invalid_argument(std::string(op) + ": mask entries must be 0 or 1");
  }
}

/// Expands `mask` (each axis equal to or 1) to `shape`.
inline Tensor expand_mask(const Tensor& mask, const Shape& shape, std::string_view op) {
  if (mask.rank() != shape.size()) shape_fail(op, shape, mask.shape());
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (mask.dim(i) != shape[i] && mask.dim(i) != 1) shape_fail(op, shape, mask.shape());
  }
  if (mask.shape() == shape) return mask;
  Tensor out(shape);
  const BroadcastPlan p = plan_broadcast(shape, mask.shape(), op);
  for_each_broadcast(p, [&](std::size_t i, std::size_t, std::size_t ib) { out[i] = mask[ib]; });
  return out;
}

}  // namespace detail

/// a[..., K] x b[K, N] -> [..., N]; leading axes of `a` are folded into rows.
inline Var matmul(Var a, Var b) {
  detail::same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() != 2 || av.shape().back() != bv.dim(0)) {
    detail::shape_fail("matmul", av.shape(), bv.shape());
  }
  const std::size_t k = bv.dim(0), n = bv.dim(1), m = av.size() / k;
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  detail::gemm_nn(m, n, k, av.data().data(), bv.data().data(), out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib, m, n, k](Graph& g, std::size_t self) {
    const double* dc = g.grad_of(self).data().data();
    if (g.requires_grad(ia)) {
      detail::gemm_nt(m, k, n, dc, g.value_of(ib).data().data(), g.grad_ref(ia).data().data());
    }
    if (g.requires_grad(ib)) {
      detail::gemm_tn(k, n, m, g.value_of(ia).data().data(), dc, g.grad_ref(ib).data().data());
    }
  });
}

/// Batched product over identical leading axes:
/// a[..., M, K] x b[..., K, N] (or b[..., N, K] with transpose_b) -> [..., M, N].
inline Var batch_matmul(Var a, Var b, bool transpose_b = false) {
  detail::same_graph(a, b, "batch_matmul");
  const Shape& as = a.value().shape();
  const Shape& bs = b.value().shape();
  const std::size_t r = as.size();
  if (r < 3 || bs.size() != r || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    detail::shape_fail("batch_matmul", as, bs);
  }
  const std::size_t m = as[r - 2], k = as[r - 1];
  const std::size_t n = transpose_b ? bs[r - 2] : bs[r - 1];
  if ((transpose_b ? bs[r - 1] : bs[r - 2]) != k) detail::shape_fail("batch_matmul", as, bs);
  const std::size_t groups = a.value().size() / (m * k);
  Shape out_shape = as;
  out_shape[r - 1] = n;
  Tensor out(out_shape);
  {
    const double* ap = a.value().data().data();
    const double* bp = b.value().data().data();
    double* cp = out.data().data();
    for (std::size_t g = 0; g < groups; ++g) {
      if (transpose_b) {
        detail::gemm_nt(m, n, k, ap + g * m * k, bp + g * n * k, cp + g * m * n);
      } else {
        detail::gemm_nn(m, n, k, ap + g * m * k, bp + g * k * n, cp + g * m * n);
      }
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      OpKind::batch_matmul, {ia, ib}, std::move(out),
      [ia, ib, m, n, k, groups, transpose_b](Graph& g, std::size_t self) {
        const double* dc = g.grad_of(self).data().data();
        const double* ap = g.value_of(ia).data().data();
        const double* bp = g.value_of(ib).data().data();
        if (g.requires_grad(ia)) {
          double* da = g.grad_ref(ia).data().data();
          for (std::size_t q = 0; q < groups; ++q) {
            if (transpose_b) {
              detail::gemm_nn(m, k, n, dc + q * m * n, bp + q * n * k, da + q * m * k);
            } else {
              detail::gemm_nt(m, k, n, dc + q * m * n, bp + q * k * n, da + q * m * k);
            }
          }
        }
        if (g.requires_grad(ib)) {
          double* db = g.grad_ref(ib).data().data();
          for (std::size_t q = 0; q < groups; ++q) {
            if (transpose_b) {
              detail::gemm_tn(n, k, m, dc + q * m * n, ap + q * m * k, db + q * n * k);
            } else {
              detail::gemm_tn(k, n, m, ap + q * m * k, dc + q * m * n, db + q * k * n);
            }
          }
        }
      });
}

inline Var add(Var a, Var b) {
  detail::same_graph(a, b, "add");
  const auto plan = detail::plan_broadcast(a.value().shape(), b.value().shape(), "add");
  Tensor out(plan.out);
  {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] + bv[y]; });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(OpKind::add, {ia, ib}, std::move(out), [ia, ib, plan](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_ref(ia);
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t x, std::size_t) { ga[x] += d[i]; });
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_ref(ib);
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t y) { gb[y] += d[i]; });
    }
  });
}

/// Elementwise product with broadcasting.
inline Var mul(Var a, Var b) {
  detail::same_graph(a, b, "mul");
  const auto plan = detail::plan_broadcast(a.value().shape(), b.value().shape(), "mul");
  Tensor out(plan.out);
  {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] * bv[y]; });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib, plan](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    const Tensor& av = g.value_of(ia);
    const Tensor& bv = g.value_of(ib);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_ref(ia);
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t x, std::size_t y) { ga[x] += d[i] * bv[y]; });
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_ref(ib);
      detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t x, std::size_t y) { gb[y] += d[i] * av[x]; });
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return a.graph().record(OpKind::scale, {ia}, std::move(out), [ia, s](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    Tensor& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += s * d[i];
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.graph().record(OpKind::relu, {ia}, std::move(out), [ia](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    const Tensor& x = g.value_of(ia);
    Tensor& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (x[i] > 0.0) ga[i] += d[i];
    }
  });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = sigmoid(v);
  const std::size_t ia = a.id();
  return a.graph().record(OpKind::sigmoid, {ia}, std::move(out), [ia](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

/// Softmax along the last axis restricted to positions where mask == 1.
/// Masked positions get weight exactly 0; fully masked rows are all zero.
/// `mask` has the rank of `x` with each axis equal or 1.
inline Var softmax_masked(Var x, const Tensor& mask) {
  const Tensor& xv = x.value();
  detail::require_binary_mask(mask, "softmax_masked");
  Tensor m = detail::expand_mask(mask, xv.shape(), "softmax_masked");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * n;
    const double* mr = m.data().data() + r * n;
    double* yr = out.data().data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mr[j] != 0.0) mx = std::max(mx, xr[j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mr[j] != 0.0) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::softmax_masked, {ix}, std::move(out), [ix, n, rows](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor& gx = g.grad_ref(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[o + j] * d[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += y[o + j] * (d[o + j] - dot);
    }
  });
}

/// Inverted dropout: keeps each element with probability 1 - rate and scales
/// survivors by 1 / (1 - rate). Identity when not training or rate == 0.
inline Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor keep(x.value().shape());
  for (double& k : keep.data()) k = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::dropout, {ix}, std::move(out),
                          [ix, keep = std::move(keep)](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& gx = g.grad_ref(ix);
                            for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * keep[i];
                          });
}

inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].value().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_graph(parts[0], p, "concat");
    const Shape& s = p.value().shape();
    if (s.size() != first.size()) detail::shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) detail::shape_fail("concat", first, s);
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.value().dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data().data() + o * w, w, out.data().data() + o * out_row + off);
    }
    off += w;
  }
  return parts[0].graph().record(
      OpKind::concat, ids, std::move(out), [ids, offsets, outer, inner, out_row](Graph& g, std::size_t self) {
        const Tensor& d = g.grad_of(self);
        for (std::size_t q = 0; q < ids.size(); ++q) {
          if (!g.requires_grad(ids[q])) continue;
          Tensor& gp = g.grad_ref(ids[q]);
          const std::size_t w = gp.size() / outer;
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < w; ++j) gp[o * w + j] += d[o * out_row + offsets[q] + j];
          }
        }
        (void)inner;
      });
}

/// Elements [begin, end) along `axis`.
inline Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.value().shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_row = s[axis] * inner, w = (end - begin) * inner, start = begin * inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().data().data() + o * in_row + start, w, out.data().data() + o * w);
  }
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::slice, {ix}, std::move(out), [ix, outer, in_row, w, start](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    Tensor& gx = g.grad_ref(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < w; ++j) gx[o * in_row + start + j] += d[o * w + j];
    }
  });
}

/// Mean of x over positions where mask == 1 (mask has x's shape); 0 if none.
inline Var reduce_mean_masked(Var x, const Tensor& mask) {
  if (mask.shape() != x.value().shape()) detail::shape_fail("reduce_mean_masked", x.value().shape(), mask.shape());
  detail::require_binary_mask(mask, "reduce_mean_masked");
  double count = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) {
      count += 1.0;
      sum += x.value()[i];
    }
  }
  const double mean = count > 0.0 ? sum / count : 0.0;
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::reduce_mean_masked, {ix}, Tensor::scalar(mean),
                          [ix, mask, count](Graph& g, std::size_t self) {
                            if (count == 0.0) return;
                            const double d = g.grad_of(self)[0] / count;
                            Tensor& gx = g.grad_ref(ix);
                            for (std::size_t i = 0; i < mask.size(); ++i) {
                              if (mask[i] != 0.0) gx[i] += d;
                            }
                          });
}

inline Var reduce_sum(Var x) {
  double sum = 0.0;
  for (double v : x.value().data()) sum += v;
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::reduce_sum, {ix}, Tensor::scalar(sum), [ix](Graph& g, std::size_t self) {
    const double d = g.grad_of(self)[0];
    for (double& v : g.grad_ref(ix).data()) v += d;
  });
}

/// Sums the last axis away: [..., n] -> [...] ([n] -> [1]).
inline Var sum_last(Var x) {
  const Shape& s = x.value().shape();
  const std::size_t n = s.back();
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  const std::size_t rows = x.value().size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x.value()[r * n + j];
    out[r] = acc;
  }
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::sum_last, {ix}, std::move(out), [ix, n, rows](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    Tensor& gx = g.grad_ref(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += d[r];
    }
  });
}

/// Axis permutation: output axis i is input axis perm[i].
inline Var transpose(Var x, std::vector<std::size_t> perm) {
  const Shape& s = x.value().shape();
  const std::size_t r = s.size();
  {
    std::vector<bool> seen(r, false);
    if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch for " + to_string(s));
    for (std::size_t p : perm) {
      if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation for " + to_string(s));
      seen[p] = true;
    }
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  const auto in_strides = detail::row_major_strides(s);
  // source offset for each output element
  std::vector<std::size_t> src(numel(s));
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = off;
      for (std::size_t ax = r; ax-- > 0;) {
        if (++idx[ax] < out_shape[ax]) {
          off += in_strides[perm[ax]];
          break;
        }
        off -= in_strides[perm[ax]] * (out_shape[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x.value()[src[i]];
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::transpose, {ix}, std::move(out),
                          [ix, src = std::move(src)](Graph& g, std::size_t self) {
                            const Tensor& d = g.grad_of(self);
                            Tensor& gx = g.grad_ref(ix);
                            for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += d[i];
                          });
}

/// Expands axes of size 1 to `shape` (same rank).
/// Expands `x` to `shape`; missing leading axes are added as in numpy.
inline Var broadcast(Var x, const Shape& shape) {
  const Shape& s = x.value().shape();
  if (s.size() > shape.size()) detail::shape_fail("broadcast", s, shape);
  const std::size_t lead = shape.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != shape[lead + i] && s[i] != 1) detail::shape_fail("broadcast", s, shape);
  }
  const auto plan = detail::plan_broadcast(shape, s, "broadcast");
  Tensor out(shape);
  detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t y) { out[i] = x.value()[y]; });
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::broadcast, {ix}, std::move(out), [ix, plan](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    Tensor& gx = g.grad_ref(ix);
    detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t y) { gx[y] += d[i]; });
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.graph().record(OpKind::reshape, {ix}, std::move(out), [ix](Graph& g, std::size_t self) {
    const Tensor& d = g.grad_of(self);
    Tensor& gx = g.grad_ref(ix);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
  });
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over cells where mask == 1. Probabilities are
/// clamped to [1e-7, 1 - 1e-7]; clamped cells pass no gradient.
inline Var masked_bce(Var p, const Tensor& target, const Tensor& mask) {
  const Tensor& pv = p.value();
  if (target.shape() != pv.shape()) detail::shape_fail("masked_bce", pv.shape(), target.shape());
  if (mask.shape() != pv.shape()) detail::shape_fail("masked_bce", pv.shape(), mask.shape());
  detail::require_binary_mask(mask, "masked_bce");
  constexpr double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  double count = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double q = std::clamp(pv[i], lo, hi);
    const double y = target[i];
    sum += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
    count += 1.0;
  }
  const double loss = count > 0.0 ? sum / count : 0.0;
  const std::size_t ip = p.id();
  return p.graph().record(OpKind::masked_bce, {ip}, Tensor::scalar(loss),
                          [ip, target, mask, count](Graph& g, std::size_t self) {
                            if (count == 0.0) return;
                            const double d = g.grad_of(self)[0] / count;
                            const Tensor& pv = g.value_of(ip);
                            Tensor& gp = g.grad_ref(ip);
                            for (std::size_t i = 0; i < pv.size(); ++i) {
                              if (mask[i] == 0.0) continue;
                              const double q = pv[i];
                              if (q < lo || q > hi) continue;
                              const double y = target[i];
                              gp[i] += d * (-y / q + (1.0 - y) / (1.0 - q));
                            }
                          });
}

}  // namespace ulm::ad
