#pragma once

// Tape-based reverse-mode differentiation over Tensor values. A Graph owns
// every intermediate value created during one forward pass; `backward`
// walks the tape once in reverse and deposits gradients into the bound
// Parameters. Only the operations the sparse-coding autoencoder needs are
// provided.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dsrc/conv.hpp"
#include "dsrc/error.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc {

template <typename T>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename T = double>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T = double>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  /// threads > 1 enables the chunked parallel kernels (results may then
  /// differ from the single-threaded ones in the last bits).
  explicit Graph(int threads = 1) : threads_(threads) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int threads() const noexcept { return threads_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Constant input: never receives a gradient.
  Var<T> input(Tensor<T> value) { return record(std::move(value), false, nullptr); }

  /// Leaf bound to a Parameter; backward adds into param.grad.
  Var<T> param(Parameter<T>& p) {
    Var<T> v = record(p.value, true, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient w.r.t. an intermediate, available after backward (empty if none flowed).
  const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }

  /// Records a node produced by an operation. `fn` receives the output gradient.
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    if (consumed_) throw GraphError("graph already consumed by backward; run a new forward pass");
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, nullptr, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  /// Adds `g` into the gradient slot of `v` if it participates in differentiation.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(Var<T> loss) {
    if (consumed_) throw GraphError("backward called twice on the same graph (stale graph)");
    if (loss.graph != this) throw GraphError("loss does not belong to this graph");
    const Tensor<T>& lv = value(loss);
    if (lv.size() != 1) throw GraphError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
    consumed_ = true;
    visit_order_.clear();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor<T>(lv.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) {
        visit_order_.push_back(i);
        n.backward(*this, n.grad);
      }
      if (n.param) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }

  bool consumed() const noexcept { return consumed_; }

  /// Node ids whose backward rule ran, in the order they ran.
  const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    Parameter<T>* param;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  int threads_;
  bool consumed_ = false;
};

namespace ad {

namespace detail {
template <typename T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.graph != b.graph) throw GraphError(std::string(op) + ": operands recorded on different graphs");
  if (a.shape() != b.shape())
    throw InvalidShape(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), g.requires_grad(a) || g.requires_grad(b),
                  [a, b](Graph<T>& g, const Tensor<T>& dy) {
                    g.accumulate(a, dy);
                    g.accumulate(b, dy);
                  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), g.requires_grad(a) || g.requires_grad(b),
                  [a, b](Graph<T>& g, const Tensor<T>& dy) {
                    g.accumulate(a, dy);
                    if (g.requires_grad(b)) {
                      Tensor<T> neg = dy;
                      for (auto& v : neg.data()) v = -v;
                      g.accumulate(b, neg);
                    }
                  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), g.requires_grad(a), [a, s](Graph<T>& g, const Tensor<T>& dy) {
    Tensor<T> da = dy;
    for (auto& v : da.data()) v *= s;
    g.accumulate(a, da);
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  Graph<T>& g = *x.graph;
  return g.record(std::move(out), g.requires_grad(x), [x](Graph<T>& g, const Tensor<T>& dy) {
    const auto& xv = g.value(x);
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(xv[i] > T(0))) dx[i] = T(0);
    g.accumulate(x, dx);
  });
}

/// [p,q] x [q,r] -> [p,r]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw InvalidShape("matmul: cannot multiply " + shape_str(av.shape()) + " by " + shape_str(bv.shape()));
  using M = conv::RowMat<T>;
  const auto p = static_cast<Eigen::Index>(av.dim(0));
  const auto q = static_cast<Eigen::Index>(av.dim(1));
  const auto r = static_cast<Eigen::Index>(bv.dim(1));
  Tensor<T> out(Shape{av.dim(0), bv.dim(1)});
  Eigen::Map<M>(out.data().data(), p, r).noalias() =
      Eigen::Map<const M>(av.data().data(), p, q) * Eigen::Map<const M>(bv.data().data(), q, r);
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), g.requires_grad(a) || g.requires_grad(b),
                  [a, b, p, q, r](Graph<T>& g, const Tensor<T>& dy) {
                    Eigen::Map<const M> dym(dy.data().data(), p, r);
                    if (g.requires_grad(a)) {
                      Tensor<T> da(Shape{static_cast<std::size_t>(p), static_cast<std::size_t>(q)});
                      Eigen::Map<M>(da.data().data(), p, q).noalias() =
                          dym * Eigen::Map<const M>(g.value(b).data().data(), q, r).transpose();
                      g.accumulate(a, da);
                    }
                    if (g.requires_grad(b)) {
                      Tensor<T> db(Shape{static_cast<std::size_t>(q), static_cast<std::size_t>(r)});
                      Eigen::Map<M>(db.data().data(), q, r).noalias() =
                          Eigen::Map<const M>(g.value(a).data().data(), p, q).transpose() * dym;
                      g.accumulate(b, db);
                    }
                  });
}

/// Sum of squared entries.
template <typename T>
Var<T> frobenius_sq(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v * v;
  Graph<T>& g = *x.graph;
  return g.record(Tensor<T>::scalar(s), g.requires_grad(x), [x](Graph<T>& g, const Tensor<T>& dy) {
    const T up = dy[0];
    Tensor<T> dx = g.value(x);
    for (auto& v : dx.data()) v *= T(2) * up;
    g.accumulate(x, dx);
  });
}

/// Gradient-magnitude cap applied when p < 1.
inline constexpr double kDefaultLpClamp = 1e6;

/// sum_i |x_i|^p. The derivative at 0 is taken as 0; for p < 1 its
/// magnitude is capped at `clamp`.
template <typename T>
Var<T> lp_penalty(Var<T> x, double p, double clamp = kDefaultLpClamp) {
  if (!(p > 0.0) || !std::isfinite(p))
    throw InvalidHyperparameter("lp_penalty: p must be a positive finite number, got " + std::to_string(p));
  const T pp = static_cast<T>(p);
  T s = 0;
  for (T v : x.value().data()) {
    const T a = std::abs(v);
    if (a == T(0)) continue;
    s += p == 1.0 ? a : p == 2.0 ? a * a : std::pow(a, pp);
  }
  Graph<T>& g = *x.graph;
  return g.record(Tensor<T>::scalar(s), g.requires_grad(x), [x, p, pp, clamp](Graph<T>& g, const Tensor<T>& dy) {
    const T up = dy[0];
    Tensor<T> dx = g.value(x);
    for (auto& v : dx.data()) {
      if (v == T(0)) continue;
      const T sign = v > T(0) ? T(1) : T(-1);
      const T a = std::abs(v);
      T mag;
      if (p == 1.0)
        mag = T(1);
      else if (p == 2.0)
        mag = T(2) * a;
      else
        mag = pp * std::pow(a, pp - T(1));
      if (p < 1.0 && mag > static_cast<T>(clamp)) mag = static_cast<T>(clamp);
      v = up * sign * mag;
    }
    g.accumulate(x, dx);
  });
}

/// Cross-correlation, kernel [Cout, C, k, k].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride, std::size_t pad) {
  const auto geom = conv::conv_geometry(x.value(), kernel.value(), stride, pad);
  Graph<T>& g = *x.graph;
  auto cols = std::make_shared<std::vector<T>>();
  Tensor<T> y = conv::conv2d_forward(geom, x.value(), kernel.value(), *cols, g.threads());
  return g.record(std::move(y), g.requires_grad(x) || g.requires_grad(kernel),
                  [x, kernel, geom, cols](Graph<T>& g, const Tensor<T>& dy) {
                    const bool need_x = g.requires_grad(x);
                    const bool need_k = g.requires_grad(kernel);
                    Tensor<T> dx = need_x ? Tensor<T>(g.value(x).shape()) : Tensor<T>{};
                    Tensor<T> dk = need_k ? Tensor<T>(g.value(kernel).shape()) : Tensor<T>{};
                    conv::conv2d_backward(geom, g.value(kernel), *cols, dy, need_x ? &dx : nullptr,
                                          need_k ? &dk : nullptr, g.threads());
                    if (need_x) g.accumulate(x, dx);
                    if (need_k) g.accumulate(kernel, dk);
                  });
}

/// Adjoint of conv2d with the same [Cin, Cout, k, k] kernel, producing an
/// output of exactly target_h x target_w (extra rows/columns of output
/// padding are allowed up to stride - 1).
template <typename T>
Var<T> transposed_conv2d(Var<T> y, Var<T> kernel, std::size_t stride, std::size_t pad, std::size_t target_h,
                         std::size_t target_w) {
  const auto geom = conv::transposed_geometry(y.value(), kernel.value(), stride, pad, target_h, target_w);
  Graph<T>& g = *y.graph;
  auto ymat = std::make_shared<std::vector<T>>();
  Tensor<T> out = conv::transposed_forward(geom, y.value(), kernel.value(), *ymat, g.threads());
  return g.record(std::move(out), g.requires_grad(y) || g.requires_grad(kernel),
                  [y, kernel, geom, ymat](Graph<T>& g, const Tensor<T>& dout) {
                    const bool need_y = g.requires_grad(y);
                    const bool need_k = g.requires_grad(kernel);
                    Tensor<T> dy = need_y ? Tensor<T>(g.value(y).shape()) : Tensor<T>{};
                    Tensor<T> dk = need_k ? Tensor<T>(g.value(kernel).shape()) : Tensor<T>{};
                    conv::transposed_backward(geom, g.value(kernel), *ymat, dout, need_y ? &dy : nullptr,
                                              need_k ? &dk : nullptr, g.threads());
                    if (need_y) g.accumulate(y, dy);
                    if (need_k) g.accumulate(kernel, dk);
                  });
}

/// [N, ...] -> [F, N]: one flattened sample per column.
template <typename T>
Var<T> to_columns(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw InvalidShape("to_columns expects rank >= 2, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0);
  const std::size_t f = xv.size() / n;
  Tensor<T> out(Shape{f, n});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < f; ++i) out[i * n + s] = xv[s * f + i];
  Graph<T>& g = *x.graph;
  return g.record(std::move(out), g.requires_grad(x), [x, n, f](Graph<T>& g, const Tensor<T>& dy) {
    Tensor<T> dx(g.value(x).shape());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < f; ++i) dx[s * f + i] = dy[i * n + s];
    g.accumulate(x, dx);
  });
}

/// [F, N] -> [N, sample_shape...]; inverse of to_columns.
template <typename T>
Var<T> from_columns(Var<T> z, const Shape& sample_shape) {
  const auto& zv = z.value();
  if (zv.rank() != 2) throw InvalidShape("from_columns expects a matrix, got " + shape_str(zv.shape()));
  const std::size_t f = zv.dim(0);
  const std::size_t n = zv.dim(1);
  if (shape_numel(sample_shape) != f)
    throw InvalidShape("from_columns: column length " + std::to_string(f) + " does not match sample shape " +
                       shape_str(sample_shape));
  Shape full{n};
  full.insert(full.end(), sample_shape.begin(), sample_shape.end());
  Tensor<T> out(full);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < f; ++i) out[s * f + i] = zv[i * n + s];
  Graph<T>& g = *z.graph;
  return g.record(std::move(out), g.requires_grad(z), [z, n, f](Graph<T>& g, const Tensor<T>& dy) {
    Tensor<T> dz(g.value(z).shape());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < f; ++i) dz[i * n + s] = dy[s * f + i];
    g.accumulate(z, dz);
  });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Var<T> slice_cols(Var<T> z, std::size_t begin, std::size_t end) {
  const auto& zv = z.value();
  if (zv.rank() != 2 || begin >= end || end > zv.dim(1))
    throw InvalidShape("slice_cols: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") of " + shape_str(zv.shape()));
  const std::size_t rows = zv.dim(0), cols = zv.dim(1), w = end - begin;
  Tensor<T> out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(zv.data().data() + r * cols + begin, w, out.data().data() + r * w);
  Graph<T>& g = *z.graph;
  return g.record(std::move(out), g.requires_grad(z), [z, rows, cols, begin, w](Graph<T>& g, const Tensor<T>& dy) {
    Tensor<T> dz(Shape{rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(dy.data().data() + r * w, w, dz.data().data() + r * cols + begin);
    g.accumulate(z, dz);
  });
}

/// [a | b] along columns.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
    throw InvalidShape("concat_cols: incompatible " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t rows = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor<T> out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(bv.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  Graph<T>& g = *a.graph;
  return g.record(std::move(out), g.requires_grad(a) || g.requires_grad(b),
                  [a, b, rows, ca, cb](Graph<T>& g, const Tensor<T>& dy) {
                    if (g.requires_grad(a)) {
                      Tensor<T> da(Shape{rows, ca});
                      for (std::size_t r = 0; r < rows; ++r)
                        std::copy_n(dy.data().data() + r * (ca + cb), ca, da.data().data() + r * ca);
                      g.accumulate(a, da);
                    }
                    if (g.requires_grad(b)) {
                      Tensor<T> db(Shape{rows, cb});
                      for (std::size_t r = 0; r < rows; ++r)
                        std::copy_n(dy.data().data() + r * (ca + cb) + ca, cb, db.data().data() + r * cb);
                      g.accumulate(b, db);
                    }
                  });
}

}  // namespace ad

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return ad::add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return ad::sub(a, b); }
template <typename T>
Var<T> operator*(T s, Var<T> a) { return ad::scale(a, s); }

}  // namespace dsrc
