#pragma once

// Reverse-mode differentiation over whole tensors. Each op records its
// parents and a vector-Jacobian product; backward() replays them in reverse
// topological order.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "csasn/tensor.hpp"

namespace csasn {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Gradient buffer, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape(), T{0});
      has_grad = true;
    }
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    if (!requires_grad) return;
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool valid() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Accumulated gradient; zeros when nothing flowed here.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    node_->grad_buffer().fill(T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds a graph node for an op result. The backward closure receives the
// result node; it reads node.grad and accumulates into node.parents.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (detail::grad_mode()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

// Propagates d(root)/d(node) to every node reachable from a scalar root.
template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward: root must be a scalar, got " +
                         shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS: each node is emitted once, after its parents.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("broadcast: incompatible shapes " + shape_str(a) +
                           " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> broadcast_strides(const Shape& in,
                                                  const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    st[k + off] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b,
                        F&& f) {
  const std::size_t total = shape_size(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t inner = out[r - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) {
      f(o + j, ia + j * sa[r - 1], ib + j * sb[r - 1]);
    }
    // advance the outer multi-index
    for (std::size_t k = r - 1; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

// Splits a shape around `axis` into (outer, axis length, inner).
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer,
                       std::size_t& len, std::size_t& inner) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// Elementwise binary op with broadcasting. `da(a, b, y)` and `db(a, b, y)`
// return the local partial derivatives.
template <class T, class F, class DA, class DB>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                             [&](std::size_t o, std::size_t i, std::size_t j) {
                               out[o] = f(av[i], bv[j]);
                             });
  return make_result<T>(
      std::move(out), {a, b}, [da, db](Node<T>& n) {
        Node<T>& pa = *n.parents[0];
        Node<T>& pb = *n.parents[1];
        const auto& g = n.grad;
        const auto& y = n.value;
        const auto& av = pa.value;
        const auto& bv = pb.value;
        Tensor<T>* ga = pa.requires_grad ? &pa.grad_buffer() : nullptr;
        Tensor<T>* gb = pb.requires_grad ? &pb.grad_buffer() : nullptr;
        detail::for_each_broadcast(
            y.shape(), av.shape(), bv.shape(),
            [&](std::size_t o, std::size_t i, std::size_t j) {
              if (ga) (*ga)[i] += g[o] * da(av[i], bv[j], y[o]);
              if (gb) (*gb)[j] += g[o] * db(av[i], bv[j], y[o]);
            });
      });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T{1}; },
      [](T, T, T) { return T{1}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T{1}; },
      [](T, T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T{1} / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <class T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }

// Elementwise unary op; `df(x, y)` is dy/dx given input x and output y.
template <class T, class F, class DF>
Var<T> unary_op(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, [df](Node<T>& n) {
    Node<T>& p = *n.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      gp[i] += n.grad[i] * df(p.value[i], n.value[i]);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  return unary_op(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return unary_op(x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> operator-(const Var<T>& x) { return scale(x, T{-1}); }

template <class T>
Var<T> exp(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::log(v); },
                  [](T v, T) { return T{1} / v; });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return unary_op(x, [](T v) { return v * v; },
                  [](T v, T) { return T{2} * v; });
}

// x^p for x > 0 (or any x when p is a nonnegative integer).
template <class T>
Var<T> pow(const Var<T>& x, T p) {
  return unary_op(
      x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p == T{0} ? T{0} : p * std::pow(v, p - T{1}); });
}

// Gradient passes where lo <= x <= hi, zero outside. NaN stays NaN.
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary_op(
      x, [lo, hi](T v) { return v != v ? v : std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

template <class T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) {
    const T e = std::exp(-v);
    return T{1} / (T{1} + e);
  }
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
T softplus_scalar(T v) {
  // log(1 + e^v) = max(v, 0) + log1p(e^-|v|)
  return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v)));
}

template <class T>
T mish_scalar(T v) {
  return v * std::tanh(softplus_scalar(v));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary_op(x, [](T v) { return sigmoid_scalar(v); },
                  [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary_op(x, [](T v) { return v > T{0} ? v : T{0}; },
                  [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary_op(x, [](T v) { return std::tanh(v); },
                  [](T, T y) { return T{1} - y * y; });
}

// mish(x) = x * tanh(softplus(x))
template <class T>
Var<T> mish(const Var<T>& x) {
  return unary_op(x, [](T v) { return mish_scalar(v); },
                  [](T v, T) {
                    const T t = std::tanh(softplus_scalar(v));
                    const T s = sigmoid_scalar(v);
                    return t + v * (T{1} - t * t) * s;
                  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& n) {
    auto& gp = n.parents[0]->grad_buffer();
    const T g = n.grad[0];
    for (auto& v : gp.data()) v += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

// Sum along `axis`; keepdim retains it with length 1.
template <class T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis, bool keepdim = false) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Shape os = x.shape();
  if (keepdim) {
    os[axis] = 1;
  } else {
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const T* src = &xv[(o * len + a) * inner];
      T* dst = &out[o * inner];
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return make_result<T>(std::move(out), {x},
                        [outer, len, inner](Node<T>& n) {
                          auto& gp = n.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t a = 0; a < len; ++a) {
                              T* dst = &gp[(o * len + a) * inner];
                              const T* g = &n.grad[o * inner];
                              for (std::size_t i = 0; i < inner; ++i)
                                dst[i] += g[i];
                            }
                          }
                        });
}

template <class T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis, bool keepdim = false) {
  return scale(sum_axis(x, axis, keepdim),
               T{1} / static_cast<T>(x.shape().at(axis)));
}

// Max along `axis` (gradient routed to the first maximal element).
template <class T>
Var<T> max_axis(const Var<T>& x, std::size_t axis, bool keepdim = false) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Shape os = x.shape();
  if (keepdim) {
    os[axis] = 1;
  } else {
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor<T> out(os);
  std::vector<std::size_t> arg(outer * inner, 0);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      T bv = xv[o * len * inner + i];
      for (std::size_t a = 1; a < len; ++a) {
        const T v = xv[(o * len + a) * inner + i];
        if (v > bv) {
          bv = v;
          best = a;
        }
      }
      out[o * inner + i] = bv;
      arg[o * inner + i] = (o * len + best) * inner + i;
    }
  }
  return make_result<T>(std::move(out), {x},
                        [arg = std::move(arg)](Node<T>& n) {
                          auto& gp = n.parents[0]->grad_buffer();
                          for (std::size_t k = 0; k < arg.size(); ++k)
                            gp[arg[k]] += n.grad[k];
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  }
  return make_result<T>(x.value().reshaped(std::move(shape)), {x},
                        [](Node<T>& n) {
                          auto& gp = n.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < gp.size(); ++i)
                            gp[i] += n.grad[i];
                        });
}

// General axis permutation: out.shape[k] = x.shape[perm[k]].
template <class T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) {
    throw DimensionError("permute: rank mismatch for " + shape_str(in));
  }
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t k = r; k-- > 1;) in_strides[k - 1] = in_strides[k] * in[k];
  Shape os(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t k = 0; k < r; ++k) {
    os[k] = in[perm[k]];
    src_stride[k] = in_strides[perm[k]];
  }
  // map[o] = flat input index of output element o
  const std::size_t total = x.value().size();
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    map[o] = src;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      src += src_stride[k];
      if (idx[k] < os[k]) break;
      src -= src_stride[k] * os[k];
      idx[k] = 0;
    }
  }
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < total; ++o) out[o] = xv[map[o]];
  return make_result<T>(std::move(out), {x},
                        [map = std::move(map)](Node<T>& n) {
                          auto& gp = n.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < map.size(); ++o)
                            gp[map[o]] += n.grad[o];
                        });
}

template <class T>
Var<T> transpose_last2(const Var<T>& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose: rank < 2");
  std::vector<std::size_t> perm(r);
  for (std::size_t k = 0; k < r; ++k) perm[k] = k;
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(x, perm);
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  Shape os = xs[0].shape();
  if (axis >= os.size()) throw DimensionError("concat: axis out of range");
  std::size_t total_len = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != os.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && s[k] != os[k]) {
        throw DimensionError("concat: shape " + shape_str(s) + " vs " +
                             shape_str(os));
      }
    }
    total_len += s[axis];
  }
  os[axis] = total_len;
  std::size_t outer, len, inner;
  detail::split_axis(os, axis, outer, len, inner);
  Tensor<T> out(os);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t l = x.shape()[axis];
    const auto& xv = x.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&xv[o * l * inner], l * inner,
                  &out[(o * len + off) * inner]);
    }
    off += l;
  }
  return make_result<T>(
      std::move(out), xs,
      [offsets, outer, len, inner, axis](Node<T>& n) {
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          Node<T>& par = *n.parents[p];
          if (!par.requires_grad) continue;
          auto& gp = par.grad_buffer();
          const std::size_t l = par.value.shape()[axis];
          for (std::size_t o = 0; o < outer; ++o) {
            const T* g = &n.grad[(o * len + offsets[p]) * inner];
            T* dst = &gp[o * l * inner];
            for (std::size_t i = 0; i < l * inner; ++i) dst[i] += g[i];
          }
        }
      });
}

// Contiguous slice [start, start+count) along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start,
             std::size_t count) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  if (count == 0 || start + count > len) {
    throw DimensionError("slice: range out of bounds for " +
                         shape_str(x.shape()));
  }
  Shape os = x.shape();
  os[axis] = count;
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(&xv[(o * len + start) * inner], count * inner,
                &out[o * count * inner]);
  }
  return make_result<T>(std::move(out), {x},
                        [outer, len, inner, start, count](Node<T>& n) {
                          auto& gp = n.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o) {
                            const T* g = &n.grad[o * count * inner];
                            T* dst = &gp[(o * len + start) * inner];
                            for (std::size_t i = 0; i < count * inner; ++i)
                              dst[i] += g[i];
                          }
                        });
}

// Gathers entries along axis 0.
template <class T>
Var<T> index_select(const Var<T>& x, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw DimensionError("index_select: empty index");
  const std::size_t n0 = x.dim(0);
  const std::size_t row = x.value().size() / n0;
  Shape os = x.shape();
  os[0] = rows.size();
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n0) throw DimensionError("index_select: index out of range");
    std::copy_n(&xv[rows[r] * row], row, &out[r * row]);
  }
  return make_result<T>(std::move(out), {x}, [rows, row](Node<T>& n) {
    auto& gp = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t i = 0; i < row; ++i)
        gp[rows[r] * row + i] += n.grad[r * row + i];
    }
  });
}

// Stops gradient flow.
template <class T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

}  // namespace csasn
