#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "csasn/autograd.hpp"

namespace csasn {

namespace kernels {

// C[M,N] += A[M,K] * B[K,N]. Accumulates over k in ascending order so each
// output element sees the same operation sequence as a naive triple loop;
// the blocking over j and the four-row tiles only change the visiting order
// of independent elements.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A,
             const T* B, T* C) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t j0 = 0; j0 < N; j0 += kBlock) {
    const std::size_t jn = std::min(kBlock, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* __restrict c0 = C + i * N + j0;
      T* __restrict c1 = c0 + N;
      T* __restrict c2 = c1 + N;
      T* __restrict c3 = c2 + N;
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T a0 = a[k], a1 = a[K + k], a2 = a[2 * K + k], a3 = a[3 * K + k];
        const T* __restrict b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const T bv = b[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < M; ++i) {
      T* __restrict c = C + i * N + j0;
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T av = a[k];
        const T* __restrict b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += av * b[j];
      }
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A,
             const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      T* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[M,K] += A[M,N] * B[K,N]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A,
             const T* B, T* C) {
  std::vector<T> bt(N * K);
  transpose(K, N, B, bt.data());
  gemm_nn(M, K, N, A, bt.data(), C);
}

}  // namespace kernels

// Batched matrix product. a: [..., m, k]; b: [..., k, n] with identical
// leading dims, or a rank-2 b shared across a's batch.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " +
                         shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(as) +
                         " x " + shape_str(bs));
  }
  const bool shared_b = bs.size() == 2;
  if (!shared_b &&
      !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    throw DimensionError("matmul: batch dimensions differ: " + shape_str(as) +
                         " x " + shape_str(bs));
  }
  const std::size_t batch = a.value().size() / (m * k);
  Shape os(as.begin(), as.end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor<T> out(os);
  const T* A = a.value().data().data();
  const T* B = b.value().data().data();
  T* C = out.data().data();
  if (shared_b) {
    // fold the batch into rows
    kernels::gemm_nn(batch * m, n, k, A, B, C);
  } else {
    for (std::size_t t = 0; t < batch; ++t)
      kernels::gemm_nn(m, n, k, A + t * m * k, B + t * k * n, C + t * m * n);
  }
  return make_result<T>(
      std::move(out), {a, b}, [batch, m, n, k, shared_b](Node<T>& node) {
        Node<T>& pa = *node.parents[0];
        Node<T>& pb = *node.parents[1];
        const T* G = node.grad.data().data();
        const T* A = pa.value.data().data();
        const T* B = pb.value.data().data();
        if (pa.requires_grad) {
          T* GA = pa.grad_buffer().data().data();
          if (shared_b) {
            kernels::gemm_nt(batch * m, n, k, G, B, GA);
          } else {
            for (std::size_t t = 0; t < batch; ++t)
              kernels::gemm_nt(m, n, k, G + t * m * n, B + t * k * n,
                               GA + t * m * k);
          }
        }
        if (pb.requires_grad) {
          T* GB = pb.grad_buffer().data().data();
          if (shared_b) {
            kernels::gemm_tn(batch * m, n, k, A, G, GB);
          } else {
            for (std::size_t t = 0; t < batch; ++t)
              kernels::gemm_tn(m, n, k, A + t * m * k, G + t * m * n,
                               GB + t * k * n);
          }
        }
      });
}

// x[..., in] * w[in, out] + bias[out]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  if (x.rank() == 1) throw DimensionError("linear: input rank must be >= 2");
  return add(matmul(x, w), bias);
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  return matmul(x, w);
}

struct Conv2dGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

inline Conv2dGeometry conv2d_geometry(const Shape& xs, const Shape& ws,
                                      std::size_t stride, std::size_t pad) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw DimensionError("conv2d: expected x[B,C,H,W] and w[O,C,kh,kw], got " +
                         shape_str(xs) + " and " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw DimensionError("conv2d: channel mismatch " + shape_str(xs) + " vs " +
                         shape_str(ws));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  Conv2dGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad,
                   0, 0};
  if (g.kh > g.height + 2 * pad || g.kw > g.width + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(ws) +
                         " larger than padded input " + shape_str(xs));
  }
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace kernels {

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c, oy*s + i - pad, ox*s + j - pad]
// Rows of `cols` are `ld` apart (ld >= out_h*out_w), so several images can
// share one column matrix.
template <class T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols, std::size_t ld = 0) {
  const std::size_t P = ld ? ld : g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) -
                         static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<long>(g.height)) {
            std::fill_n(dst, g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long xx = static_cast<long>(ox * g.stride + j) -
                            static_cast<long>(g.pad);
            dst[ox] = (xx < 0 || xx >= static_cast<long>(g.width))
                          ? T{0}
                          : src[static_cast<std::size_t>(xx)];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_acc(const Conv2dGeometry& g, const T* cols, T* x, std::size_t ld = 0) {
  const std::size_t P = ld ? ld : g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) -
                         static_cast<long>(g.pad);
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long xx = static_cast<long>(ox * g.stride + j) -
                            static_cast<long>(g.pad);
            if (xx < 0 || xx >= static_cast<long>(g.width)) continue;
            dst[static_cast<std::size_t>(xx)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels

// 2-D cross-correlation with zero padding. bias may be an invalid Var.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
              std::size_t stride, std::size_t pad) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), w.shape(), stride, pad);
  const bool has_bias = bias.valid();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.out_ch)) {
    throw DimensionError("conv2d: bias must have shape [" +
                         std::to_string(g.out_ch) + "]");
  }
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t K = g.in_ch * g.kh * g.kw;
  const std::size_t BP = g.batch * P;
  const std::size_t image = g.in_ch * g.height * g.width;
  // one GEMM for the whole batch: W[O,K] * cols[K, B*P]
  std::vector<T> cols(K * BP);
  const T* X = x.value().data().data();
  for (std::size_t b = 0; b < g.batch; ++b)
    kernels::im2col(g, X + b * image, cols.data() + b * P, BP);
  std::vector<T> flat(g.out_ch * BP, T{0});
  kernels::gemm_nn(g.out_ch, BP, K, w.value().data().data(), cols.data(), flat.data());
  Tensor<T> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      T* dst = out.data().data() + (b * g.out_ch + o) * P;
      const T* src = flat.data() + o * BP + b * P;
      const T bv = has_bias ? bias.value()[o] : T{0};
      for (std::size_t p = 0; p < P; ++p) dst[p] = has_bias ? src[p] + bv : src[p];
    }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [g, P, K, BP, image,
                                                            has_bias](Node<T>& n) {
    Node<T>& px = *n.parents[0];
    Node<T>& pw = *n.parents[1];
    const T* G = n.grad.data().data();
    std::vector<T> gflat(g.out_ch * BP);
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t o = 0; o < g.out_ch; ++o)
        std::copy_n(G + (b * g.out_ch + o) * P, P, gflat.data() + o * BP + b * P);
    std::vector<T> cols(K * BP);
    if (pw.requires_grad) {
      const T* X = px.value.data().data();
      for (std::size_t b = 0; b < g.batch; ++b)
        kernels::im2col(g, X + b * image, cols.data() + b * P, BP);
      kernels::gemm_nt(g.out_ch, BP, K, gflat.data(), cols.data(),
                       pw.grad_buffer().data().data());
    }
    if (px.requires_grad) {
      std::fill(cols.begin(), cols.end(), T{0});
      kernels::gemm_tn(g.out_ch, BP, K, pw.value.data().data(), gflat.data(), cols.data());
      T* GX = px.grad_buffer().data().data();
      for (std::size_t b = 0; b < g.batch; ++b)
        kernels::col2im_acc(g, cols.data() + b * P, GX + b * image, BP);
    }
    if (has_bias && n.parents[2]->requires_grad) {
      auto& gb = n.parents[2]->grad_buffer();
      for (std::size_t o = 0; o < g.out_ch; ++o)
        for (std::size_t q = 0; q < BP; ++q) gb[o] += gflat[o * BP + q];
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride,
              std::size_t pad) {
  return conv2d(x, w, Var<T>{}, stride, pad);
}

// Numerically stabilised softmax along `axis` (max subtraction).
template <class T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  std::size_t outer, len, inner;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = xv[base];
      for (std::size_t a = 1; a < len; ++a)
        mx = std::max(mx, xv[base + a * inner]);
      T s{0};
      for (std::size_t a = 0; a < len; ++a) {
        const T e = std::exp(xv[base + a * inner] - mx);
        out[base + a * inner] = e;
        s += e;
      }
      for (std::size_t a = 0; a < len; ++a) out[base + a * inner] /= s;
    }
  }
  return make_result<T>(std::move(out), {x}, [outer, len, inner](Node<T>& n) {
    auto& gp = n.parents[0]->grad_buffer();
    const auto& y = n.value;
    const auto& g = n.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot{0};
        for (std::size_t a = 0; a < len; ++a)
          dot += g[base + a * inner] * y[base + a * inner];
        for (std::size_t a = 0; a < len; ++a) {
          const std::size_t k = base + a * inner;
          gp[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <class T>
Var<T> softmax(const Var<T>& x) {
  return softmax(x, x.rank() - 1);
}

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Normalises each row over the last axis, then applies gain and bias [D].
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = static_cast<T>(kLayerNormEps)) {
  const std::size_t D = x.shape().back();
  if (gain.value().size() != D || bias.value().size() != D) {
    throw DimensionError("layer_norm: gain/bias must have " +
                         std::to_string(D) + " entries");
  }
  const std::size_t rows = x.value().size() / D;
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &xv[r * D];
    T mu{0};
    for (std::size_t d = 0; d < D; ++d) mu += row[d];
    mu /= static_cast<T>(D);
    T var{0};
    for (std::size_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
    var /= static_cast<T>(D);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t d = 0; d < D; ++d)
      xhat[r * D + d] = (row[d] - mu) * inv_std[r];
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t d = 0; d < D; ++d)
      out[r * D + d] = xhat[r * D + d] * gain.value()[d] + bias.value()[d];
  return make_result<T>(
      std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       D](Node<T>& n) {
        Node<T>& px = *n.parents[0];
        Node<T>& pg = *n.parents[1];
        Node<T>& pb = *n.parents[2];
        const auto& g = n.grad;
        if (pg.requires_grad || pb.requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t d = 0; d < D; ++d) {
              if (pg.requires_grad)
                pg.grad_buffer()[d] += g[r * D + d] * xhat[r * D + d];
              if (pb.requires_grad) pb.grad_buffer()[d] += g[r * D + d];
            }
          }
        }
        if (!px.requires_grad) return;
        auto& gx = px.grad_buffer();
        const auto& gain = pg.value;
        for (std::size_t r = 0; r < rows; ++r) {
          T m1{0}, m2{0};
          for (std::size_t d = 0; d < D; ++d) {
            const T dxh = g[r * D + d] * gain[d];
            m1 += dxh;
            m2 += dxh * xhat[r * D + d];
          }
          m1 /= static_cast<T>(D);
          m2 /= static_cast<T>(D);
          for (std::size_t d = 0; d < D; ++d) {
            const T dxh = g[r * D + d] * gain[d];
            gx[r * D + d] += inv_std[r] * (dxh - m1 - xhat[r * D + d] * m2);
          }
        }
      });
}

// Running statistics for one batch-norm layer (per channel).
template <class T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
  explicit BatchNormStats(std::size_t channels = 1)
      : mean(Shape{channels}, T{0}), var(Shape{channels}, T{1}) {}
};

enum class Mode { Train, Eval };

// Per-channel normalisation over axis 1 of x[B, C, ...]. Train mode uses
// biased batch statistics and moves the running stats by `momentum`; eval
// mode normalises with the running stats.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  BatchNormStats<T>& stats, Mode mode,
                  T momentum = static_cast<T>(kBatchNormMomentum),
                  T eps = static_cast<T>(kBatchNormEps)) {
  if (x.rank() < 2) throw DimensionError("batch_norm: input rank must be >= 2");
  const std::size_t B = x.dim(0);
  const std::size_t C = x.dim(1);
  const std::size_t S = x.value().size() / (B * C);
  if (gain.value().size() != C || bias.value().size() != C ||
      stats.mean.size() != C) {
    throw DimensionError("batch_norm: parameter size mismatch for " +
                         std::to_string(C) + " channels");
  }
  const bool training = mode == Mode::Train;
  if (training && B < 2) {
    throw DegenerateBatchError(
        "batch_norm: training mode needs a batch of at least 2, got " +
        std::to_string(B));
  }
  const auto& xv = x.value();
  std::vector<T> mu(C), inv_std(C);
  const T count = static_cast<T>(B * S);
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      T m{0};
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) m += xv[(b * C + c) * S + s];
      m /= count;
      T v{0};
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s) {
          const T d = xv[(b * C + c) * S + s] - m;
          v += d * d;
        }
      v /= count;
      mu[c] = m;
      inv_std[c] = T{1} / std::sqrt(v + eps);
      stats.mean[c] = (T{1} - momentum) * stats.mean[c] + momentum * m;
      stats.var[c] = (T{1} - momentum) * stats.var[c] + momentum * v;
    } else {
      mu[c] = stats.mean[c];
      inv_std[c] = T{1} / std::sqrt(stats.var[c] + eps);
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t k = (b * C + c) * S + s;
        xhat[k] = (xv[k] - mu[c]) * inv_std[c];
        out[k] = xhat[k] * gain.value()[c] + bias.value()[c];
      }
  return make_result<T>(
      std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, S,
       training](Node<T>& n) {
        Node<T>& px = *n.parents[0];
        Node<T>& pg = *n.parents[1];
        Node<T>& pb = *n.parents[2];
        const auto& g = n.grad;
        const auto& gain = pg.value;
        const T count = static_cast<T>(B * S);
        for (std::size_t c = 0; c < C; ++c) {
          T sg{0}, sgx{0};
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t k = (b * C + c) * S + s;
              sg += g[k];
              sgx += g[k] * xhat[k];
            }
          if (pg.requires_grad) pg.grad_buffer()[c] += sgx;
          if (pb.requires_grad) pb.grad_buffer()[c] += sg;
          if (!px.requires_grad) continue;
          auto& gx = px.grad_buffer();
          const T scale = gain[c] * inv_std[c];
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t k = (b * C + c) * S + s;
              if (training) {
                gx[k] += scale * (g[k] - sg / count - xhat[k] * sgx / count);
              } else {
                gx[k] += scale * g[k];
              }
            }
        }
      });
}

// Inverted dropout: train mode zeroes entries with probability p and scales
// survivors by 1/(1-p); eval mode is the identity.
template <class T, class Rng>
Var<T> dropout(const Var<T>& x, T p, Rng& rng, Mode mode) {
  if (mode == Mode::Eval || p <= T{0}) return x;
  if (p >= T{1}) throw ConfigError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T{1} / (T{1} - p);
  Tensor<T> mask(x.shape());
  for (auto& m : mask.data()) m = keep(rng) ? s : T{0};
  return mul(x, Var<T>::constant(std::move(mask)));
}

// D[i, j] = ||a_i - b_j||^2 for a[n, d], b[m, d].
template <class T>
Var<T> pairwise_sq_dist(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("pairwise_sq_dist: expected [n,d] and [m,d], got " +
                         shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor<T> out(Shape{n, m});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T s{0};
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  return make_result<T>(std::move(out), {a, b}, [n, m, d](Node<T>& node) {
    Node<T>& pa = *node.parents[0];
    Node<T>& pb = *node.parents[1];
    const auto& av = pa.value;
    const auto& bv = pb.value;
    Tensor<T>* ga = pa.requires_grad ? &pa.grad_buffer() : nullptr;
    Tensor<T>* gb = pb.requires_grad ? &pb.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const T g2 = T{2} * node.grad[i * m + j];
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = g2 * (av[i * d + k] - bv[j * d + k]);
          if (ga) (*ga)[i * d + k] += diff;
          if (gb) (*gb)[j * d + k] -= diff;
        }
      }
  });
}

}  // namespace csasn
