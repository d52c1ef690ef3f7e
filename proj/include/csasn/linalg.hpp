#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "csasn/autograd.hpp"

namespace csasn {

template <class T>
struct SymmetricEigen {
  std::vector<T> values;   // ascending
  std::vector<T> vectors;  // n x n row-major; column k pairs with values[k]
  std::size_t n = 0;
};

// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix (row-major).
template <class T>
SymmetricEigen<T> jacobi_eigen(std::vector<T> a, std::size_t n,
                               int max_sweeps = 100) {
  if (a.size() != n * n) throw DimensionError("jacobi_eigen: size mismatch");
  std::vector<T> v(n * n, T{0});
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T{1};
  T total{0};
  for (T x : a) total += x * x;
  const T tol = std::numeric_limits<T>::epsilon() *
                std::numeric_limits<T>::epsilon() * std::max(total, T{1e-300});
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    T off{0};
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const T apq = a[p * n + q];
        if (apq == T{0}) continue;
        const T app = a[p * n + p];
        const T aqq = a[q * n + q];
        const T theta = (aqq - app) / (T{2} * apq);
        const T t = (theta >= T{0} ? T{1} : T{-1}) /
                    (std::abs(theta) + std::sqrt(theta * theta + T{1}));
        const T c = T{1} / std::sqrt(t * t + T{1});
        const T s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const T akp = a[k * n + p];
          const T akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const T apk = a[p * n + k];
          const T aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const T vkp = v[k * n + p];
          const T vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i * n + i] < a[j * n + j];
  });
  SymmetricEigen<T> out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a[order[k] * n + order[k]];
    for (std::size_t r = 0; r < n; ++r)
      out.vectors[r * n + k] = v[r * n + order[k]];
  }
  return out;
}

namespace detail {

// Eigendecomposition of the smaller Gram matrix of F[rows, cols]:
// F F^T when rows <= cols, else F^T F.
template <class T>
SymmetricEigen<T> small_gram_eigen(const Tensor<T>& f, bool& row_gram) {
  if (f.rank() != 2) throw DimensionError("gram: expected a matrix");
  const std::size_t r = f.dim(0), c = f.dim(1);
  row_gram = r <= c;
  const std::size_t n = row_gram ? r : c;
  std::vector<T> g(n * n, T{0});
  if (row_gram) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = i; j < r; ++j) {
        T s{0};
        for (std::size_t k = 0; k < c; ++k) s += f[i * c + k] * f[j * c + k];
        g[i * n + j] = g[j * n + i] = s;
      }
  } else {
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i; j < c; ++j) {
        T s{0};
        for (std::size_t k = 0; k < r; ++k) s += f[k * c + i] * f[k * c + j];
        g[i * n + j] = g[j * n + i] = s;
      }
  }
  return jacobi_eigen(std::move(g), n);
}

}  // namespace detail

// The k smallest singular values of F[B, D], ascending.
template <class T>
std::vector<T> spectral_bottom_k(const Tensor<T>& f, std::size_t k) {
  if (f.rank() != 2) throw DimensionError("spectral_bottom_k: expected [B,D]");
  const std::size_t m = std::min(f.dim(0), f.dim(1));
  if (k < 1 || k > m) {
    throw DimensionError("spectral_bottom_k: K=" + std::to_string(k) +
                         " outside [1, " + std::to_string(m) + "]");
  }
  bool row_gram = true;
  const auto eig = detail::small_gram_eigen(f, row_gram);
  std::vector<T> out(k);
  for (std::size_t i = 0; i < k; ++i)
    out[i] = std::sqrt(std::max(eig.values[i], T{0}));
  return out;
}

// Sum of squares of the k smallest singular values of F[B, D].
// Gradient: 2 * P F (row Gram) or 2 * F P (column Gram), where P projects
// onto the bottom-k eigenvectors of the smaller Gram matrix.
template <class T>
Var<T> bottom_k_energy(const Var<T>& f, std::size_t k) {
  const Tensor<T>& fv = f.value();
  if (fv.rank() != 2) throw DimensionError("bottom_k_energy: expected [B,D]");
  const std::size_t m = std::min(fv.dim(0), fv.dim(1));
  if (k < 1 || k > m) {
    throw DimensionError("bottom_k_energy: K=" + std::to_string(k) +
                         " outside [1, " + std::to_string(m) + "]");
  }
  bool row_gram = true;
  const auto eig = detail::small_gram_eigen(fv, row_gram);
  T energy{0};
  for (std::size_t i = 0; i < k; ++i) energy += std::max(eig.values[i], T{0});
  const std::size_t n = eig.n;
  std::vector<T> proj(n * n, T{0});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      T s{0};
      for (std::size_t i = 0; i < k; ++i)
        s += eig.vectors[a * n + i] * eig.vectors[b * n + i];
      proj[a * n + b] = s;
    }
  return make_result<T>(
      Tensor<T>::scalar(energy), {f},
      [proj = std::move(proj), n, row_gram](Node<T>& node) {
        Node<T>& pf = *node.parents[0];
        const auto& F = pf.value;
        auto& gf = pf.grad_buffer();
        const std::size_t r = F.dim(0), c = F.dim(1);
        const T g2 = T{2} * node.grad[0];
        if (row_gram) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) {
              const T pij = g2 * proj[i * n + j];
              for (std::size_t d = 0; d < c; ++d) gf[i * c + d] += pij * F[j * c + d];
            }
        } else {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t a = 0; a < c; ++a) {
              const T fia = g2 * F[i * c + a];
              for (std::size_t b = 0; b < c; ++b) gf[i * c + b] += fia * proj[a * n + b];
            }
        }
      });
}

}  // namespace csasn
