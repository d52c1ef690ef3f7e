#pragma once

// Frequency-domain band-pass cleanup, spatial/intensity augmentation and
// minority oversampling for grayscale images.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "csasn/error.hpp"
#include "csasn/image.hpp"
#include "csasn/sample.hpp"

namespace csasn {

// Orthonormal DCT-II coefficients, same dimensions as the source image.
struct CoefficientGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> coeffs;

  double& operator()(std::size_t u, std::size_t v) { return coeffs[u * width + v]; }
  double operator()(std::size_t u, std::size_t v) const { return coeffs[u * width + v]; }
};

namespace detail {

// basis[u * K + m] = C(u) cos(pi (2m + 1) u / (2K)), C(0) = sqrt(1/K),
// C(u > 0) = sqrt(2/K).
inline std::vector<double> dct_basis(std::size_t K) {
  std::vector<double> b(K * K);
  const double k = static_cast<double>(K);
  for (std::size_t u = 0; u < K; ++u) {
    const double c = u == 0 ? std::sqrt(1.0 / k) : std::sqrt(2.0 / k);
    for (std::size_t m = 0; m < K; ++m) {
      b[u * K + m] = c * std::cos(std::numbers::pi * (2.0 * m + 1.0) * u / (2.0 * k));
    }
  }
  return b;
}

// out[M,N] = L[M,M] * in[M,N] * R[N,N]^T, with transposition flags on L/R.
inline std::vector<double> separable(const std::vector<double>& in, std::size_t M,
                                     std::size_t N, const std::vector<double>& L,
                                     bool l_transposed, const std::vector<double>& R,
                                     bool r_transposed) {
  std::vector<double> tmp(M * N, 0.0);
  // rows: tmp[r][v] = sum_n in[r][n] * R'[v][n]
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t v = 0; v < N; ++v) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        s += in[r * N + n] * (r_transposed ? R[n * N + v] : R[v * N + n]);
      tmp[r * N + v] = s;
    }
  std::vector<double> out(M * N, 0.0);
  // columns: out[u][v] = sum_m L'[u][m] * tmp[m][v]
  for (std::size_t u = 0; u < M; ++u)
    for (std::size_t m = 0; m < M; ++m) {
      const double l = l_transposed ? L[m * M + u] : L[u * M + m];
      for (std::size_t v = 0; v < N; ++v) out[u * N + v] += l * tmp[m * N + v];
    }
  return out;
}

}  // namespace detail

// Separable 2-D DCT-II (orthonormal).
inline CoefficientGrid dct2(const Image& img) {
  if (img.height == 0 || img.width == 0) throw DimensionError("dct2: empty image");
  const auto bm = detail::dct_basis(img.height);
  const auto bn = detail::dct_basis(img.width);
  return {img.height, img.width,
          detail::separable(img.pixels, img.height, img.width, bm, false, bn, false)};
}

inline Image idct2(const CoefficientGrid& g) {
  if (g.height == 0 || g.width == 0) throw DimensionError("idct2: empty grid");
  const auto bm = detail::dct_basis(g.height);
  const auto bn = detail::dct_basis(g.width);
  return Image(g.height, g.width,
               detail::separable(g.coeffs, g.height, g.width, bm, true, bn, true));
}

struct FilterSpec {
  double d_low = 10.0;
  double d_high = 100.0;
  double reference_size = 224.0;

  void validate() const {
    if (!(d_low >= 0.0) || !(d_low < d_high) || !(reference_size > 0.0)) {
      throw ConfigError("filter: need 0 <= d_low < d_high and reference_size > 0");
    }
  }
};

// keep[u * N + v] is true when the radial index distance sqrt(u^2 + v^2)
// lies in [d_low * s, d_high * s], s = max(M, N) / reference_size.
inline std::vector<bool> bandpass_mask(std::size_t M, std::size_t N, const FilterSpec& spec) {
  spec.validate();
  const double s = static_cast<double>(std::max(M, N)) / spec.reference_size;
  const double lo = spec.d_low * s;
  const double hi = spec.d_high * s;
  std::vector<bool> keep(M * N);
  for (std::size_t u = 0; u < M; ++u)
    for (std::size_t v = 0; v < N; ++v) {
      const double d = std::hypot(static_cast<double>(u), static_cast<double>(v));
      keep[u * N + v] = d >= lo && d <= hi;
    }
  return keep;
}

// Reconstruction of the masked spectrum without the final clamp.
inline Image bandpass_unclamped(const Image& img, const FilterSpec& spec) {
  auto coeffs = dct2(img);
  const auto keep = bandpass_mask(img.height, img.width, spec);
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (!keep[i]) coeffs.coeffs[i] = 0.0;
  return idct2(coeffs);
}

inline Image bandpass_filter(const Image& img, const FilterSpec& spec) {
  Image out = bandpass_unclamped(img, spec);
  clamp_unit(out);
  return out;
}

// Debug rendering of the retained coefficients (white = kept).
inline Image mask_image(std::size_t M, std::size_t N, const FilterSpec& spec) {
  const auto keep = bandpass_mask(M, N, spec);
  Image out(M, N);
  for (std::size_t i = 0; i < keep.size(); ++i) out.pixels[i] = keep[i] ? 1.0 : 0.0;
  return out;
}

struct AugmentSpec {
  double brightness_delta_min = -0.2;
  double brightness_delta_max = 0.2;
  double contrast_scale_min = 0.8;
  double contrast_scale_max = 1.25;
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
};

// One concrete augmentation draw.
struct AugmentParams {
  double brightness_delta = 0.0;
  double contrast_scale = 1.0;
  bool flip_h = false;
  bool flip_v = false;
};

inline Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) out(r, c) = img(r, img.width - 1 - c);
  return out;
}

inline Image flip_vertical(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) out(r, c) = img(img.height - 1 - r, c);
  return out;
}

// Contrast scaling about the image mean, brightness shift, flips, clamp.
inline Image apply_augmentation(const Image& img, const AugmentParams& p) {
  const double mu = image_mean(img);
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] = (img.pixels[i] - mu) * p.contrast_scale + mu + p.brightness_delta;
  }
  if (p.flip_h) out = flip_horizontal(out);
  if (p.flip_v) out = flip_vertical(out);
  clamp_unit(out);
  return out;
}

template <class Rng>
AugmentParams draw_augmentation(const AugmentSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> delta(spec.brightness_delta_min,
                                               spec.brightness_delta_max);
  // log-uniform so that 0.8 and 1.25 are equally likely
  std::uniform_real_distribution<double> log_scale(std::log(spec.contrast_scale_min),
                                                   std::log(spec.contrast_scale_max));
  std::bernoulli_distribution fh(spec.flip_h_prob);
  std::bernoulli_distribution fv(spec.flip_v_prob);
  AugmentParams p;
  p.brightness_delta = delta(rng);
  p.contrast_scale = std::exp(log_scale(rng));
  p.flip_h = fh(rng);
  p.flip_v = fv(rng);
  return p;
}

template <class Rng>
Image augment(const Image& img, const AugmentSpec& spec, Rng& rng) {
  return apply_augmentation(img, draw_augmentation(spec, rng));
}

// Replicates every malignant sample `factor` times, each replica with its own
// augmentation seed; benign samples appear once. Output order is a seeded
// shuffle.
template <class Rng>
std::vector<Sample> oversample(const std::vector<Sample>& samples, std::size_t factor, Rng& rng) {
  if (factor < 1) throw ConfigError("oversample: factor must be >= 1");
  std::vector<Sample> out;
  out.reserve(samples.size() * factor);
  std::uniform_int_distribution<std::uint64_t> seed_dist;
  for (const auto& s : samples) {
    const std::size_t copies = s.malignancy() ? factor : 1;
    for (std::size_t k = 0; k < copies; ++k) {
      Sample r = s;
      r.augment_seed = seed_dist(rng);
      out.push_back(std::move(r));
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace csasn
