#pragma once

// Cascaded channel-then-spatial gating of the fused feature map.

#include <random>
#include <string>

#include "csasn/model_config.hpp"
#include "csasn/nn_ops.hpp"
#include "csasn/params.hpp"

namespace csasn {

template <class T>
struct SeParams {
  Var<T> w1;  // [C/r, C]
  Var<T> b1;  // [C/r]
  Var<T> w2;  // [C, C/r]
  Var<T> b2;  // [C]
  std::size_t reduction = 16;
};

template <class T>
struct SpatialAttnParams {
  Var<T> weight;  // [1, 2, k, k]
  Var<T> bias;    // [1]
};

template <class T>
SeParams<T> make_se(ParamStore<T>& store, std::size_t channels, std::size_t reduction,
                    std::mt19937_64& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("se: channel count " + std::to_string(channels) +
                      " not divisible by reduction " + std::to_string(reduction));
  }
  const std::size_t h = channels / reduction;
  SeParams<T> p;
  p.w1 = store.add("se.w1", he_uniform<T>({h, channels}, channels, rng));
  p.b1 = store.add("se.b1", Tensor<T>({h}, T{0}));
  p.w2 = store.add("se.w2", xavier_uniform<T>({channels, h}, h, channels, rng));
  p.b2 = store.add("se.b2", Tensor<T>({channels}, T{0}));
  p.reduction = reduction;
  return p;
}

template <class T>
SpatialAttnParams<T> make_spatial_attn(ParamStore<T>& store, std::size_t kernel,
                                       std::mt19937_64& rng) {
  SpatialAttnParams<T> p;
  p.weight = store.add("spatial.weight", he_uniform<T>({1, 2, kernel, kernel},
                                                       2 * kernel * kernel, rng));
  p.bias = store.add("spatial.bias", Tensor<T>({1}, T{0}));
  return p;
}

template <class T>
struct GatedMap {
  Var<T> out;   // same shape as the input map
  Var<T> mask;  // [B, C] for channel gating, [B, 1, H, W] for spatial gating
};

// F * sigmoid(W2 relu(W1 GAP(F) + b1) + b2), one mask per sample and channel.
template <class T>
GatedMap<T> se_channel(const Var<T>& f, const SeParams<T>& p) {
  if (f.rank() != 4) throw DimensionError("se: expected a map [B,C,H,W]");
  const std::size_t B = f.dim(0), C = f.dim(1);
  if (p.reduction == 0 || C % p.reduction != 0 || p.w1.dim(1) != C) {
    throw DimensionError("se: channel count " + std::to_string(C) +
                         " incompatible with reduction " + std::to_string(p.reduction));
  }
  auto pooled = mean_axis(reshape(f, {B, C, f.dim(2) * f.dim(3)}), 2);  // [B, C]
  auto z = relu(add(matmul(pooled, transpose_last2(p.w1)), p.b1));
  auto mask = sigmoid(add(matmul(z, transpose_last2(p.w2)), p.b2));
  return {mul(f, reshape(mask, {B, C, 1, 1})), mask};
}

// F * sigmoid(conv_kxk([max_c F; mean_c F])), one mask per sample and pixel.
template <class T>
GatedMap<T> cbam_spatial(const Var<T>& f, const SpatialAttnParams<T>& p) {
  if (f.rank() != 4) throw DimensionError("spatial attention: expected a map [B,C,H,W]");
  const std::size_t k = p.weight.dim(3);
  auto planes = concat<T>({max_axis(f, 1, true), mean_axis(f, 1, true)}, 1);
  auto mask = sigmoid(conv2d(planes, p.weight, p.bias, 1, k / 2));
  return {mul(f, mask), mask};
}

template <class T>
struct CascadeOutput {
  Var<T> refined;
  Var<T> channel_mask;
  Var<T> spatial_mask;
};

template <class T>
CascadeOutput<T> cascade(const Var<T>& f, const SeParams<T>& se,
                         const SpatialAttnParams<T>& sp) {
  auto c = se_channel(f, se);
  auto s = cbam_spatial(c.out, sp);
  return {s.out, c.mask, s.mask};
}

}  // namespace csasn
