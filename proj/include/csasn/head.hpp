#pragma once

// Residual multi-scale classification head shared by the three binary tasks.

#include <array>
#include <random>
#include <string>

#include "csasn/backbone.hpp"
#include "csasn/model_config.hpp"
#include "csasn/nn_ops.hpp"
#include "csasn/params.hpp"
#include "csasn/sample.hpp"

namespace csasn {

template <class T>
struct HeadParams {
  MhsaParams<T> attn;
  Var<T> ln_gain, ln_bias;
  Var<T> w1;  // [D, hidden1]
  Var<T> bn1_gain, bn1_bias;
  std::shared_ptr<BatchNormStats<T>> bn1;
  Var<T> w2;  // [hidden1, hidden2]
  Var<T> bn2_gain, bn2_bias;
  std::shared_ptr<BatchNormStats<T>> bn2;
  std::array<Var<T>, kNumTasks> wc;  // [hidden2, 2]
  std::array<Var<T>, kNumTasks> bc;  // [2]
  T dropout = T(0.5);
};

template <class T>
HeadParams<T> make_head(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t D = cfg.fused_channels();
  const std::size_t h1 = cfg.hidden1, h2 = cfg.hidden2;
  HeadParams<T> p;
  p.attn = make_mhsa(store, "head.attn", D, cfg.head_heads, rng);
  p.ln_gain = store.add("head.ln.gain", Tensor<T>({D}, T{1}));
  p.ln_bias = store.add("head.ln.bias", Tensor<T>({D}, T{0}));
  p.w1 = store.add("head.w1", he_uniform<T>({D, h1}, D, rng));
  p.bn1_gain = store.add("head.bn1.gain", Tensor<T>({h1}, T{1}));
  p.bn1_bias = store.add("head.bn1.bias", Tensor<T>({h1}, T{0}));
  p.bn1 = store.add_stats("head.bn1", h1);
  p.w2 = store.add("head.w2", he_uniform<T>({h1, h2}, h1, rng));
  p.bn2_gain = store.add("head.bn2.gain", Tensor<T>({h2}, T{1}));
  p.bn2_bias = store.add("head.bn2.bias", Tensor<T>({h2}, T{0}));
  p.bn2 = store.add_stats("head.bn2", h2);
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    const std::string name = "head.task" + std::to_string(t + 1);
    p.wc[t] = store.add(name + ".weight", xavier_uniform<T>({h2, 2}, h2, 2, rng));
    p.bc[t] = store.add(name + ".bias", Tensor<T>({2}, T{0}));
  }
  p.dropout = static_cast<T>(cfg.dropout);
  return p;
}

// Global average over the spatial axes: [B, C, H, W] -> [B, C].
template <class T>
Var<T> pool_refined(const Var<T>& f) {
  if (f.rank() != 4) throw DimensionError("pool: expected a map [B,C,H,W]");
  const std::size_t B = f.dim(0), C = f.dim(1);
  return mean_axis(reshape(f, {B, C, f.dim(2) * f.dim(3)}), 2);
}

// Self-attention with the batch as the sequence: F[B, D] is one sequence of
// B tokens. Returns the attended features and the [1, h, B, B] weights.
template <class T>
AttentionOutput<T> head_mhsa(const Var<T>& f, const MhsaParams<T>& p) {
  if (f.rank() != 2) throw DimensionError("head attention: expected features [B,D]");
  const std::size_t B = f.dim(0), D = f.dim(1);
  auto r = mhsa(reshape(f, {1, B, D}), p);
  return {reshape(r.out, {B, D}), r.weights};
}

template <class T>
Var<T> residual_norm(const Var<T>& f, const Var<T>& f_attn, const Var<T>& gain,
                     const Var<T>& bias) {
  if (f.shape() != f_attn.shape()) {
    throw DimensionError("residual_norm: shapes " + shape_str(f.shape()) + " and " +
                         shape_str(f_attn.shape()) + " differ");
  }
  return layer_norm(add(f, f_attn), gain, bias);
}

// h1 = Mish(BN(F' W1)), dropout, h2 = Mish(BN(h1 W2)).
template <class T, class Rng>
Var<T> multiscale_project(const Var<T>& f, const HeadParams<T>& p, Mode mode, Rng& rng) {
  auto h1 = mish(batch_norm(matmul(f, p.w1), p.bn1_gain, p.bn1_bias, *p.bn1, mode));
  h1 = dropout(h1, p.dropout, rng, mode);
  return mish(batch_norm(matmul(h1, p.w2), p.bn2_gain, p.bn2_bias, *p.bn2, mode));
}

// Two-logit softmax for task t (0-based): [B, 2], column 1 = positive.
template <class T>
Var<T> task_logits(const Var<T>& h2, const HeadParams<T>& p, std::size_t t) {
  if (t >= kNumTasks) throw ConfigError("task index " + std::to_string(t) + " out of range");
  return softmax(linear(h2, p.wc[t], p.bc[t]), 1);
}

}  // namespace csasn
