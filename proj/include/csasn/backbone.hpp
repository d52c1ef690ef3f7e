#pragma once

// Dual-branch feature extraction: a stride-32 convolutional branch and a
// patch-embedding transformer branch, fused by channel concatenation.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csasn/model_config.hpp"
#include "csasn/nn_ops.hpp"
#include "csasn/params.hpp"

namespace csasn {

// conv (no bias) -> batch norm -> mish
template <class T>
struct ConvBnBlock {
  Var<T> weight;
  Var<T> gain;
  Var<T> bias;
  std::shared_ptr<BatchNormStats<T>> stats;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

template <class T>
struct ConvBranchParams {
  std::vector<ConvBnBlock<T>> blocks;  // stem first, then the stage convs
  ConvBnBlock<T> projection;           // 1x1 to c1 channels
};

template <class T>
ConvBnBlock<T> make_conv_block(ParamStore<T>& store, const std::string& name,
                               std::size_t in, std::size_t out, std::size_t k,
                               std::size_t stride, std::mt19937_64& rng) {
  ConvBnBlock<T> b;
  b.weight = store.add(name + ".weight", he_uniform<T>({out, in, k, k}, in * k * k, rng));
  b.gain = store.add(name + ".bn.gain", Tensor<T>({out}, T{1}));
  b.bias = store.add(name + ".bn.bias", Tensor<T>({out}, T{0}));
  b.stats = store.add_stats(name + ".bn", out);
  b.stride = stride;
  b.pad = k / 2;
  return b;
}

template <class T>
ConvBranchParams<T> make_conv_branch(ParamStore<T>& store, const ModelConfig& cfg,
                                     std::mt19937_64& rng) {
  ConvBranchParams<T> p;
  p.blocks.push_back(
      make_conv_block(store, "conv.stem", cfg.in_channels, cfg.stem_channels, 5, 2, rng));
  std::size_t in = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const std::size_t out = cfg.stage_channels[s];
    for (std::size_t k = 0; k < cfg.convs_per_stage; ++k) {
      const std::string name =
          "conv.stage" + std::to_string(s + 1) + "." + std::to_string(k + 1);
      p.blocks.push_back(make_conv_block(store, name, in, out, 3, k == 0 ? 2 : 1, rng));
      in = out;
    }
  }
  p.projection = make_conv_block(store, "conv.project", in, cfg.c1, 1, 1, rng);
  return p;
}

template <class T>
Var<T> conv_bn_mish(const Var<T>& x, const ConvBnBlock<T>& b, Mode mode) {
  auto y = conv2d(x, b.weight, b.stride, b.pad);
  return mish(batch_norm(y, b.gain, b.bias, *b.stats, mode));
}

// x[B, C, H, W] -> F_eff[B, c1, H/32, W/32]
template <class T>
Var<T> conv_branch_forward(const Var<T>& x, const ConvBranchParams<T>& p, Mode mode) {
  if (x.rank() != 4 || x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
    throw DimensionError("conv branch: input " + shape_str(x.shape()) +
                         " must be [B,C,H,W] with H and W divisible by 32");
  }
  Var<T> h = x;
  for (const auto& b : p.blocks) h = conv_bn_mish(h, b, mode);
  return conv_bn_mish(h, p.projection, mode);
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <class T>
struct MhsaParams {
  Var<T> wq, wk, wv;  // [D, D]; head m uses columns [m*D/h, (m+1)*D/h)
  Var<T> wo;          // [D, D]
  std::size_t heads = 1;
};

template <class T>
MhsaParams<T> make_mhsa(ParamStore<T>& store, const std::string& name, std::size_t dim,
                        std::size_t heads, std::mt19937_64& rng) {
  MhsaParams<T> p;
  p.wq = store.add(name + ".wq", xavier_uniform<T>({dim, dim}, dim, dim, rng));
  p.wk = store.add(name + ".wk", xavier_uniform<T>({dim, dim}, dim, dim, rng));
  p.wv = store.add(name + ".wv", xavier_uniform<T>({dim, dim}, dim, dim, rng));
  p.wo = store.add(name + ".wo", xavier_uniform<T>({dim, dim}, dim, dim, rng));
  p.heads = heads;
  return p;
}

template <class T>
struct AttentionOutput {
  Var<T> out;      // [B, N, D]
  Var<T> weights;  // [B, heads, N, N], rows sum to 1
};

// Concat_m softmax(Q_m K_m^T / sqrt(d_k)) V_m, projected by W^O.
template <class T>
AttentionOutput<T> mhsa(const Var<T>& tokens, const MhsaParams<T>& p) {
  if (tokens.rank() != 3) throw DimensionError("mhsa: expected tokens [B,N,D]");
  const std::size_t B = tokens.dim(0), N = tokens.dim(1), D = tokens.dim(2);
  const std::size_t h = p.heads;
  if (h == 0 || D % h != 0) {
    throw DimensionError("mhsa: model dim " + std::to_string(D) +
                         " not divisible by " + std::to_string(h) + " heads");
  }
  const std::size_t dk = D / h;
  auto split = [&](const Var<T>& w) {
    return permute(reshape(matmul(tokens, w), {B, N, h, dk}), {0, 2, 1, 3});
  };
  auto q = split(p.wq);
  auto k = split(p.wk);
  auto v = split(p.wv);
  auto scores = scale(matmul(q, transpose_last2(k)), T{1} / std::sqrt(static_cast<T>(dk)));
  auto attn = softmax(scores, 3);
  auto heads = matmul(attn, v);  // [B, h, N, dk]
  auto merged = reshape(permute(heads, {0, 2, 1, 3}), {B, N, D});
  return {matmul(merged, p.wo), attn};
}

// ---------------------------------------------------------------------------
// Transformer branch

template <class T>
struct VitLayer {
  MhsaParams<T> attn;
  Var<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class T>
struct VitBranchParams {
  std::size_t patch = 8;
  Var<T> embed;      // [P*P*C, D]
  Var<T> pos;        // [N + 1, D]
  Var<T> cls_token;  // [D]
  std::vector<VitLayer<T>> layers;
};

template <class T>
VitBranchParams<T> make_vit_branch(ParamStore<T>& store, const ModelConfig& cfg,
                                   std::mt19937_64& rng) {
  VitBranchParams<T> p;
  const std::size_t D = cfg.vit_dim;
  const std::size_t P = cfg.patch;
  const std::size_t n = (cfg.image_size / P) * (cfg.image_size / P);
  const std::size_t in = P * P * cfg.in_channels;
  p.patch = P;
  p.embed = store.add("vit.embed", xavier_uniform<T>({in, D}, in, D, rng));
  p.pos = store.add("vit.pos", normal_init<T>({n + 1, D}, 0.02, rng));
  p.cls_token = store.add("vit.cls", normal_init<T>({D}, 0.02, rng));
  for (std::size_t l = 0; l < cfg.vit_layers; ++l) {
    const std::string name = "vit.layer" + std::to_string(l + 1);
    VitLayer<T> layer;
    layer.attn = make_mhsa(store, name + ".attn", D, cfg.vit_heads, rng);
    layer.ln1_gain = store.add(name + ".ln1.gain", Tensor<T>({D}, T{1}));
    layer.ln1_bias = store.add(name + ".ln1.bias", Tensor<T>({D}, T{0}));
    layer.ln2_gain = store.add(name + ".ln2.gain", Tensor<T>({D}, T{1}));
    layer.ln2_bias = store.add(name + ".ln2.bias", Tensor<T>({D}, T{0}));
    layer.mlp_w1 = store.add(name + ".mlp.w1",
                             xavier_uniform<T>({D, cfg.vit_mlp}, D, cfg.vit_mlp, rng));
    layer.mlp_b1 = store.add(name + ".mlp.b1", Tensor<T>({cfg.vit_mlp}, T{0}));
    layer.mlp_w2 = store.add(name + ".mlp.w2",
                             xavier_uniform<T>({cfg.vit_mlp, D}, cfg.vit_mlp, D, rng));
    layer.mlp_b2 = store.add(name + ".mlp.b2", Tensor<T>({D}, T{0}));
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Repeats x along broadcast (size-1) axes to reach `shape`.
template <class T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return add(x, Var<T>::constant(Tensor<T>(shape, T{0})));
}

// [B, C, H, W] -> [B, N, C*P*P] with patches in row-major grid order.
template <class T>
Var<T> extract_patches(const Var<T>& x, std::size_t P) {
  if (x.rank() != 4 || P == 0 || x.dim(2) % P != 0 || x.dim(3) % P != 0) {
    throw DimensionError("patch_embed: input " + shape_str(x.shape()) +
                         " not divisible into " + std::to_string(P) + "x" +
                         std::to_string(P) + " patches");
  }
  const std::size_t B = x.dim(0), C = x.dim(1), gh = x.dim(2) / P, gw = x.dim(3) / P;
  auto r = reshape(x, {B, C, gh, P, gw, P});
  auto t = permute(r, {0, 2, 4, 1, 3, 5});
  return reshape(t, {B, gh * gw, C * P * P});
}

// z0 = [x_class; x_1 E; ...; x_N E] + E_pos  -> [B, N + 1, D]
template <class T>
Var<T> patch_embed(const Var<T>& x, const VitBranchParams<T>& p) {
  auto patches = extract_patches(x, p.patch);
  const std::size_t B = patches.dim(0), N = patches.dim(1);
  const std::size_t D = p.embed.dim(1);
  if (patches.dim(2) != p.embed.dim(0) || p.pos.dim(0) != N + 1) {
    throw DimensionError("patch_embed: parameters sized for a different input geometry");
  }
  auto tokens = matmul(patches, p.embed);
  auto cls = broadcast_to(reshape(p.cls_token, {1, 1, D}), {B, 1, D});
  return add(concat<T>({cls, tokens}, 1), p.pos);
}

// Pre-norm encoder layer: z += MHSA(LN(z)); z += MLP(LN(z)).
template <class T>
Var<T> vit_layer(const Var<T>& z, const VitLayer<T>& l) {
  auto a = mhsa(layer_norm(z, l.ln1_gain, l.ln1_bias), l.attn).out;
  auto z1 = add(z, a);
  auto hidden = mish(linear(layer_norm(z1, l.ln2_gain, l.ln2_bias), l.mlp_w1, l.mlp_b1));
  return add(z1, linear(hidden, l.mlp_w2, l.mlp_b2));
}

// Class-token embedding after all layers: [B, D].
template <class T>
Var<T> vit_forward(const Var<T>& x, const VitBranchParams<T>& p) {
  auto z = patch_embed(x, p);
  for (const auto& l : p.layers) z = vit_layer(z, l);
  const std::size_t B = z.dim(0), D = z.dim(2);
  return reshape(slice(z, 1, 0, 1), {B, D});
}

// [F_vit broadcast over the grid ; F_eff] -> [B, D_v + c1, H', W']
template <class T>
Var<T> fuse(const Var<T>& f_vit, const Var<T>& f_eff) {
  if (f_vit.rank() != 2 || f_eff.rank() != 4) {
    throw DimensionError("fuse: expected F_vit [B,D] and F_eff [B,C,H,W]");
  }
  if (f_vit.dim(0) != f_eff.dim(0)) {
    throw DimensionError("fuse: batch sizes differ (" + std::to_string(f_vit.dim(0)) +
                         " vs " + std::to_string(f_eff.dim(0)) + ")");
  }
  const std::size_t B = f_vit.dim(0), D = f_vit.dim(1);
  auto grid = broadcast_to(reshape(f_vit, {B, D, 1, 1}), {B, D, f_eff.dim(2), f_eff.dim(3)});
  return concat<T>({grid, f_eff}, 1);
}

// ViT features alone, broadcast over an H' x W' grid.
template <class T>
Var<T> vit_grid(const Var<T>& f_vit, std::size_t gh, std::size_t gw) {
  const std::size_t B = f_vit.dim(0), D = f_vit.dim(1);
  return broadcast_to(reshape(f_vit, {B, D, 1, 1}), {B, D, gh, gw});
}

}  // namespace csasn
