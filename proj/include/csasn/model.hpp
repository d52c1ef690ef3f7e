#pragma once

// Full pipeline: conv + ViT branches -> fuse -> cascaded attention -> pool ->
// residual MHSA head -> three task probabilities.

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "csasn/attention.hpp"
#include "csasn/backbone.hpp"
#include "csasn/head.hpp"
#include "csasn/image.hpp"
#include "csasn/params.hpp"

namespace csasn {

template <class T>
struct ModelOutput {
  std::array<Var<T>, kNumTasks> probs;  // each [B, 2]
  Var<T> features;                      // pooled refined map [B, D]
  std::optional<Var<T>> channel_mask;   // absent when attention is ablated
  std::optional<Var<T>> spatial_mask;
};

template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    if (cfg_.uses_conv()) conv_ = make_conv_branch(store_, cfg_, rng);
    if (cfg_.uses_vit()) vit_ = make_vit_branch(store_, cfg_, rng);
    if (cfg_.uses_attention()) {
      se_ = make_se(store_, cfg_.fused_channels(), cfg_.se_reduction, rng);
      spatial_ = make_spatial_attn(store_, cfg_.spatial_kernel, rng);
    }
    head_ = make_head(store_, cfg_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const HeadParams<T>& head() const { return head_; }
  const SeParams<T>& se() const { return se_; }
  const SpatialAttnParams<T>& spatial() const { return spatial_; }

  // Fused map before attention: [B, D_v + c1, H/32, W/32] (or one branch).
  Var<T> fused(const Var<T>& x, Mode mode) const {
    check_input(x);
    const std::size_t g = x.dim(2) / 32;
    if (cfg_.uses_conv() && cfg_.uses_vit())
      return fuse(vit_forward(x, vit_), conv_branch_forward(x, conv_, mode));
    if (cfg_.uses_conv()) return conv_branch_forward(x, conv_, mode);
    return vit_grid(vit_forward(x, vit_), g, x.dim(3) / 32);
  }

  // Dropout masks come from `dropout_seed`, so a training-mode forward is
  // reproducible given the seed.
  ModelOutput<T> forward(const Var<T>& x, Mode mode, std::uint64_t dropout_seed = 0) const {
    ModelOutput<T> out;
    auto f = fused(x, mode);
    if (cfg_.uses_attention()) {
      auto c = cascade(f, se_, spatial_);
      f = c.refined;
      out.channel_mask = c.channel_mask;
      out.spatial_mask = c.spatial_mask;
    }
    out.features = pool_refined(f);
    auto attended = head_mhsa(out.features, head_.attn).out;
    auto normed = residual_norm(out.features, attended, head_.ln_gain, head_.ln_bias);
    std::mt19937_64 rng(dropout_seed);
    auto h2 = multiscale_project(normed, head_, mode, rng);
    for (std::size_t t = 0; t < kNumTasks; ++t) out.probs[t] = task_logits(h2, head_, t);
    return out;
  }

  // Eval-mode positive-class probabilities, [task][sample].
  std::array<std::vector<double>, kNumTasks> predict(const Tensor<T>& batch) const {
    NoGradGuard guard;
    auto out = forward(Var<T>::constant(batch), Mode::Eval);
    std::array<std::vector<double>, kNumTasks> scores;
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      const auto& p = out.probs[t].value();
      for (std::size_t b = 0; b < p.dim(0); ++b)
        scores[t].push_back(static_cast<double>(p.at({b, 1})));
    }
    return scores;
  }

  void save(const std::filesystem::path& path) const {
    write_checkpoint(path, store_.snapshot());
  }

  void load(const std::filesystem::path& path) { store_.restore(read_checkpoint(path)); }

 private:
  void check_input(const Var<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.image_size ||
        x.dim(3) != cfg_.image_size) {
      throw DimensionError("model: input " + shape_str(x.shape()) + " does not match [B," +
                           std::to_string(cfg_.in_channels) + "," +
                           std::to_string(cfg_.image_size) + "," +
                           std::to_string(cfg_.image_size) + "]");
    }
  }

  ModelConfig cfg_;
  ParamStore<T> store_;
  ConvBranchParams<T> conv_;
  VitBranchParams<T> vit_;
  SeParams<T> se_;
  SpatialAttnParams<T> spatial_;
  HeadParams<T> head_;
};

// Stacks images into a [B, 1, H, W] tensor.
template <class T>
Tensor<T> images_to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("empty image batch");
  const std::size_t H = images[0]->height, W = images[0]->width;
  Tensor<T> out({images.size(), 1, H, W});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->height != H || images[b]->width != W)
      throw DimensionError("image batch has mixed sizes");
    for (std::size_t i = 0; i < H * W; ++i)
      out[b * H * W + i] = static_cast<T>(images[b]->pixels[i]);
  }
  return out;
}

}  // namespace csasn
