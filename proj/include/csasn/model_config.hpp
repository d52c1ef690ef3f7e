#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "csasn/error.hpp"

namespace csasn {

// Compound scaling of the convolutional branch: depth alpha^phi, width
// beta^phi, resolution gamma^phi, with alpha * beta^2 * gamma^2 ~= 2.
struct ScalingConfig {
  double phi = 0.0;
  double alpha = 1.2;
  double beta = 1.1;
  double gamma = 1.15;

  void validate() const {
    if (alpha < 1.0 || beta < 1.0 || gamma < 1.0) {
      throw ConfigError("scaling: alpha, beta and gamma must all be >= 1");
    }
    const double c = alpha * beta * beta * gamma * gamma;
    if (c < 1.8 || c > 2.2) {
      throw ConfigError("scaling: alpha*beta^2*gamma^2 = " + std::to_string(c) +
                        " outside [1.8, 2.2]");
    }
    if (phi < 0.0) throw ConfigError("scaling: phi must be >= 0");
  }
};

struct ScaleMultipliers {
  double depth = 1.0;
  double width = 1.0;
  double resolution = 1.0;
};

inline ScaleMultipliers compound_scale(const ScalingConfig& cfg) {
  cfg.validate();
  return {std::pow(cfg.alpha, cfg.phi), std::pow(cfg.beta, cfg.phi),
          std::pow(cfg.gamma, cfg.phi)};
}

enum class Variant { Full, NoAttention, NoConvBranch, NoViTBranch };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "Full";
    case Variant::NoAttention: return "NoAttention";
    case Variant::NoConvBranch: return "NoConvBranch";
    case Variant::NoViTBranch: return "NoViTBranch";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  for (auto v : {Variant::Full, Variant::NoAttention, Variant::NoConvBranch,
                 Variant::NoViTBranch}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown ablation variant '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 1;

  // convolutional branch
  std::size_t stem_channels = 16;
  std::vector<std::size_t> stage_channels{16, 32, 64, 96};
  std::size_t convs_per_stage = 2;
  std::size_t c1 = 96;
  ScalingConfig scaling;

  // transformer branch
  std::size_t patch = 8;
  std::size_t vit_dim = 32;
  std::size_t vit_heads = 4;
  std::size_t vit_layers = 2;
  std::size_t vit_mlp = 64;

  // cascaded attention
  std::size_t se_reduction = 16;
  std::size_t spatial_kernel = 7;

  // classification head
  std::size_t head_heads = 4;
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
  double dropout = 0.5;

  Variant variant = Variant::Full;

  bool uses_conv() const { return variant != Variant::NoConvBranch; }
  bool uses_vit() const { return variant != Variant::NoViTBranch; }
  bool uses_attention() const { return variant != Variant::NoAttention; }

  // Channel count of the fused map fed to attention and the head.
  std::size_t fused_channels() const {
    return (uses_vit() ? vit_dim : 0) + (uses_conv() ? c1 : 0);
  }

  std::size_t grid_size() const { return image_size / 32; }

  // Applies the compound-scaling multipliers to depth, stage widths and input
  // resolution (rounded to a multiple of 32).
  ModelConfig scaled() const {
    const auto m = compound_scale(scaling);
    ModelConfig out = *this;
    out.convs_per_stage =
        static_cast<std::size_t>(std::ceil(convs_per_stage * m.depth - 1e-9));
    out.stem_channels = static_cast<std::size_t>(std::lround(stem_channels * m.width));
    for (auto& c : out.stage_channels)
      c = static_cast<std::size_t>(std::lround(c * m.width));
    out.image_size =
        static_cast<std::size_t>(std::lround(image_size * m.resolution / 32.0)) * 32;
    out.scaling.phi = 0.0;
    return out;
  }

  void validate() const {
    scaling.validate();
    if (image_size == 0 || image_size % 32 != 0)
      throw ConfigError("image_size must be a positive multiple of 32");
    if (stage_channels.size() != 4) throw ConfigError("stage_channels needs 4 entries");
    if (convs_per_stage < 1) throw ConfigError("convs_per_stage must be >= 1");
    if (patch == 0 || image_size % patch != 0)
      throw ConfigError("patch size must divide image_size");
    if (vit_heads == 0 || vit_dim % vit_heads != 0)
      throw ConfigError("vit_dim must be divisible by vit_heads");
    const std::size_t c = fused_channels();
    if (se_reduction == 0 || c % se_reduction != 0)
      throw ConfigError("fused channel count " + std::to_string(c) +
                        " not divisible by se_reduction " + std::to_string(se_reduction));
    if (spatial_kernel % 2 == 0) throw ConfigError("spatial_kernel must be odd");
    if (head_heads == 0 || c % head_heads != 0)
      throw ConfigError("fused channel count must be divisible by head_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  }

  // Reported dimensions: ViT-Base width, EfficientNet-B2 output channels,
  // 224 x 224 input, 16 x 16 patches.
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.image_size = 224;
    c.patch = 16;
    c.vit_dim = 768;
    c.vit_heads = 12;
    c.vit_layers = 12;
    c.vit_mlp = 3072;
    c.c1 = 1408;
    c.stage_channels = {24, 48, 120, 352};
    c.stem_channels = 32;
    return c;
  }
};

}  // namespace csasn
