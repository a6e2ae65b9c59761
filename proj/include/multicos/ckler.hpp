#pragma once

#include <array>
#include <vector>

#include "multicos/fusion.hpp"

namespace multicos {

inline constexpr int kCKLerStages = 4;

struct CKLerConfig {
  int64_t in_channels = 3;
  int64_t out_channels = 1;
  /// Encoder widths per stride-2 stage; the last one is the width of z.
  std::array<int64_t, kCKLerStages> widths{16, 32, 48, 64};
};

/// x + conv(block(x)): a conv block followed by a linear 3x3 conv.
struct ResidualBlock {
  ResidualBlock() = default;
  ResidualBlock(ParamBuilder pb, int64_t channels);
  Tensor operator()(const Tensor& x, bool training) const;

  ConvBlock inner;
  Conv2d outer;
};

struct Translation {
  Tensor x_u;  // pseudo-modality, (B, out_channels, H, W) in (0, 1)
  Tensor z;    // knowledge vector, (B, widths.back(), H/16, W/16)
};

/// Residual U-Net: a full-resolution stem, four stride-2 residual stages down
/// to z, and a mirrored decoder that upsamples bilinearly and concatenates the
/// matching encoder output before each residual stage.
struct CKLer {
  struct Down {
    ConvBlock down;
    ResidualBlock res;
  };
  struct Up {
    ConvBlock merge;
    ResidualBlock res;
  };

  CKLer() = default;
  CKLer(ParamBuilder pb, const CKLerConfig& cfg);

  Tensor encode(const Tensor& x_i, bool training, std::vector<Tensor>* skips = nullptr) const;
  Translation translate(const Tensor& x_i, bool training) const;

  CKLerConfig cfg;
  ConvBlock stem;
  std::vector<Down> encoder;
  std::vector<Up> decoder;  // decoder[s] produces the resolution of encoder stage s - 1 (the stem for s = 0)
  Conv2d head;
};

/// Mean absolute error between a translation and its target.
Tensor translation_loss(const Tensor& x_u_hat, const Tensor& e_u);

/// Projects z to the width of f_u^4, resizes it to f_u^4's extent and feeds it
/// to a dedicated FFM in the fused-feature role. The result replaces f_u^4 as
/// the input of the level-4 latent fusion.
struct KnowledgeInjection {
  KnowledgeInjection() = default;
  KnowledgeInjection(ParamBuilder pb, int64_t z_channels, int64_t level4_channels);

  Tensor project(const Tensor& z, int64_t height, int64_t width) const;
  Tensor operator()(const Tensor& f_u4, const Tensor& z, bool training) const;

  Conv2d proj;
  FFM ffm;
};

}  // namespace multicos
