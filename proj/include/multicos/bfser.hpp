#pragma once

#include <array>
#include <functional>
#include <vector>

#include "multicos/fusion.hpp"

namespace multicos {

inline constexpr int kLevels = 5;
inline constexpr int kFusedLevels = 4;  // levels 1..4 are fused and decoded
inline constexpr int64_t kMinSide = 16;

struct BFSerConfig {
  int64_t rgb_channels = 3;
  int64_t aux_channels = 1;
  std::array<int64_t, kLevels> widths{16, 24, 32, 48, 64};
  SSMConfig ssm;
  std::array<int64_t, 3> aspp_rates{1, 2, 4};

  bool rgb_only = false;
  bool lsfm = true;
  bool ffm = true;
  bool ssfm = true;
  FusionSwitches fusion;
};

/// One encoder level: a stride-2 conv block followed by a refining block.
struct EncoderStage {
  EncoderStage() = default;
  EncoderStage(ParamBuilder pb, int64_t in, int64_t out);
  Tensor operator()(const Tensor& x, bool training) const;

  ConvBlock down, refine;
};

/// Five stride-2 stages; level k sits at ceil(side / 2^(k+1)). The aux
/// encoder owns an embedding conv in front of its first stage.
struct Encoder {
  Encoder() = default;
  Encoder(ParamBuilder pb, int64_t in_channels, const std::array<int64_t, kLevels>& widths, bool embedding);

  Tensor embed(const Tensor& x) const;
  std::vector<Tensor> operator()(const Tensor& x, bool training) const;

  std::optional<Conv2d> embedding;
  std::vector<EncoderStage> stages;
};

/// Dilated 3x3 branches (replicate padding) and a global-pool branch,
/// concatenated and reduced to one logit channel.
struct ASPP {
  ASPP() = default;
  ASPP(ParamBuilder pb, int64_t in, int64_t width, const std::array<int64_t, 3>& rates);
  Tensor operator()(const Tensor& x) const;

  std::vector<Conv2d> branches;
  Conv2d pool_branch, reduce, head;
};

struct SegmentationOutput {
  std::vector<Tensor> masks;  // p_s^1 .. p_s^5, finest first
  std::vector<Tensor> edges;  // p_e^1 .. p_e^4
};

/// Top-down decoder. Level 4 reads [p_s^5, F^4]; level k < 4 reads
/// [up(state), up(p_s^{k+1}), F^k] with bilinear resampling to F^k's size.
/// Each level is two conv blocks with 1x1 mask and edge heads.
struct Decoder {
  struct Stage {
    ConvBlock first, second;
    Conv2d mask_head, edge_head;
  };

  Decoder() = default;
  Decoder(ParamBuilder pb, int64_t width);
  SegmentationOutput operator()(const Tensor& coarse, const std::vector<Tensor>& skips, bool training) const;

  int64_t width = 0;
  std::vector<Stage> stages;  // stages[k - 1] decodes level k
};

/// Intermediate tensors of one forward pass, indexed by encoder level.
struct DataflowTrace {
  std::vector<Tensor> f_i, f_u, f_x, f_u_prime, skips;
  /// What each aux-encoder stage consumed; stage_input_u[k + 1] is f_u^{k'}
  /// for k = 1..3.
  std::vector<Tensor> stage_input_u;
  Tensor coarse;
};

struct ForwardOptions {
  bool training = false;
  /// Replaces f_u^4 as the level-4 latent-fusion source (knowledge injection).
  std::function<Tensor(const Tensor& f_u4)> level4_source;
  DataflowTrace* trace = nullptr;
};

struct BFSer {
  BFSer() = default;
  BFSer(ParamBuilder pb, const BFSerConfig& cfg);

  SegmentationOutput forward(const Tensor& x_i, const Tensor& x_u, const ForwardOptions& opt) const;
  SegmentationOutput forward(const Tensor& x_i, const Tensor& x_u, bool training) const {
    return forward(x_i, x_u, ForwardOptions{training, {}, nullptr});
  }

  /// Latent fusion at `level`, or plain addition when LSFM is off.
  Tensor fuse_latent(int level, const Tensor& f_i, const Tensor& f_u, bool training) const;

  BFSerConfig cfg;
  Encoder enc_i, enc_u;
  std::vector<LSFM> lsfm;  // indexed by level; slot 0 unused
  std::vector<FFM> ffm;
  std::vector<SSFM> ssfm;
  std::vector<ConvBlock> skip_proj;  // rgb_only skips
  ASPP aspp;
  Decoder decoder;
};

void validate(const BFSerConfig& cfg);

}  // namespace multicos
