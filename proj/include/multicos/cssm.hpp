#pragma once

#include <vector>

#include "multicos/nn.hpp"
#include "multicos/scan2d.hpp"
#include "multicos/ssm.hpp"

namespace multicos {

struct SSMConfig {
  int64_t d_model = 32;  // channel width entering and leaving a block
  int64_t d_inner = 64;  // expanded width of the scanned stream
  int64_t state_dim = 8;
  int64_t d_conv = 3;
  int64_t ca_reduction = 4;
  Discretization discretization = Discretization::kTaylor;
  /// One selective head per scan direction instead of one shared head.
  bool per_direction = false;
};

/// Selective heads indexed by scan direction (one shared head, or four).
struct DirectionalHeads {
  DirectionalHeads() = default;
  DirectionalHeads(ParamBuilder pb, const SSMConfig& cfg);
  const SelectiveSSM& operator[](ScanDirection dir) const;

  std::vector<SelectiveSSM> heads;
};

/// Squeeze (global average) -> 1x1 conv -> ReLU -> 1x1 conv -> sigmoid ->
/// per-channel rescale.
struct ChannelAttention {
  ChannelAttention() = default;
  ChannelAttention(ParamBuilder pb, int64_t channels, int64_t reduction);
  Tensor operator()(const Tensor& x) const;
  /// The per-channel factors, (B, C, 1, 1).
  Tensor weights(const Tensor& x) const;

  Conv2d squeeze, excite;
};

/// Residual vision state-space block used for the intra-modal features:
/// x + out_proj(LN(scan(SiLU(dwconv(u)))) * SiLU(z)), (u, z) = in_proj(LN(x)).
struct SSMBlock {
  SSMBlock() = default;
  SSMBlock(ParamBuilder pb, const SSMConfig& cfg);
  Tensor operator()(const Tensor& x) const;

  SSMConfig cfg;
  LayerNorm ln_in;
  Tensor in_proj;  // (2 d_inner, d_model)
  Conv2d dw_conv;
  DirectionalHeads scan;
  LayerNorm ln_out;
  Conv2d out_proj;
};

/// Cross state-space block. Both inputs are projected and split into a
/// stream and a gate; the selection (B, C, delta) comes from the n-branch
/// while the x-branch is the scanned stream.
struct CSSMBlock {
  CSSMBlock() = default;
  CSSMBlock(ParamBuilder pb, const SSMConfig& cfg);

  Tensor operator()(const Tensor& f_n, const Tensor& f_x) const;

  /// Intermediate values of one forward pass, for inspection in tests.
  struct Trace {
    Tensor stream_n, stream_x, gate_n, gate_x, scanned, gated, projected, output;
  };
  Trace trace(const Tensor& f_n, const Tensor& f_x) const;

  SSMConfig cfg;
  Tensor in_proj;  // (2 d_inner, d_model), shared by both inputs
  Conv2d dw_conv_n, dw_conv_x;
  DirectionalHeads scan;
  LayerNorm ln_scan;
  Conv2d out_proj;
  LayerNorm ln_residual;
  Conv2d fuse_conv;
  ChannelAttention ca;
  Tensor residual_scale, skip_scale;  // s and s', length d_model
};

}  // namespace multicos
