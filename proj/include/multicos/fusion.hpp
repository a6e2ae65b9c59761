#pragma once

#include "multicos/cssm.hpp"
#include "multicos/nn.hpp"

namespace multicos {

/// Latent-space fusion:
///   f_x = f_i * sigmoid(W1 C_a(f_u)) + W2 C_b(f_u)
struct LSFM {
  LSFM() = default;
  LSFM(ParamBuilder pb, int64_t channels);
  Tensor operator()(const Tensor& f_i, const Tensor& f_u, bool training) const;

  ConvBlock block_gate, block_add;
  Conv2d gate_conv, add_conv;
};

/// Feature feedback:
///   alpha = sigmoid(W1 [f_u, C1(f_x)])
///   f_u'  = C2(f_u * alpha * W2 C1(f_x) + f_u)
struct FFM {
  FFM() = default;
  FFM(ParamBuilder pb, int64_t channels);
  Tensor operator()(const Tensor& f_u, const Tensor& f_x, bool training) const;

  ConvBlock guide, out;
  Conv2d alpha_conv, modulation_conv;
};

/// Two-pass weighted gate. delta1 = F(x), delta2 = F(x + delta1) with one
/// shared F (1x1 conv + LeakyReLU); g = sigmoid(lambda [delta1, delta2] + mu).
/// lambda maps 2C channels to one (per-pixel gate) or to C (per-channel gate).
struct GateWeights {
  GateWeights() = default;
  GateWeights(ParamBuilder pb, int64_t channels, bool per_channel);
  Tensor operator()(const Tensor& fused) const;

  Conv2d signal;
  Conv2d lambda;  // its bias is mu
};

struct FusionSwitches {
  bool ssm = true;   // intra-modal state-space blocks
  bool cssm = true;  // cross blocks
  bool gate = true;  // learned gate; constant 0.5 when off
  bool per_channel_gate = false;
};

/// State-space fusion of one level. Inputs carry `channels`; the output
/// carries cfg.d_model.
struct SSFM {
  SSFM() = default;
  /// With `full` off only the projections and the concat block exist, which
  /// is all concat_only() needs.
  SSFM(ParamBuilder pb, int64_t channels, const SSMConfig& cfg, FusionSwitches sw, bool full = true);

  struct Trace {
    Tensor proj_i, proj_u, tilde_i, tilde_u, tilde_x, cross_i, cross_u, gate, output;
  };
  Trace trace(const Tensor& f_i, const Tensor& f_u_prime, bool training) const;
  Tensor operator()(const Tensor& f_i, const Tensor& f_u_prime, bool training) const {
    return trace(f_i, f_u_prime, training).output;
  }

  /// C(C(g F_i + x) + C((1 - g) F_u + x)).
  Tensor merge(const Tensor& cross_i, const Tensor& cross_u, const Tensor& tilde_x, const Tensor& gate,
               bool training) const;

  /// The concat block alone on the projected inputs; the fallback skip when
  /// state-space fusion is disabled.
  Tensor concat_only(const Tensor& f_i, const Tensor& f_u_prime, bool training) const;

  FusionSwitches sw;
  Conv2d proj_i, proj_u;
  SSMBlock ssm_i, ssm_u, ssm_x;
  ConvBlock concat_block;
  CSSMBlock cross_i, cross_u;
  GateWeights gate;
  ConvBlock merge_i, merge_u, merge_out;
};

}  // namespace multicos
