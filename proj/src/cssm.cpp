#include "multicos/cssm.hpp"

namespace multicos {

DirectionalHeads::DirectionalHeads(ParamBuilder pb, const SSMConfig& cfg) {
  if (cfg.per_direction) {
    for (ScanDirection dir : kAllDirections) {
      heads.emplace_back(pb.scope(std::string("head_") + std::string(direction_name(dir))), cfg.d_inner,
                         cfg.state_dim, cfg.discretization);
    }
  } else {
    heads.emplace_back(pb.scope("head"), cfg.d_inner, cfg.state_dim, cfg.discretization);
  }
}

const SelectiveSSM& DirectionalHeads::operator[](ScanDirection dir) const {
  return heads.size() == 1 ? heads.front() : heads[static_cast<size_t>(dir)];
}

ChannelAttention::ChannelAttention(ParamBuilder pb, int64_t channels, int64_t reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw InvalidReduction(std::to_string(channels) + " channels are not divisible by reduction " +
                           std::to_string(reduction));
  }
  squeeze = Conv2d(pb.scope("squeeze"), channels, channels / reduction, 1);
  excite = Conv2d(pb.scope("excite"), channels / reduction, channels, 1);
}

Tensor ChannelAttention::weights(const Tensor& x) const { return sigmoid(excite(relu(squeeze(global_avg_pool(x))))); }

Tensor ChannelAttention::operator()(const Tensor& x) const { return x * weights(x); }

namespace {

Conv2d depthwise(ParamBuilder pb, const SSMConfig& cfg) {
  return Conv2d(pb, cfg.d_inner, cfg.d_inner, cfg.d_conv, Conv2d::same(cfg.d_conv, 1, cfg.d_inner));
}

void check_config(const SSMConfig& cfg) {
  if (cfg.d_model < 1 || cfg.d_inner < 1 || cfg.state_dim < 1 || cfg.d_conv < 1 || cfg.d_conv % 2 == 0) {
    throw ConfigError("state-space block widths must be positive and the depthwise kernel odd");
  }
}

}  // namespace

SSMBlock::SSMBlock(ParamBuilder pb, const SSMConfig& c) : cfg(c) {
  check_config(cfg);
  ln_in = LayerNorm(pb.scope("ln_in"), cfg.d_model);
  in_proj = pb.uniform("in_proj.weight", {2 * cfg.d_inner, cfg.d_model}, cfg.d_model);
  dw_conv = depthwise(pb.scope("dw_conv"), cfg);
  scan = DirectionalHeads(pb.scope("scan"), cfg);
  ln_out = LayerNorm(pb.scope("ln_out"), cfg.d_inner);
  out_proj = Conv2d(pb.scope("out_proj"), cfg.d_inner, cfg.d_model, 1);
}

Tensor SSMBlock::operator()(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg.d_model) {
    throw ShapeMismatch("state-space block expects " + std::to_string(cfg.d_model) + " channels, got " +
                        shape_str(x.shape()));
  }
  Tensor projected = pointwise(ln_in(x), in_proj);
  Tensor stream = silu(dw_conv(slice_channels(projected, 0, cfg.d_inner)));
  Tensor gate = slice_channels(projected, cfg.d_inner, cfg.d_inner);
  Tensor y = multi_direction_ssm(stream, [this](const Tensor& seq, ScanDirection dir) { return scan[dir](seq, seq); });
  return x + out_proj(ln_out(y) * silu(gate));
}

CSSMBlock::CSSMBlock(ParamBuilder pb, const SSMConfig& c) : cfg(c) {
  check_config(cfg);
  in_proj = pb.uniform("in_proj.weight", {2 * cfg.d_inner, cfg.d_model}, cfg.d_model);
  dw_conv_n = depthwise(pb.scope("dw_conv_n"), cfg);
  dw_conv_x = depthwise(pb.scope("dw_conv_x"), cfg);
  scan = DirectionalHeads(pb.scope("scan"), cfg);
  ln_scan = LayerNorm(pb.scope("ln_scan"), cfg.d_inner);
  out_proj = Conv2d(pb.scope("out_proj"), cfg.d_inner, cfg.d_model, 1);
  ln_residual = LayerNorm(pb.scope("ln_residual"), cfg.d_model);
  fuse_conv = Conv2d(pb.scope("fuse_conv"), cfg.d_model, cfg.d_model, 3, Conv2d::same(3));
  ca = ChannelAttention(pb.scope("ca"), cfg.d_model, cfg.ca_reduction);
  residual_scale = pb.constant("residual_scale", {cfg.d_model}, 1.0);
  skip_scale = pb.constant("skip_scale", {cfg.d_model}, 1.0);
}

CSSMBlock::Trace CSSMBlock::trace(const Tensor& f_n, const Tensor& f_x) const {
  if (f_n.shape() != f_x.shape() || f_n.rank() != 4 || f_n.dim(1) != cfg.d_model) {
    throw ShapeMismatch("cross block inputs " + shape_str(f_n.shape()) + " and " + shape_str(f_x.shape()) +
                        " must agree and carry " + std::to_string(cfg.d_model) + " channels");
  }
  const int64_t d = cfg.d_inner;
  Trace t;
  Tensor pn = pointwise(f_n, in_proj);
  Tensor px = pointwise(f_x, in_proj);
  t.gate_n = slice_channels(pn, d, d);
  t.gate_x = slice_channels(px, d, d);
  t.stream_n = silu(dw_conv_n(slice_channels(pn, 0, d)));
  t.stream_x = silu(dw_conv_x(slice_channels(px, 0, d)));
  t.scanned = multi_direction_scan({t.stream_n, t.stream_x}, [this](const std::vector<Tensor>& s, ScanDirection dir) {
    return scan[dir](s[0], s[1]);
  });
  t.gated = ln_scan(t.scanned) * silu(t.gate_n) * silu(t.gate_x);
  t.projected = out_proj(t.gated);
  t.output = ca(fuse_conv(ln_residual(t.projected + residual_scale * f_n))) + skip_scale * f_n;
  return t;
}

Tensor CSSMBlock::operator()(const Tensor& f_n, const Tensor& f_x) const { return trace(f_n, f_x).output; }

}  // namespace multicos
