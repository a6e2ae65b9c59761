#include "multicos/fusion.hpp"

namespace multicos {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + " inputs " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

}  // namespace

LSFM::LSFM(ParamBuilder pb, int64_t c)
    : block_gate(pb.scope("block_gate"), c, c),
      block_add(pb.scope("block_add"), c, c),
      gate_conv(pb.scope("gate_conv"), c, c, 1),
      add_conv(pb.scope("add_conv"), c, c, 1) {}

Tensor LSFM::operator()(const Tensor& f_i, const Tensor& f_u, bool training) const {
  require_same(f_i, f_u, "latent fusion");
  return f_i * sigmoid(gate_conv(block_gate(f_u, training))) + add_conv(block_add(f_u, training));
}

FFM::FFM(ParamBuilder pb, int64_t c)
    : guide(pb.scope("guide"), c, c),
      out(pb.scope("out"), c, c),
      alpha_conv(pb.scope("alpha_conv"), 2 * c, c, 1),
      modulation_conv(pb.scope("modulation_conv"), c, c, 1) {}

Tensor FFM::operator()(const Tensor& f_u, const Tensor& f_x, bool training) const {
  require_same(f_u, f_x, "feedback");
  Tensor g = guide(f_x, training);
  Tensor alpha = sigmoid(alpha_conv(concat_channels(f_u, g)));
  return out(f_u * alpha * modulation_conv(g) + f_u, training);
}

GateWeights::GateWeights(ParamBuilder pb, int64_t c, bool per_channel)
    : signal(pb.scope("signal"), c, c, 1), lambda(pb.scope("lambda"), 2 * c, per_channel ? c : 1, 1) {}

Tensor GateWeights::operator()(const Tensor& x) const {
  Tensor d1 = leaky_relu(signal(x));
  Tensor d2 = leaky_relu(signal(x + d1));
  return sigmoid(lambda(concat_channels(d1, d2)));
}

SSFM::SSFM(ParamBuilder pb, int64_t channels, const SSMConfig& cfg, FusionSwitches s, bool full) : sw(s) {
  const int64_t dm = cfg.d_model;
  proj_i = Conv2d(pb.scope("proj_i"), channels, dm, 1);
  proj_u = Conv2d(pb.scope("proj_u"), channels, dm, 1);
  concat_block = ConvBlock(pb.scope("concat_block"), 2 * dm, dm);
  if (!full) return;
  if (sw.ssm) {
    ssm_i = SSMBlock(pb.scope("ssm_i"), cfg);
    ssm_u = SSMBlock(pb.scope("ssm_u"), cfg);
    ssm_x = SSMBlock(pb.scope("ssm_x"), cfg);
  }
  if (sw.cssm) {
    cross_i = CSSMBlock(pb.scope("cross_i"), cfg);
    cross_u = CSSMBlock(pb.scope("cross_u"), cfg);
  }
  if (sw.gate) gate = GateWeights(pb.scope("gate"), dm, sw.per_channel_gate);
  merge_i = ConvBlock(pb.scope("merge_i"), dm, dm);
  merge_u = ConvBlock(pb.scope("merge_u"), dm, dm);
  merge_out = ConvBlock(pb.scope("merge_out"), dm, dm);
}

Tensor SSFM::concat_only(const Tensor& f_i, const Tensor& f_u_prime, bool training) const {
  require_same(f_i, f_u_prime, "state-space fusion");
  return concat_block(concat_channels(proj_i(f_i), proj_u(f_u_prime)), training);
}

Tensor SSFM::merge(const Tensor& ci, const Tensor& cu, const Tensor& x, const Tensor& g, bool training) const {
  return merge_out(merge_i(g * ci + x, training) + merge_u((1.0 - g) * cu + x, training), training);
}

SSFM::Trace SSFM::trace(const Tensor& f_i, const Tensor& f_u_prime, bool training) const {
  require_same(f_i, f_u_prime, "state-space fusion");
  Trace t;
  t.proj_i = proj_i(f_i);
  t.proj_u = proj_u(f_u_prime);
  Tensor joint = concat_block(concat_channels(t.proj_i, t.proj_u), training);
  if (sw.ssm) {
    t.tilde_i = ssm_i(t.proj_i);
    t.tilde_u = ssm_u(t.proj_u);
    t.tilde_x = ssm_x(joint);
  } else {
    t.tilde_i = t.proj_i;
    t.tilde_u = t.proj_u;
    t.tilde_x = joint;
  }
  if (sw.cssm) {
    t.cross_i = cross_i(t.tilde_i, t.tilde_x);
    t.cross_u = cross_u(t.tilde_u, t.tilde_x);
  } else {
    t.cross_i = t.tilde_i;
    t.cross_u = t.tilde_u;
  }
  if (sw.gate) {
    t.gate = gate(t.tilde_x);
  } else {
    t.gate = Tensor({t.tilde_x.dim(0), 1, t.tilde_x.dim(2), t.tilde_x.dim(3)}, 0.5);
  }
  t.output = merge(t.cross_i, t.cross_u, t.tilde_x, t.gate, training);
  return t;
}

}  // namespace multicos
