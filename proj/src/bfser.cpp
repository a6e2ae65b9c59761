#include "multicos/bfser.hpp"

#include "multicos/ops.hpp"

namespace multicos {

namespace {

Tensor resize_like(const Tensor& x, const Tensor& ref) {
  if (x.dim(2) == ref.dim(2) && x.dim(3) == ref.dim(3)) return x;
  return interpolate(x, ref.dim(2), ref.dim(3), InterpMode::kBilinear);
}

std::string level_name(const char* stem, int k) { return std::string(stem) + std::to_string(k); }

}  // namespace

void validate(const BFSerConfig& cfg) {
  if (cfg.rgb_channels < 1 || cfg.aux_channels < 1) throw ConfigError("input channel counts must be positive");
  for (int64_t w : cfg.widths)
    if (w < 1) throw ConfigError("encoder widths must be positive");
  for (int64_t r : cfg.aspp_rates)
    if (r < 1) throw ConfigError("ASPP rates must be positive");
}

EncoderStage::EncoderStage(ParamBuilder pb, int64_t in, int64_t out)
    : down(pb.scope("down"), in, out, 3, 2), refine(pb.scope("refine"), out, out) {}

Tensor EncoderStage::operator()(const Tensor& x, bool training) const { return refine(down(x, training), training); }

Encoder::Encoder(ParamBuilder pb, int64_t in_channels, const std::array<int64_t, kLevels>& widths, bool with_embedding) {
  if (with_embedding) embedding = Conv2d(pb.scope("embed"), in_channels, in_channels, 3, Conv2d::same(3));
  int64_t c = in_channels;
  for (int k = 0; k < kLevels; ++k) {
    stages.emplace_back(pb.scope(level_name("stage", k)), c, widths[static_cast<size_t>(k)]);
    c = widths[static_cast<size_t>(k)];
  }
}

Tensor Encoder::embed(const Tensor& x) const { return embedding ? (*embedding)(x) : x; }

std::vector<Tensor> Encoder::operator()(const Tensor& x, bool training) const {
  std::vector<Tensor> levels;
  Tensor h = embed(x);
  for (const auto& s : stages) {
    h = s(h, training);
    levels.push_back(h);
  }
  return levels;
}

ASPP::ASPP(ParamBuilder pb, int64_t in, int64_t width, const std::array<int64_t, 3>& rates) {
  for (int64_t r : rates) {
    Conv2dOptions o = Conv2d::same(3, r);
    o.padding_mode = PaddingMode::kReplicate;
    branches.emplace_back(pb.scope("rate" + std::to_string(r)), in, width, 3, o);
  }
  pool_branch = Conv2d(pb.scope("pool"), in, width, 1);
  reduce = Conv2d(pb.scope("reduce"), width * static_cast<int64_t>(rates.size() + 1), width, 1);
  head = Conv2d(pb.scope("head"), width, 1, 1);
}

Tensor ASPP::operator()(const Tensor& x) const {
  std::vector<Tensor> parts;
  for (const auto& b : branches) parts.push_back(leaky_relu(b(x)));
  Tensor pooled = relu(pool_branch(global_avg_pool(x)));
  parts.push_back(interpolate(pooled, x.dim(2), x.dim(3), InterpMode::kNearest));
  return head(leaky_relu(reduce(concat(parts))));
}

Decoder::Decoder(ParamBuilder pb, int64_t w) : width(w) {
  for (int k = 1; k <= kFusedLevels; ++k) {
    ParamBuilder s = pb.scope(level_name("level", k));
    const int64_t in = k == kFusedLevels ? 1 + w : w + 1 + w;
    stages.push_back(Stage{ConvBlock(s.scope("first"), in, w), ConvBlock(s.scope("second"), w, w),
                           Conv2d(s.scope("mask_head"), w, 1, 1), Conv2d(s.scope("edge_head"), w, 1, 1)});
  }
}

SegmentationOutput Decoder::operator()(const Tensor& coarse, const std::vector<Tensor>& skips, bool training) const {
  if (skips.size() != static_cast<size_t>(kFusedLevels)) {
    throw ShapeMismatch("decoder expects " + std::to_string(kFusedLevels) + " skips, got " +
                        std::to_string(skips.size()));
  }
  // Coarser levels may not be larger than finer ones; level 4 matches the
  // coarse map exactly.
  for (int k = 0; k < kFusedLevels; ++k) {
    const Tensor& s = skips[static_cast<size_t>(k)];
    const bool top = k + 1 == kFusedLevels;
    const Shape& ref = top ? coarse.shape() : skips[static_cast<size_t>(k + 1)].shape();
    const bool spatial_ok = top ? (s.dim(2) == ref[2] && s.dim(3) == ref[3]) : (s.dim(2) >= ref[2] && s.dim(3) >= ref[3]);
    if (s.rank() != 4 || s.dim(1) != width || !spatial_ok || s.dim(0) != coarse.dim(0)) {
      throw ShapeMismatch("decoder skip " + std::to_string(k + 1) + " has shape " + shape_str(s.shape()));
    }
  }
  SegmentationOutput out;
  out.masks.resize(kLevels);
  out.edges.resize(kFusedLevels);
  out.masks[kLevels - 1] = coarse;
  Tensor state;
  for (int k = kFusedLevels; k >= 1; --k) {
    const Stage& st = stages[static_cast<size_t>(k - 1)];
    const Tensor& skip = skips[static_cast<size_t>(k - 1)];
    Tensor in = k == kFusedLevels ? concat({coarse, skip})
                                  : concat({resize_like(state, skip), resize_like(out.masks[static_cast<size_t>(k)], skip), skip});
    state = st.second(st.first(in, training), training);
    out.masks[static_cast<size_t>(k - 1)] = st.mask_head(state);
    out.edges[static_cast<size_t>(k - 1)] = st.edge_head(state);
  }
  return out;
}

BFSer::BFSer(ParamBuilder pb, const BFSerConfig& c) : cfg(c) {
  validate(cfg);
  const int64_t dm = cfg.ssm.d_model;
  // The image encoder is built first so its initial values do not depend on
  // the mode.
  enc_i = Encoder(pb.scope("enc_i"), cfg.rgb_channels, cfg.widths, false);
  lsfm.resize(kLevels);
  ffm.resize(kLevels);
  ssfm.resize(kLevels);
  skip_proj.resize(kLevels);
  if (cfg.rgb_only) {
    for (int k = 1; k <= kFusedLevels; ++k)
      skip_proj[static_cast<size_t>(k)] = ConvBlock(pb.scope(level_name("skip", k)), cfg.widths[static_cast<size_t>(k)], dm);
  } else {
    enc_u = Encoder(pb.scope("enc_u"), cfg.aux_channels, cfg.widths, true);
    for (int k = 1; k <= kFusedLevels; ++k) {
      const int64_t w = cfg.widths[static_cast<size_t>(k)];
      if (cfg.lsfm) lsfm[static_cast<size_t>(k)] = LSFM(pb.scope(level_name("lsfm", k)), w);
      if (cfg.ffm && k < kFusedLevels) ffm[static_cast<size_t>(k)] = FFM(pb.scope(level_name("ffm", k)), w);
      ssfm[static_cast<size_t>(k)] = SSFM(pb.scope(level_name("ssfm", k)), w, cfg.ssm, cfg.fusion, cfg.ssfm);
    }
  }
  aspp = ASPP(pb.scope("aspp"), cfg.widths[kFusedLevels], dm, cfg.aspp_rates);
  decoder = Decoder(pb.scope("decoder"), dm);
}

Tensor BFSer::fuse_latent(int level, const Tensor& f_i, const Tensor& f_u, bool training) const {
  if (!cfg.lsfm) {
    if (f_i.shape() != f_u.shape()) {
      throw ShapeMismatch("latent fusion inputs " + shape_str(f_i.shape()) + " and " + shape_str(f_u.shape()));
    }
    return f_i + f_u;
  }
  return lsfm[static_cast<size_t>(level)](f_i, f_u, training);
}

SegmentationOutput BFSer::forward(const Tensor& x_i, const Tensor& x_u, const ForwardOptions& opt) const {
  if (x_i.rank() != 4 || x_i.dim(1) != cfg.rgb_channels || x_i.dim(2) < kMinSide || x_i.dim(3) < kMinSide) {
    throw ShapeMismatch("image input " + shape_str(x_i.shape()) + " needs " + std::to_string(cfg.rgb_channels) +
                        " channels and sides of at least " + std::to_string(kMinSide));
  }
  const bool training = opt.training;
  DataflowTrace local;
  DataflowTrace& t = opt.trace ? *opt.trace : local;
  t = DataflowTrace{};
  t.f_i = enc_i(x_i, training);
  t.skips.resize(kFusedLevels);

  if (cfg.rgb_only) {
    for (int k = 1; k <= kFusedLevels; ++k)
      t.skips[static_cast<size_t>(k - 1)] = skip_proj[static_cast<size_t>(k)](t.f_i[static_cast<size_t>(k)], training);
    t.coarse = aspp(t.f_i[kFusedLevels]);
    return decoder(t.coarse, t.skips, training);
  }

  if (x_u.rank() != 4 || x_u.dim(0) != x_i.dim(0) || x_u.dim(1) != cfg.aux_channels || x_u.dim(2) != x_i.dim(2) ||
      x_u.dim(3) != x_i.dim(3)) {
    throw ShapeMismatch("aux input " + shape_str(x_u.shape()) + " does not conform to image " +
                        shape_str(x_i.shape()));
  }
  t.f_u.resize(kLevels);
  t.f_x.resize(kLevels);
  t.f_u_prime.resize(kLevels);
  t.stage_input_u.resize(kLevels);

  t.stage_input_u[0] = enc_u.embed(x_u);
  t.f_u[0] = enc_u.stages[0](t.stage_input_u[0], training);
  t.stage_input_u[1] = t.f_u[0];
  t.f_u[1] = enc_u.stages[1](t.f_u[0], training);
  for (int k = 1; k < kFusedLevels; ++k) {
    const size_t s = static_cast<size_t>(k);
    t.f_x[s] = fuse_latent(k, t.f_i[s], t.f_u[s], training);
    t.f_u_prime[s] = cfg.ffm ? ffm[s](t.f_u[s], t.f_x[s], training) : t.f_u[s];
    t.stage_input_u[s + 1] = t.f_u_prime[s];
    t.f_u[s + 1] = enc_u.stages[s + 1](t.f_u_prime[s], training);
  }
  const size_t top = kFusedLevels;
  t.f_u_prime[top] = t.f_u[top];
  Tensor source = opt.level4_source ? opt.level4_source(t.f_u[top]) : t.f_u[top];
  t.f_x[top] = fuse_latent(kFusedLevels, t.f_i[top], source, training);

  for (int k = 1; k <= kFusedLevels; ++k) {
    const size_t s = static_cast<size_t>(k);
    t.skips[s - 1] = cfg.ssfm ? ssfm[s](t.f_i[s], t.f_u_prime[s], training)
                              : ssfm[s].concat_only(t.f_i[s], t.f_u_prime[s], training);
  }
  t.coarse = aspp(t.f_x[top]);
  return decoder(t.coarse, t.skips, training);
}

}  // namespace multicos
