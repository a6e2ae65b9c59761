#include "multicos/ckler.hpp"

#include <string>

#include "multicos/losses.hpp"

namespace multicos {

namespace {

Tensor resize_to(const Tensor& x, int64_t h, int64_t w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  return interpolate(x, h, w, InterpMode::kBilinear);
}

}  // namespace

ResidualBlock::ResidualBlock(ParamBuilder pb, int64_t c)
    : inner(pb.scope("inner"), c, c), outer(pb.scope("outer"), c, c, 3, Conv2d::same(3)) {}

Tensor ResidualBlock::operator()(const Tensor& x, bool training) const { return x + outer(inner(x, training)); }

CKLer::CKLer(ParamBuilder pb, const CKLerConfig& c) : cfg(c) {
  for (int64_t w : cfg.widths) {
    if (w < 1) throw ConfigError("translator widths must be positive");
  }
  if (cfg.in_channels < 1 || cfg.out_channels < 1) throw ConfigError("translator channels must be positive");
  const auto& w = cfg.widths;
  stem = ConvBlock(pb.scope("stem"), cfg.in_channels, w[0]);
  int64_t prev = w[0];
  for (int s = 0; s < kCKLerStages; ++s) {
    ParamBuilder sp = pb.scope("enc" + std::to_string(s + 1));
    encoder.push_back(Down{ConvBlock(sp.scope("down"), prev, w[static_cast<size_t>(s)], 3, 2),
                           ResidualBlock(sp.scope("res"), w[static_cast<size_t>(s)])});
    prev = w[static_cast<size_t>(s)];
  }
  // decoder[s] lifts stage s + 1 (or z) to the extent of stage s, whose
  // output it concatenates; stage 0 is the stem.
  decoder.resize(kCKLerStages);
  for (int s = kCKLerStages - 1; s >= 0; --s) {
    const int64_t target = s == 0 ? w[0] : w[static_cast<size_t>(s - 1)];
    ParamBuilder sp = pb.scope("dec" + std::to_string(s));
    decoder[static_cast<size_t>(s)] = Up{ConvBlock(sp.scope("merge"), prev + target, target), ResidualBlock(sp.scope("res"), target)};
    prev = target;
  }
  head = Conv2d(pb.scope("head"), w[0], cfg.out_channels, 1);
}

Tensor CKLer::encode(const Tensor& x_i, bool training, std::vector<Tensor>* skips) const {
  if (x_i.rank() != 4 || x_i.dim(1) != cfg.in_channels) {
    throw ShapeMismatch("translator input must be (B, " + std::to_string(cfg.in_channels) + ", H, W), got " +
                        shape_str(x_i.shape()));
  }
  Tensor x = stem(x_i, training);
  if (skips) skips->push_back(x);
  for (const Down& d : encoder) {
    x = d.res(d.down(x, training), training);
    if (skips) skips->push_back(x);
  }
  return x;
}

Translation CKLer::translate(const Tensor& x_i, bool training) const {
  std::vector<Tensor> skips;
  Tensor z = encode(x_i, training, &skips);
  Tensor x = z;
  for (int s = kCKLerStages - 1; s >= 0; --s) {
    const Tensor& skip = skips[static_cast<size_t>(s)];
    const Up& u = decoder[static_cast<size_t>(s)];
    x = u.res(u.merge(concat_channels(resize_to(x, skip.dim(2), skip.dim(3)), skip), training), training);
  }
  return Translation{sigmoid(head(x)), z};
}

Tensor translation_loss(const Tensor& x_u_hat, const Tensor& e_u) { return l1_loss(x_u_hat, e_u); }

KnowledgeInjection::KnowledgeInjection(ParamBuilder pb, int64_t z_channels, int64_t level4_channels)
    : proj(pb.scope("proj"), z_channels, level4_channels, 1), ffm(pb.scope("ffm"), level4_channels) {}

Tensor KnowledgeInjection::project(const Tensor& z, int64_t h, int64_t w) const { return resize_to(proj(z), h, w); }

Tensor KnowledgeInjection::operator()(const Tensor& f_u4, const Tensor& z, bool training) const {
  if (f_u4.rank() != 4 || z.rank() != 4 || f_u4.dim(0) != z.dim(0) || f_u4.dim(1) != proj.weight.dim(0)) {
    throw ShapeMismatch("injection expects f_u^4 (B, " + std::to_string(proj.weight.dim(0)) + ", h, w) and z of the same batch, got " +
                        shape_str(f_u4.shape()) + " and " + shape_str(z.shape()));
  }
  if (z.dim(1) != proj.weight.dim(1)) throw ShapeMismatch("knowledge vector has " + std::to_string(z.dim(1)) + " channels");
  return ffm(f_u4, project(z, f_u4.dim(2), f_u4.dim(3)), training);
}

}  // namespace multicos
