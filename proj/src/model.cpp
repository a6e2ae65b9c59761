#include "multicos/model.hpp"

#include <random>

namespace multicos {

std::string to_string(AuxSource s) {
  switch (s) {
    case AuxSource::kReal: return "real";
    case AuxSource::kPseudo: return "pseudo";
    case AuxSource::kZero: return "zero";
  }
  return "real";
}

AuxSource aux_source_from_string(const std::string& s) {
  if (s == "real") return AuxSource::kReal;
  if (s == "pseudo") return AuxSource::kPseudo;
  if (s == "zero") return AuxSource::kZero;
  throw ConfigError("aux source must be real, pseudo or zero, got '" + s + "'");
}

void validate(const ModelConfig& cfg) {
  validate(cfg.bfser);
  if (cfg.enable_injection && !cfg.enable_ckler) throw ConfigError("knowledge injection requires the translator");
  if (cfg.enable_injection && cfg.bfser.rgb_only) throw ConfigError("knowledge injection requires dual mode");
  if (cfg.aux_source == AuxSource::kPseudo && !cfg.enable_ckler) {
    throw ConfigError("a pseudo auxiliary input requires the translator");
  }
  if (cfg.enable_ckler) {
    if (cfg.ckler.in_channels != cfg.bfser.rgb_channels || cfg.ckler.out_channels != cfg.bfser.aux_channels) {
      throw ConfigError("translator channels must map the image to the auxiliary modality");
    }
  }
}

uint64_t translator_seed(uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

MultiCOS::MultiCOS(ParamStore& store, uint64_t seed, const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  std::mt19937_64 rng(seed);
  bfser_ = BFSer(ParamBuilder(store, rng, "bfser"), cfg_.bfser);
  if (cfg_.enable_ckler) {
    std::mt19937_64 trng(translator_seed(seed));
    ParamBuilder pb(store, trng, "ckler");
    ckler_ = CKLer(pb, cfg_.ckler);
    if (cfg_.enable_injection) inject_ = KnowledgeInjection(pb.scope("inject"), cfg_.ckler.widths.back(), cfg_.bfser.widths[kFusedLevels]);
  }
}

ModelOutput MultiCOS::forward(const Tensor& x_i, const Tensor& x_u, bool training) const {
  ModelOutput out;
  const bool translate = cfg_.enable_ckler && (cfg_.aux_source == AuxSource::kPseudo || cfg_.enable_injection);
  if (translate) out.translation = ckler_.translate(x_i, training);

  if (cfg_.bfser.rgb_only) {
    out.aux = x_u;
  } else {
    switch (cfg_.aux_source) {
      case AuxSource::kReal:
        if (x_u.rank() != 4) throw MissingModality("dual mode needs an auxiliary input");
        out.aux = x_u;
        break;
      case AuxSource::kPseudo: out.aux = out.translation->x_u; break;
      case AuxSource::kZero:
        out.aux = Tensor::zeros({x_i.dim(0), cfg_.bfser.aux_channels, x_i.dim(2), x_i.dim(3)});
        break;
    }
  }

  ForwardOptions opt;
  opt.training = training;
  if (cfg_.enable_injection) {
    const Tensor z = out.translation->z;
    opt.level4_source = [this, z, training](const Tensor& f_u4) { return inject_(f_u4, z, training); };
  }
  out.seg = bfser_.forward(x_i, out.aux, opt);
  return out;
}

Tensor MultiCOS::predict(const Tensor& x_i, const Tensor& x_u) const {
  NoGradGuard guard;
  const ModelOutput out = forward(x_i, x_u, false);
  return sigmoid(interpolate(out.seg.masks[0], x_i.dim(2), x_i.dim(3), InterpMode::kBilinear));
}

}  // namespace multicos
