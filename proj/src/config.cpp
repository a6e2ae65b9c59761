#include "multicos/config.hpp"

#include <fstream>

#include "multicos/errors.hpp"

namespace multicos {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, root, train, test, translation, kappa, snr,
                                                translation_kappa, seed, crop_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, image_size, widths, translator_widths, d_model, d_inner,
                                                d_conv, state_dim, lr, batch, steps, seed, rgb_only, enable_lsfm,
                                                enable_ffm, enable_ssfm, enable_ssm, enable_cssm, enable_gate,
                                                per_channel_gate, enable_ckler, enable_injection, aux_source,
                                                discretization, data)

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
    if (it.value().is_object()) reject_unknown(it.value(), known.at(it.key()), where + it.key() + ".");
  }
}

Discretization discretization_from_string(const std::string& s) {
  if (s == "taylor") return Discretization::kTaylor;
  if (s == "zoh") return Discretization::kZoh;
  throw ConfigError("discretization must be taylor or zoh, got '" + s + "'");
}

}  // namespace

void validate(const RunConfig& c) {
  auto positive = [](int64_t v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(c.image_size, "image_size");
  positive(c.d_model, "d_model");
  positive(c.d_inner, "d_inner");
  positive(c.d_conv, "d_conv");
  positive(c.state_dim, "state_dim");
  positive(c.batch, "batch");
  if (c.steps < 0) throw ConfigError("steps must not be negative");
  for (int64_t w : c.widths) positive(w, "encoder width");
  for (int64_t w : c.translator_widths) positive(w, "translator width");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.image_size < kMinSide) {
    throw InvalidDimensions("image_size must be at least " + std::to_string(kMinSide) + ", got " +
                            std::to_string(c.image_size));
  }
  positive(c.data.train, "data.train");
  if (c.data.test < 0 || c.data.translation < 0) throw ConfigError("data split sizes must not be negative");
  if (c.enable_ckler && c.data.translation < 1) throw ConfigError("the translator needs translation pairs");
  if (!(c.data.crop_fraction > 0.0 && c.data.crop_fraction <= 1.0)) throw ConfigError("crop_fraction must lie in (0, 1]");
  if (!(c.data.kappa >= 0.0 && c.data.kappa <= 1.0) || !(c.data.translation_kappa >= 0.0 && c.data.translation_kappa <= 1.0)) {
    throw ConfigError("kappa must lie in [0, 1]");
  }
  if (!(c.data.snr > 0.0)) throw ConfigError("snr must be positive");
  validate(model_config(c));
}

ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  BFSerConfig& b = m.bfser;
  b.widths = c.widths;
  b.ssm.d_model = c.d_model;
  b.ssm.d_inner = c.d_inner;
  b.ssm.d_conv = c.d_conv;
  b.ssm.state_dim = c.state_dim;
  b.ssm.discretization = discretization_from_string(c.discretization);
  b.rgb_only = c.rgb_only;
  b.lsfm = c.enable_lsfm;
  b.ffm = c.enable_ffm;
  b.ssfm = c.enable_ssfm;
  b.fusion.ssm = c.enable_ssm;
  b.fusion.cssm = c.enable_cssm;
  b.fusion.gate = c.enable_gate;
  b.fusion.per_channel_gate = c.per_channel_gate;
  m.ckler.widths = c.translator_widths;
  m.enable_ckler = c.enable_ckler;
  m.enable_injection = c.enable_injection;
  m.aux_source = aux_source_from_string(c.aux_source);
  return m;
}

RunConfig toy_profile() { return RunConfig{}; }

RunConfig full_scale_profile() {
  RunConfig c;
  c.image_size = 448;
  c.d_model = 96;
  c.d_inner = 192;
  c.d_conv = 3;
  c.lr = 1e-4;
  c.batch = 16;
  return c;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = cfg;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j, const RunConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json merged = to_json(base);
  reject_unknown(j, merged, "");
  merged.merge_patch(j);
  try {
    return merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, base);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

}  // namespace multicos
