#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "multicos/model.hpp"

namespace multicos {

struct DataConfig {
  /// Dataset directory written by gen-data; empty means generate in memory.
  std::string root;
  int64_t train = 256;
  int64_t test = 64;
  int64_t translation = 256;
  double kappa = 1.0;
  double snr = 10.0;
  /// Translation pairs are ordinary scenes; their content need not be hidden.
  double translation_kappa = 0.0;
  uint64_t seed = 7;
  /// Fraction of the aux map kept by the top-left crop (1 keeps it aligned).
  double crop_fraction = 1.0;
};

struct RunConfig {
  int64_t image_size = 64;
  std::array<int64_t, kLevels> widths{16, 24, 32, 48, 64};
  std::array<int64_t, kCKLerStages> translator_widths{16, 32, 48, 64};
  int64_t d_model = 32;
  int64_t d_inner = 64;
  int64_t d_conv = 3;
  int64_t state_dim = 8;
  double lr = 1e-3;
  int64_t batch = 8;
  int64_t steps = 1500;
  uint64_t seed = 0;

  bool rgb_only = false;
  bool enable_lsfm = true;
  bool enable_ffm = true;
  bool enable_ssfm = true;
  bool enable_ssm = true;
  bool enable_cssm = true;
  bool enable_gate = true;
  bool per_channel_gate = false;
  bool enable_ckler = false;
  bool enable_injection = false;
  std::string aux_source = "real";
  std::string discretization = "taylor";

  DataConfig data;
};

/// Throws ConfigError on non-positive extents or inconsistent flags.
void validate(const RunConfig& cfg);
ModelConfig model_config(const RunConfig& cfg);

/// The desk-scale defaults.
RunConfig toy_profile();
/// The published full-scale settings (448 px, d_m 96, d 192, batch 16, lr
/// 1e-4 decaying to 5e-6 over 160 epochs). Recorded for reference; far too
/// slow for this implementation on a CPU.
RunConfig full_scale_profile();

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep the values of `base`; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, const RunConfig& base = toy_profile());
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = toy_profile());
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace multicos
