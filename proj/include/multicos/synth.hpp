#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

/// One generated scene. Image tensors are (C, H, W) with values in [0, 1];
/// mask and edge are binary. Translation pairs leave mask and edge as
/// default (rank-0) tensors.
struct SyntheticSample {
  Tensor rgb, aux, mask, edge;
  uint64_t seed = 0;
  double kappa = 0.0;
  double snr = 0.0;
};

struct SynthParams {
  int64_t height = 64, width = 64;
  double kappa = 1.0;  // 1: foreground texture identical to the background in RGB
  double snr = 10.0;   // aux mask amplitude over noise standard deviation
};

/// Sample i depends only on (seed, i) and the parameters.
std::vector<SyntheticSample> generate(uint64_t seed, int64_t n, const SynthParams& p);
SyntheticSample generate_one(uint64_t seed, uint64_t index, const SynthParams& p);

/// 3x3 dilation minus 3x3 erosion; out-of-range neighbours are ignored.
Tensor morphological_gradient(const Tensor& mask);

/// Crops the top-left `crop_fraction` of the aux map and resizes it back
/// bilinearly; everything else is copied untouched.
SyntheticSample misalign(const SyntheticSample& s, double crop_fraction);

/// Mean boundary contrast: the channel-averaged difference between pixels
/// just inside the mask and pixels just outside it (4-neighbourhood).
double boundary_contrast(const Tensor& image, const Tensor& mask);

// Binary PGM (P5, one channel) and PPM (P6, three channels), 8-bit.
void write_image(const std::filesystem::path& path, const Tensor& chw);
Tensor read_image(const std::filesystem::path& path);
Tensor parse_image(const std::string& bytes);

/// Stacked mini-batch, (B, C, H, W) each.
struct Batch {
  Tensor rgb, aux, mask, edge;
  int64_t size() const { return rgb.dim(0); }
};

Batch make_batch(const std::vector<SyntheticSample>& samples, const std::vector<size_t>& indices);

struct SplitInfo {
  uint64_t seed = 0;
  int64_t count = 0;
  SynthParams params;
};

struct DatasetManifest {
  SplitInfo cos, translation;
};

/// Writes `<root>/{cos,translation}/{rgb,aux,mask,edge}/NNNNN.(ppm|pgm)` and
/// `<root>/manifest.json`.
void write_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                   const std::vector<SyntheticSample>& cos, const std::vector<SyntheticSample>& translation);
DatasetManifest read_manifest(const std::filesystem::path& root);
/// `split` is "cos" or "translation".
std::vector<SyntheticSample> read_split(const std::filesystem::path& root, const std::string& split);

}  // namespace multicos
