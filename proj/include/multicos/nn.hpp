#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "multicos/ops.hpp"
#include "multicos/serialize.hpp"

namespace multicos {

/// Ordered registry of named parameters and buffers. Names are dot-separated
/// paths ("bfser.enc_i.stage0.conv.weight") and are stable across versions;
/// they are the checkpoint keys.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  Tensor add(std::string name, Tensor t, bool trainable);
  const std::vector<Entry>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor get(const std::string& name) const;

  void zero_grad();
  NamedTensors snapshot() const;
  /// Copies values of matching names into the registered tensors. Every
  /// registered entry must be present when `strict`.
  void load(const NamedTensors& values, bool strict = true);
  int64_t parameter_count() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

/// Creates parameters under a name prefix. Weights are drawn from
/// uniform(+-1/sqrt(fan_in)); everything else has a fixed value.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, std::mt19937_64& rng, std::string prefix = {});

  ParamBuilder scope(std::string_view name) const;
  const std::string& prefix() const { return prefix_; }

  Tensor uniform(std::string_view name, Shape shape, int64_t fan_in);
  Tensor constant(std::string_view name, Shape shape, double value);
  Tensor values(std::string_view name, Shape shape, std::vector<double> values);
  Tensor buffer(std::string_view name, Shape shape, double value);
  std::mt19937_64& rng() { return *rng_; }

 private:
  std::string full(std::string_view name) const;

  ParamStore* store_;
  std::mt19937_64* rng_;
  std::string prefix_;
};

struct Conv2d {
  Conv2d() = default;
  Conv2d(ParamBuilder pb, int64_t in, int64_t out, int64_t kernel, Conv2dOptions opt = {}, bool bias = true);
  /// "Same" padding for odd kernels at stride 1.
  static Conv2dOptions same(int64_t kernel, int64_t dilation = 1, int64_t groups = 1);

  Tensor operator()(const Tensor& x) const;

  Tensor weight;
  std::optional<Tensor> bias;
  Conv2dOptions opt;
};

struct BatchNorm2d {
  BatchNorm2d() = default;
  BatchNorm2d(ParamBuilder pb, int64_t channels);
  Tensor operator()(const Tensor& x, bool training) const;

  Tensor gamma, beta;
  mutable Tensor running_mean, running_var;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamBuilder pb, int64_t channels);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  Tensor gamma, beta;
};

/// Conv + LeakyReLU + BatchNorm.
struct ConvBlock {
  ConvBlock() = default;
  ConvBlock(ParamBuilder pb, int64_t in, int64_t out, int64_t kernel = 3, int64_t stride = 1);
  Tensor operator()(const Tensor& x, bool training) const;

  Conv2d conv;
  BatchNorm2d bn;
};

/// Per-pixel linear map over the channel axis of a (B, C, H, W) map.
Tensor pointwise(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every trainable entry of a store. Its moments and step count are
/// exported under "optim." so a checkpoint can resume training exactly.
class Adam {
 public:
  Adam(const ParamStore& store, AdamOptions opt);

  void step();
  int64_t steps() const { return steps_; }
  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }

  NamedTensors state() const;
  void load_state(const NamedTensors& values);

 private:
  struct Slot {
    std::string name;
    Tensor param, m, v;
  };
  std::vector<Slot> slots_;
  AdamOptions opt_;
  int64_t steps_ = 0;
};

}  // namespace multicos
