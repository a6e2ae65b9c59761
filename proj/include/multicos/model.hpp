#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "multicos/bfser.hpp"
#include "multicos/ckler.hpp"
#include "multicos/nn.hpp"

namespace multicos {

/// Where the segmentor's auxiliary input comes from.
enum class AuxSource {
  kReal,    // sensed modality from the dataset
  kPseudo,  // the translator's output
  kZero,    // withheld entirely
};

std::string to_string(AuxSource s);
AuxSource aux_source_from_string(const std::string& s);

struct ModelConfig {
  BFSerConfig bfser;
  CKLerConfig ckler;
  bool enable_ckler = false;
  bool enable_injection = false;
  AuxSource aux_source = AuxSource::kReal;
};

void validate(const ModelConfig& cfg);

struct ModelOutput {
  SegmentationOutput seg;
  std::optional<Translation> translation;
  Tensor aux;  // what the segmentor actually consumed
};

/// BFSer plus the optional translator and knowledge injection. Each network
/// draws its initial weights from its own stream, so the segmentor is
/// initialised identically whether or not a translator exists.
class MultiCOS {
 public:
  MultiCOS(ParamStore& store, uint64_t seed, const ModelConfig& cfg);

  /// `x_u` is only read when aux_source is kReal.
  ModelOutput forward(const Tensor& x_i, const Tensor& x_u, bool training) const;
  /// sigmoid(p_s^1) upsampled to the input extent, without gradient.
  Tensor predict(const Tensor& x_i, const Tensor& x_u) const;

  const ModelConfig& config() const { return cfg_; }
  const BFSer& bfser() const { return bfser_; }
  const CKLer* ckler() const { return cfg_.enable_ckler ? &ckler_ : nullptr; }
  const KnowledgeInjection* injection() const { return cfg_.enable_injection ? &inject_ : nullptr; }

 private:
  ModelConfig cfg_;
  BFSer bfser_;
  CKLer ckler_;
  KnowledgeInjection inject_;
};

/// Seed of the translator's initialisation stream for a run seed.
uint64_t translator_seed(uint64_t seed);

}  // namespace multicos
