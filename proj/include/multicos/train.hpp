#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "multicos/config.hpp"
#include "multicos/metrics.hpp"
#include "multicos/model.hpp"
#include "multicos/synth.hpp"

namespace multicos {

struct TrainData {
  std::vector<SyntheticSample> train, test, translation;
};

/// Seeds of the two generated flavours never coincide.
uint64_t translation_seed(uint64_t cos_seed);

/// Reads `cfg.data.root` when set, otherwise generates the scenes in memory.
/// The first `train` scenes of the segmentation split are for training, the
/// next `test` for evaluation. Misalignment is applied to both.
TrainData load_data(const RunConfig& cfg);

struct StepLosses {
  double seg = 0.0;    // L_S
  double trans = 0.0;  // L_L (0 without a translator)
  double total = 0.0;  // L_t
};

/// One optimizer step on L_t = L_S + L_L. `translation` may be null.
StepLosses joint_step(const MultiCOS& model, ParamStore& store, Adam& opt, const Batch& cos, const Batch* translation);

/// Deterministic epoch-wise shuffling: the batch of step t depends only on
/// (seed, stream, t).
std::vector<size_t> batch_indices(uint64_t seed, uint64_t stream, int64_t step, size_t dataset, size_t batch);

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::shared_ptr<const TrainData> data);

  StepLosses step();
  /// Runs until `steps_done() == until`, calling `log` after every step.
  void run(int64_t until, const std::function<void(int64_t, const StepLosses&)>& log = {});
  int64_t steps_done() const { return step_; }

  /// Parameters, optimizer moments and the step counter.
  NamedTensors state() const;
  void load_state(const NamedTensors& state);
  /// Writes the checkpoint and `<path>.config.json`.
  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path);

  MetricReport evaluate(const std::vector<SyntheticSample>& samples, const std::string& name) const;

  const RunConfig& config() const { return cfg_; }
  const MultiCOS& model() const { return *model_; }
  ParamStore& store() { return store_; }

 private:
  RunConfig cfg_;
  std::shared_ptr<const TrainData> data_;
  ParamStore store_;
  std::unique_ptr<MultiCOS> model_;
  std::unique_ptr<Adam> opt_;
  int64_t step_ = 0;
};

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

/// Predictions for a list of scenes, `threads` samples evaluated concurrently
/// (0 reads MULTICOS_THREADS, defaulting to 1). Results are in input order.
std::vector<Tensor> predict_all(const MultiCOS& model, const std::vector<SyntheticSample>& samples, int threads = 0);
MetricReport evaluate_predictions(const std::vector<Tensor>& preds, const std::vector<SyntheticSample>& samples,
                                  const std::string& name);
int thread_budget();

}  // namespace multicos
