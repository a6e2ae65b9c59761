#include "multicos/train.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <random>
#include <thread>

#include "multicos/errors.hpp"
#include "multicos/losses.hpp"

namespace multicos {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kCosStream = 1, kTranslationStream = 2;
constexpr const char* kStepKey = "trainer.step";

SynthParams cos_params(const RunConfig& c) { return {c.image_size, c.image_size, c.data.kappa, c.data.snr}; }

SynthParams translation_params(const RunConfig& c) {
  return {c.image_size, c.image_size, c.data.translation_kappa, c.data.snr};
}

void require_size(const std::vector<SyntheticSample>& s, int64_t size, const std::string& what) {
  for (const auto& x : s) {
    if (x.rgb.dim(1) != size || x.rgb.dim(2) != size) {
      throw ConfigError(what + " scenes are " + std::to_string(x.rgb.dim(1)) + "x" + std::to_string(x.rgb.dim(2)) +
                        " but image_size is " + std::to_string(size));
    }
  }
}

}  // namespace

uint64_t translation_seed(uint64_t cos_seed) { return cos_seed + 0x5851f42d4c957f2dULL; }

TrainData load_data(const RunConfig& c) {
  TrainData d;
  std::vector<SyntheticSample> cos;
  const int64_t need = c.data.train + c.data.test;
  if (c.data.root.empty()) {
    cos = generate(c.data.seed, need, cos_params(c));
    if (c.enable_ckler) d.translation = generate(translation_seed(c.data.seed), c.data.translation, translation_params(c));
  } else {
    cos = read_split(c.data.root, "cos");
    if (static_cast<int64_t>(cos.size()) < need) {
      throw ConfigError("dataset holds " + std::to_string(cos.size()) + " scenes, config needs " + std::to_string(need));
    }
    cos.resize(static_cast<size_t>(need));
    if (c.enable_ckler) {
      d.translation = read_split(c.data.root, "translation");
      if (d.translation.empty()) throw ConfigError("dataset has no translation pairs");
    }
    require_size(cos, c.image_size, "dataset");
    require_size(d.translation, c.image_size, "translation");
  }
  if (c.data.crop_fraction < 1.0) {
    for (auto& s : cos) s = misalign(s, c.data.crop_fraction);
  }
  d.train.assign(cos.begin(), cos.begin() + c.data.train);
  d.test.assign(cos.begin() + c.data.train, cos.end());
  return d;
}

StepLosses joint_step(const MultiCOS& model, ParamStore& store, Adam& opt, const Batch& cos, const Batch* translation) {
  store.zero_grad();
  const ModelOutput out = model.forward(cos.rgb, cos.aux, true);
  Tensor seg = segmentation_loss(out.seg, cos.mask, cos.edge);
  Tensor total = seg;
  StepLosses r;
  if (model.ckler() && translation) {
    Tensor trans = translation_loss(model.ckler()->translate(translation->rgb, true).x_u, translation->aux);
    total = seg + trans;
    r.trans = trans.item();
  }
  backward(total);
  opt.step();
  r.seg = seg.item();
  r.total = total.item();
  return r;
}

std::vector<size_t> batch_indices(uint64_t seed, uint64_t stream, int64_t step, size_t dataset, size_t batch) {
  if (dataset == 0) throw ConfigError("cannot draw a batch from an empty dataset");
  std::vector<size_t> out;
  out.reserve(batch);
  // Position of the batch in the infinite concatenation of epoch shuffles.
  uint64_t pos = static_cast<uint64_t>(step) * batch;
  std::vector<size_t> perm;
  uint64_t perm_epoch = UINT64_MAX;
  for (size_t k = 0; k < batch; ++k, ++pos) {
    const uint64_t epoch = pos / dataset;
    if (epoch != perm_epoch) {
      perm.resize(dataset);
      std::iota(perm.begin(), perm.end(), size_t{0});
      std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(stream),
                        static_cast<uint32_t>(epoch), static_cast<uint32_t>(epoch >> 32)};
      std::mt19937_64 rng(seq);
      for (size_t i = dataset - 1; i > 0; --i) {
        std::uniform_int_distribution<size_t> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
      }
      perm_epoch = epoch;
    }
    out.push_back(perm[pos % dataset]);
  }
  return out;
}

Trainer::Trainer(const RunConfig& cfg, std::shared_ptr<const TrainData> data) : cfg_(cfg), data_(std::move(data)) {
  validate(cfg_);
  if (!data_ || data_->train.empty()) throw ConfigError("no training scenes");
  if (cfg_.enable_ckler && data_->translation.empty()) throw ConfigError("the translator needs translation pairs");
  model_ = std::make_unique<MultiCOS>(store_, cfg_.seed, model_config(cfg_));
  opt_ = std::make_unique<Adam>(store_, AdamOptions{cfg_.lr});
}

StepLosses Trainer::step() {
  const size_t b = static_cast<size_t>(cfg_.batch);
  const Batch cos = make_batch(data_->train, batch_indices(cfg_.seed, kCosStream, step_, data_->train.size(), b));
  StepLosses r;
  if (cfg_.enable_ckler) {
    const Batch tr = make_batch(data_->translation,
                                batch_indices(cfg_.seed, kTranslationStream, step_, data_->translation.size(), b));
    r = joint_step(*model_, store_, *opt_, cos, &tr);
  } else {
    r = joint_step(*model_, store_, *opt_, cos, nullptr);
  }
  ++step_;
  return r;
}

void Trainer::run(int64_t until, const std::function<void(int64_t, const StepLosses&)>& log) {
  while (step_ < until) {
    const StepLosses r = step();
    if (log) log(step_, r);
  }
}

NamedTensors Trainer::state() const {
  NamedTensors s = store_.snapshot();
  for (auto& e : opt_->state()) s.push_back(std::move(e));
  s.emplace_back(kStepKey, Tensor::scalar(static_cast<double>(step_)));
  return s;
}

void Trainer::load_state(const NamedTensors& state) {
  store_.load(state, true);
  opt_->load_state(state);
  for (const auto& [name, t] : state) {
    if (name == kStepKey) step_ = static_cast<int64_t>(t.item());
  }
}

fs::path config_sidecar(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".config.json";
  return p;
}

void Trainer::save(const fs::path& path) const {
  save_checkpoint(path, state());
  save_config(config_sidecar(path), cfg_);
}

void Trainer::resume(const fs::path& path) { load_state(load_checkpoint(path)); }

int thread_budget() {
  if (const char* env = std::getenv("MULTICOS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min<long>(v, 256));
    throw ConfigError(std::string("MULTICOS_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

std::vector<Tensor> predict_all(const MultiCOS& model, const std::vector<SyntheticSample>& samples, int threads) {
  if (threads <= 0) threads = thread_budget();
  std::vector<Tensor> preds(samples.size());
  auto work = [&](size_t begin, size_t stride) {
    for (size_t i = begin; i < samples.size(); i += stride) {
      const Batch b = make_batch(samples, {i});
      const Tensor p = model.predict(b.rgb, b.aux);
      preds[i] = Tensor({1, p.dim(2), p.dim(3)}, p.values());
    }
  };
  const size_t n = std::min<size_t>(static_cast<size_t>(threads), std::max<size_t>(samples.size(), 1));
  if (n <= 1) {
    work(0, 1);
    return preds;
  }
  std::vector<std::thread> pool;
  for (size_t t = 0; t < n; ++t) pool.emplace_back(work, t, n);
  for (auto& t : pool) t.join();
  return preds;
}

MetricReport evaluate_predictions(const std::vector<Tensor>& preds, const std::vector<SyntheticSample>& samples,
                                  const std::string& name) {
  if (preds.size() != samples.size()) throw ShapeMismatch("one prediction per scene is required");
  MetricAccumulator acc(name);
  for (size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], samples[i].mask);
  return acc.result();
}

MetricReport Trainer::evaluate(const std::vector<SyntheticSample>& samples, const std::string& name) const {
  return evaluate_predictions(predict_all(*model_, samples), samples, name);
}

}  // namespace multicos
