#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "multicos/ablation.hpp"
#include "multicos/errors.hpp"
#include "multicos/verify.hpp"

using namespace multicos;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfigFailure = 1, kIoFailure = 2, kVerifyFailure = 3 };

// Options shared by every command that builds a RunConfig. Unset options
// leave the config file (or the toy profile) alone.
struct Overrides {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps, batch, size, train_n, test_n;
  std::optional<double> lr, kappa, crop;
  std::optional<std::string> data, aux_source;
  bool rgb_only = false, ckler = false, injection = false;
  std::vector<std::string> set;
};

void add_config_options(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run config; flags below take precedence");
  app->add_option("--seed", o.seed, "Model seed");
  app->add_option("--steps", o.steps, "Training steps");
  app->add_option("--batch", o.batch, "Batch size");
  app->add_option("--lr", o.lr, "Adam learning rate");
  app->add_option("--size", o.size, "Image side");
  app->add_option("--data", o.data, "Dataset directory written by gen-data (default: generate in memory)");
  app->add_option("--train-n", o.train_n, "Training scenes");
  app->add_option("--test-n", o.test_n, "Held-out scenes");
  app->add_option("--kappa", o.kappa, "Camouflage strength of generated scenes");
  app->add_option("--crop", o.crop, "Fraction of the aux map kept by the misalignment crop");
  app->add_option("--aux-source", o.aux_source, "real, pseudo or zero");
  app->add_flag("--rgb-only", o.rgb_only, "Single-modality baseline");
  app->add_flag("--ckler", o.ckler, "Train the translator jointly");
  app->add_flag("--injection", o.injection, "Inject the knowledge vector (implies --ckler)");
  app->add_option("--set", o.set, "Any config key as key=value, dotted for nested keys (data.snr=5)");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

RunConfig apply(RunConfig cfg, const Overrides& o) {
  json patch = json::object();
  if (o.steps) patch["steps"] = *o.steps;
  if (o.batch) patch["batch"] = *o.batch;
  if (o.lr) patch["lr"] = *o.lr;
  if (o.size) patch["image_size"] = *o.size;
  if (o.seed) patch["seed"] = *o.seed;
  if (o.data) patch["data"]["root"] = *o.data;
  if (o.train_n) patch["data"]["train"] = *o.train_n;
  if (o.test_n) patch["data"]["test"] = *o.test_n;
  if (o.kappa) patch["data"]["kappa"] = *o.kappa;
  if (o.crop) patch["data"]["crop_fraction"] = *o.crop;
  if (o.aux_source) patch["aux_source"] = *o.aux_source;
  if (o.rgb_only) patch["rgb_only"] = true;
  if (o.ckler || o.injection) patch["enable_ckler"] = true;
  if (o.injection) patch["enable_injection"] = true;
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    json* node = &patch;
    std::istringstream path(kv.substr(0, eq));
    std::string key, next;
    std::getline(path, key, '.');
    while (std::getline(path, next, '.')) {
      node = &(*node)[key];
      key = next;
    }
    (*node)[key] = parse_value(kv.substr(eq + 1));
  }
  return config_from_json(patch, cfg);
}

RunConfig resolve(const Overrides& o) {
  const RunConfig base = o.config.empty() ? toy_profile() : load_config(o.config);
  RunConfig cfg = apply(base, o);
  validate(cfg);
  return cfg;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json losses_json(int64_t step, const StepLosses& s) {
  return {{"step", step}, {"L_S", s.seg}, {"L_L", s.trans}, {"L_t", s.total}};
}

json report_to_json(const MetricReport& r) { return json::parse(report_json(r)); }

void progress(int64_t step, int64_t every, const StepLosses& s, const std::string& tag = {}) {
  if (every <= 0 || step % every != 0) return;
  std::fprintf(stderr, "%sstep %lld  L_S %.5f  L_L %.5f  L_t %.5f\n", tag.c_str(), static_cast<long long>(step),
               s.seg, s.trans, s.total);
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  Overrides o;
  std::string out;
  std::optional<int64_t> n, translation_n;
  std::optional<double> snr;
};

int cmd_gen_data(const GenArgs& a) {
  RunConfig cfg = a.o.config.empty() ? toy_profile() : load_config(a.o.config);
  const int64_t size = a.o.size.value_or(cfg.image_size);
  const int64_t n = a.n.value_or(cfg.data.train + cfg.data.test);
  const int64_t tn = a.translation_n.value_or(cfg.data.translation);
  const uint64_t seed = a.o.seed.value_or(cfg.data.seed);
  if (n <= 0 || tn < 0) throw ConfigError("scene counts must be positive");
  DatasetManifest man;
  man.cos = {seed, n, {size, size, a.o.kappa.value_or(cfg.data.kappa), a.snr.value_or(cfg.data.snr)}};
  man.translation = {translation_seed(seed), tn, {size, size, cfg.data.translation_kappa, a.snr.value_or(cfg.data.snr)}};
  const auto cos = generate(man.cos.seed, man.cos.count, man.cos.params);
  const auto tr = generate(man.translation.seed, man.translation.count, man.translation.params);
  write_dataset(a.out, man, cos, tr);
  const std::string manifest = read_text(fs::path(a.out) / "manifest.json");
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << std::hash<std::string>{}(manifest);
  std::cout << "wrote " << n << " scenes and " << tn << " translation pairs to " << a.out << "\n"
            << "manifest hash " << hash.str() << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Overrides o;
  std::string out, log, resume;
  int64_t progress_every = 10;
  bool evaluate = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve(a.o);
  auto data = std::make_shared<const TrainData>(load_data(cfg));
  Trainer t(cfg, data);
  if (!a.resume.empty()) t.resume(a.resume);
  ensure_parent(a.out);
  json log = {{"config", to_json(cfg)}, {"start_step", t.steps_done()}, {"steps", json::array()}};
  t.run(cfg.steps, [&](int64_t step, const StepLosses& s) {
    log["steps"].push_back(losses_json(step, s));
    progress(step, a.progress_every, s);
  });
  t.save(a.out);
  if (a.evaluate) {
    const MetricReport r = t.evaluate(data->test, "test");
    log["test"] = report_to_json(r);
    std::cout << report_table({r});
  }
  const std::string log_path = a.log.empty() ? a.out + ".log.json" : a.log;
  write_text(log_path, log.dump(2) + "\n");
  std::cout << "checkpoint " << a.out << " after " << t.steps_done() << " steps, log " << log_path << "\n";
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  Overrides o;
  std::string checkpoint, out, split = "test", baseline;
};

RunConfig checkpoint_config(const std::string& checkpoint, const Overrides& o) {
  const fs::path sidecar = config_sidecar(checkpoint);
  if (!fs::exists(sidecar)) throw IoError("missing " + sidecar.string() + " next to the checkpoint");
  RunConfig cfg = apply(load_config(sidecar), o);
  validate(cfg);
  return cfg;
}

struct LoadedModel {
  RunConfig cfg;
  ParamStore store;
  std::unique_ptr<MultiCOS> model;
};

std::unique_ptr<LoadedModel> load_model(const std::string& checkpoint, const Overrides& o) {
  auto m = std::make_unique<LoadedModel>();
  m->cfg = checkpoint_config(checkpoint, o);
  m->model = std::make_unique<MultiCOS>(m->store, m->cfg.seed, model_config(m->cfg));
  m->store.load(load_checkpoint(checkpoint), true);
  return m;
}

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.baseline.empty()) throw ConfigError("eval needs exactly one of --checkpoint or --baseline");
  if (a.split != "test" && a.split != "train") throw ConfigError("--split must be test or train");
  std::unique_ptr<LoadedModel> m;
  RunConfig cfg;
  if (!a.checkpoint.empty()) {
    m = load_model(a.checkpoint, a.o);
    cfg = m->cfg;
  } else {
    cfg = resolve(a.o);
  }
  RunConfig data_cfg = cfg;
  data_cfg.enable_ckler = false;  // evaluation never needs translation pairs
  const TrainData data = load_data(data_cfg);
  const auto& scenes = a.split == "test" ? data.test : data.train;

  std::vector<Tensor> preds;
  std::string name = a.split;
  if (m) {
    preds = predict_all(*m->model, scenes);
  } else if (a.baseline == "truth" || a.baseline == "half") {
    for (const auto& s : scenes) preds.push_back(a.baseline == "truth" ? s.mask : Tensor::full(s.mask.shape(), 0.5));
    name += "/" + a.baseline;
  } else {
    throw ConfigError("--baseline must be truth or half");
  }
  const MetricReport r = evaluate_predictions(preds, scenes, name);
  std::cout << report_table({r});
  if (!a.out.empty()) write_text(a.out, report_json(r) + "\n");
  return kOk;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
  Overrides o;
  std::vector<int> tables{5, 6, 8};
  std::vector<std::string> rows;
  std::string out;
  int64_t progress_every = 50;
};

int cmd_ablate(const AblateArgs& a) {
  const RunConfig base = resolve(a.o);
  std::map<bool, std::shared_ptr<const TrainData>> cache;  // keyed by "has translation pairs"
  json out = {{"base", to_json(base)}, {"tables", json::array()}};
  for (int table : a.tables) {
    std::vector<MetricReport> reports;
    json rows = json::array();
    for (const auto& row : ablation_rows(table, base)) {
      if (!a.rows.empty() && std::find(a.rows.begin(), a.rows.end(), row.name) == a.rows.end()) continue;
      auto& data = cache[row.config.enable_ckler];
      if (!data) data = std::make_shared<const TrainData>(load_data(row.config));
      std::fprintf(stderr, "table %d row %s\n", table, row.name.c_str());
      const std::string tag = "  [" + row.name + "] ";
      const RowResult r =
          run_row(row, data, [&](int64_t step, const StepLosses& s) { progress(step, a.progress_every, s, tag); });
      reports.push_back(r.test);
      rows.push_back({{"name", r.name},
                      {"config", to_json(r.config)},
                      {"first", losses_json(1, r.curve.front())},
                      {"last", losses_json(static_cast<int64_t>(r.curve.size()), r.curve.back())},
                      {"test", report_to_json(r.test)}});
    }
    std::cout << "table " << table << "\n" << report_table(reports) << "\n";
    out["tables"].push_back({{"table", table}, {"rows", rows}});
  }
  if (!a.out.empty()) write_text(a.out, out.dump(2) + "\n");
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradArgs {
  uint64_t seed = 0;
  std::vector<std::string> corrupt, only;
  bool list = false;
};

int cmd_gradcheck(const GradArgs& a) {
  if (a.list) {
    for (const auto& b : gradient_blocks()) std::cout << b.name << "\n";
    return kOk;
  }
  bool ok = true;
  for (const auto& r : run_gradient_suite(a.seed, a.corrupt, a.only)) {
    std::printf("%s %-22s max_error %.3e  tol %.0e  probed %lld\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.max_error, r.tol, static_cast<long long>(r.probed));
    ok = ok && r.passed;
  }
  return ok ? kOk : kVerifyFailure;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  Overrides o;
  std::string checkpoint, rgb, aux, out;
};

Tensor batched(const Tensor& chw) { return Tensor({1, chw.dim(0), chw.dim(1), chw.dim(2)}, chw.values()); }

int cmd_infer(const InferArgs& a) {
  const auto m = load_model(a.checkpoint, a.o);
  const Tensor x_i = batched(read_image(a.rgb));
  if (x_i.dim(1) != 3) throw ShapeMismatch("the image must be a colour PPM");
  Tensor x_u;
  if (!a.aux.empty()) {
    x_u = batched(read_image(a.aux));
    if (x_u.dim(1) != 1) throw ShapeMismatch("the auxiliary map must be a greyscale PGM");
  } else if (!m->cfg.rgb_only && m->cfg.aux_source == "real") {
    if (!m->cfg.enable_ckler) throw MissingModality("no auxiliary map given and no translator to synthesise one");
    NoGradGuard guard;
    x_u = m->model->ckler()->translate(x_i, false).x_u;
    std::cerr << "no auxiliary map given, using the translated one\n";
  }
  const Tensor p = m->model->predict(x_i, x_u);
  ensure_parent(a.out);
  write_image(a.out, Tensor({1, p.dim(2), p.dim(3)}, p.values()));
  std::cout << "wrote " << p.dim(2) << "x" << p.dim(3) << " mask to " << a.out << "\n";
  return kOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const MalformedHeader*>(&e)) return kIoFailure;
  return kConfigFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal camouflaged object segmentation at desk scale"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset and its manifest");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.o.config, "JSON run config supplying the data defaults");
  gen_cmd->add_option("--seed", gen.o.seed, "Scene seed");
  gen_cmd->add_option("--n", gen.n, "Segmentation scenes");
  gen_cmd->add_option("--translation-n", gen.translation_n, "Image/aux translation pairs");
  gen_cmd->add_option("--size", gen.o.size, "Image side");
  gen_cmd->add_option("--kappa", gen.o.kappa, "Camouflage strength in [0, 1]");
  gen_cmd->add_option("--snr", gen.snr, "Aux signal-to-noise ratio");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint plus a JSON loss log");
  add_config_options(train_cmd, train.o);
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train.log, "Loss log path (default <out>.log.json)");
  train_cmd->add_option("--resume", train.resume, "Continue from this checkpoint");
  train_cmd->add_option("--progress", train.progress_every, "Print losses every N steps (0 silences)");
  train_cmd->add_flag("--eval", train.evaluate, "Evaluate on the held-out scenes afterwards");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Metric report of a checkpoint (or a baseline) on a split");
  add_config_options(eval_cmd, eval.o);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint written by train");
  eval_cmd->add_option("--baseline", eval.baseline, "truth or half instead of a model");
  eval_cmd->add_option("--split", eval.split, "test or train");
  eval_cmd->add_option("--out", eval.out, "Write the report as JSON");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the rows of the ablation tables");
  add_config_options(ablate_cmd, ablate.o);
  ablate_cmd->add_option("--table", ablate.tables, "5, 6 and/or 8");
  ablate_cmd->add_option("--row", ablate.rows, "Only rows with these names");
  ablate_cmd->add_option("--out", ablate.out, "Write all rows as JSON");
  ablate_cmd->add_option("--progress", ablate.progress_every, "Print losses every N steps (0 silences)");

  GradArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable block");
  grad_cmd->add_option("--seed", grad.seed, "Seed of parameters and inputs");
  grad_cmd->add_option("--corrupt", grad.corrupt, "Deliberately break these blocks' gradients (self-test)");
  grad_cmd->add_option("--only", grad.only, "Check only these blocks");
  grad_cmd->add_flag("--list", grad.list, "List the registered blocks");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Predict a mask for one image");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Checkpoint written by train")->required();
  infer_cmd->add_option("--rgb", infer.rgb, "Colour PPM")->required();
  infer_cmd->add_option("--aux", infer.aux, "Greyscale PGM; synthesised by the translator when absent");
  infer_cmd->add_option("--out", infer.out, "Output PGM")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigFailure;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(train);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad);
    if (infer_cmd->parsed()) return cmd_infer(infer);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  }
  return kConfigFailure;
}
