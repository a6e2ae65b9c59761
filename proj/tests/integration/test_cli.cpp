#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "multicos/serialize.hpp"
#include "multicos/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(MULTICOS_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(bytes(p)); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("multicos_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.json") << R"({"image_size":16,"widths":[4,4,6,6,8],"translator_widths":[2,3,3,4],)"
                                      << R"("d_model":8,"d_inner":16,"state_dim":4,"batch":2,"steps":3,)"
                                      << R"("data":{"train":4,"test":2,"translation":3}})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string tiny() const { return "--config " + path("tiny.json"); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenDataIsDeterministicAndValidatesSize) {
  const auto a = run("gen-data --n 6 --size 16 --kappa 1.0 --seed 7 --translation-n 2 --out " + path("a"));
  const auto b = run("gen-data --n 6 --size 16 --kappa 1.0 --seed 7 --translation-n 2 --out " + path("b"));
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_EQ(a.output.substr(a.output.find("manifest hash")), b.output.substr(b.output.find("manifest hash")));
  EXPECT_EQ(bytes(dir_ / "a" / "manifest.json"), bytes(dir_ / "b" / "manifest.json"));
  EXPECT_EQ(multicos::read_manifest(dir_ / "a").cos.count, 6);
  EXPECT_EQ(multicos::read_split(dir_ / "a", "cos").size(), 6u);

  const auto bad = run("gen-data --n 4 --size 8 --out " + path("c"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("InvalidDimensions"), std::string::npos) << bad.output;
}

TEST_F(Cli, TrainingIsDeterministicAndResumable) {
  const std::string common = tiny() + " --ckler --injection --aux-source pseudo --progress 0 ";
  ASSERT_EQ(run("train " + common + "--out " + path("a/ckpt.bin")).code, 0);
  ASSERT_EQ(run("train " + common + "--out " + path("b/ckpt.bin")).code, 0);
  EXPECT_EQ(bytes(dir_ / "a/ckpt.bin"), bytes(dir_ / "b/ckpt.bin"));
  EXPECT_EQ(bytes(dir_ / "a/ckpt.bin.log.json"), bytes(dir_ / "b/ckpt.bin.log.json"));

  const json straight = read_json(dir_ / "a/ckpt.bin.log.json");
  ASSERT_EQ(straight["steps"].size(), 3u);
  for (const auto& s : straight["steps"]) {
    EXPECT_NEAR(s["L_t"].get<double>(), s["L_S"].get<double>() + s["L_L"].get<double>(), 1e-12);
  }

  ASSERT_EQ(run("train " + common + "--steps 1 --out " + path("c/ckpt.bin")).code, 0);
  ASSERT_EQ(run("train " + common + "--resume " + path("c/ckpt.bin") + " --out " + path("d/ckpt.bin")).code, 0);
  const json resumed = read_json(dir_ / "d/ckpt.bin.log.json");
  EXPECT_EQ(resumed["start_step"], 1);
  ASSERT_EQ(resumed["steps"].size(), 2u);
  for (size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(resumed["steps"][k]["step"], straight["steps"][k + 1]["step"]);
    EXPECT_NEAR(resumed["steps"][k]["L_t"].get<double>(), straight["steps"][k + 1]["L_t"].get<double>(), 1e-9);
  }
  EXPECT_EQ(bytes(dir_ / "a/ckpt.bin"), bytes(dir_ / "d/ckpt.bin"));
}

TEST_F(Cli, RgbOnlyCheckpointHasNoTranslator) {
  ASSERT_EQ(run("train " + tiny() + " --rgb-only --progress 0 --out " + path("r.bin")).code, 0);
  bool any_bfser = false;
  for (const auto& [name, t] : multicos::load_checkpoint(dir_ / "r.bin")) {
    EXPECT_NE(name.rfind("ckler", 0), 0u) << name;
    any_bfser = any_bfser || name.rfind("bfser.", 0) == 0;
  }
  EXPECT_TRUE(any_bfser);
}

TEST_F(Cli, EvalReportsClosedFormBaselines) {
  ASSERT_EQ(run("eval " + tiny() + " --size 32 --test-n 4 --baseline truth --out " + path("gt.json")).code, 0);
  const json gt = read_json(dir_ / "gt.json");
  for (const char* field : {"dataset", "images", "M", "F_max", "F_mean", "F_adp", "E_max", "E_mean", "S"})
    EXPECT_TRUE(gt.contains(field)) << field;
  EXPECT_EQ(gt["images"], 4);
  EXPECT_EQ(gt["M"].get<double>(), 0.0);
  EXPECT_EQ(gt["S"].get<double>(), 1.0);
  ASSERT_EQ(run("eval " + tiny() + " --size 32 --test-n 4 --baseline half --out " + path("half.json")).code, 0);
  EXPECT_NEAR(read_json(dir_ / "half.json")["M"].get<double>(), 0.5, 1e-12);

  ASSERT_EQ(run("train " + tiny() + " --progress 0 --out " + path("m.bin")).code, 0);
  const auto e = run("eval --checkpoint " + path("m.bin") + " --out " + path("m.json"));
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_EQ(read_json(dir_ / "m.json")["images"], 2);
  EXPECT_EQ(run("eval --checkpoint " + path("missing.bin")).code, 2);
}

TEST_F(Cli, AblateEmitsTheTableRows) {
  const auto r = run("ablate " + tiny() + " --steps 1 --progress 0 --out " + path("abl.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  const json out = read_json(dir_ / "abl.json");
  const std::vector<std::vector<std::string>> expected{
      {"rgb_only", "+E_u", "+SSFM", "+LSFM", "+SSFM+LSFM", "+FFM+LSFM", "+FFM+SSFM", "full"},
      {"-g_w", "-SSM", "-CSSM", "full"},
      {"w/o Know-Vec", "Only Know-Vec", "full"}};
  ASSERT_EQ(out["tables"].size(), 3u);
  for (size_t t = 0; t < 3; ++t) {
    std::vector<std::string> names;
    for (const auto& row : out["tables"][t]["rows"]) names.push_back(row["name"]);
    EXPECT_EQ(names, expected[t]);
  }
  EXPECT_EQ(run("ablate " + tiny() + " --table 7").code, 1);
}

TEST_F(Cli, GradcheckNamesACorruptedBlock) {
  const auto list = run("gradcheck --list");
  ASSERT_EQ(list.code, 0);
  std::istringstream is(list.output);
  std::set<std::string> names;
  for (std::string line; std::getline(is, line);) EXPECT_TRUE(names.insert(line).second) << line;
  EXPECT_GE(names.size(), 9u);

  const auto ok = run("gradcheck --only lsfm --only losses");
  EXPECT_EQ(ok.code, 0) << ok.output;
  const auto bad = run("gradcheck --only lsfm --only losses --corrupt losses");
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.output.find("FAIL losses"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("PASS lsfm"), std::string::npos) << bad.output;
  EXPECT_EQ(run("gradcheck --corrupt nothing").code, 1);
}

TEST_F(Cli, InferSynthesisesOrDemandsTheAuxiliaryMap) {
  const auto scene = multicos::generate_one(5, 0, {24, 20, 1.0, 10.0});
  multicos::write_image(dir_ / "x.ppm", scene.rgb);
  multicos::write_image(dir_ / "x.pgm", scene.aux);

  ASSERT_EQ(run("train " + tiny() + " --ckler --progress 0 --out " + path("k.bin")).code, 0);
  const auto synth = run("infer --checkpoint " + path("k.bin") + " --rgb " + path("x.ppm") + " --out " + path("p.pgm"));
  ASSERT_EQ(synth.code, 0) << synth.output;
  const multicos::Tensor p = multicos::read_image(dir_ / "p.pgm");
  EXPECT_EQ(p.shape(), (multicos::Shape{1, 24, 20}));

  ASSERT_EQ(run("train " + tiny() + " --progress 0 --out " + path("d.bin")).code, 0);
  const auto missing = run("infer --checkpoint " + path("d.bin") + " --rgb " + path("x.ppm") + " --out " + path("q.pgm"));
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.output.find("MissingModality"), std::string::npos) << missing.output;
  EXPECT_EQ(run("infer --checkpoint " + path("d.bin") + " --rgb " + path("x.ppm") + " --aux " + path("x.pgm") +
                " --out " + path("q.pgm"))
                .code,
            0);
}

TEST_F(Cli, ConfigErrorsMapToExitCodes) {
  EXPECT_EQ(run("train --config " + path("absent.json") + " --out " + path("x.bin")).code, 2);
  EXPECT_EQ(run("train " + tiny() + " --set no_such_key=1 --out " + path("x.bin")).code, 1);
  EXPECT_EQ(run("train " + tiny() + " --set data.kappa=2 --out " + path("x.bin")).code, 1);
  EXPECT_EQ(run("train " + tiny() + " --injection --rgb-only --out " + path("x.bin")).code, 1);
  EXPECT_EQ(run("train --bogus").code, 1);
  EXPECT_EQ(run("").code, 1);
}

// The toy profile at its stated size: 300 joint steps must at least halve the
// segmentation loss.
TEST_F(Cli, ToyProfileHalvesTheSegmentationLoss) {
  ASSERT_EQ(run("train --steps 300 --progress 0 --out " + path("toy.bin")).code, 0);
  const json log = read_json(dir_ / "toy.bin.log.json");
  ASSERT_EQ(log["steps"].size(), 300u);
  const double first = log["steps"].front()["L_S"], last = log["steps"].back()["L_S"];
  EXPECT_LT(last, 0.5 * first) << "first " << first << " last " << last;
}
