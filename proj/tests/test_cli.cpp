#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "irrig/cli.hpp"
#include "support.hpp"

namespace irrig {
namespace {

using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result irrig_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new irrig::testing::TempDir("cli");
    const auto cfg = *dir_ / "world.json";
    std::ofstream(cfg) << R"({"world": {"width": 32, "height": 32},
      "regions": [{"name": "a", "irrigated": 60, "non_irrigated": 60},
                  {"name": "b", "phase_offset": 2, "irrigated": 60, "non_irrigated": 60},
                  {"name": "c", "irrigated": 60, "non_irrigated": 60}]})";
    const auto r = irrig_run({"synth", "--config", cfg.string(), "--seed", "3", "--out", world().string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path world() { return *dir_ / "world"; }
  static fs::path path(const std::string& name) { return *dir_ / name; }

  static irrig::testing::TempDir* dir_;
};

irrig::testing::TempDir* Cli::dir_ = nullptr;

TEST_F(Cli, SynthWritesLoadableFiles) {
  for (const char* name : {"evi.stack.json", "slope.stack.json", "truth.stack.json", "polygons.json", "samples.csv",
                           "run.json"})
    EXPECT_TRUE(fs::exists(world() / name)) << name;
  EXPECT_TRUE(fs::is_directory(world() / "scenes"));
  const auto evi = read_stack(world() / "evi.stack.json");
  EXPECT_EQ(evi.width(), 32);
  const auto table = read_samples(world() / "samples.csv");
  EXPECT_EQ(table.rows.size(), 360u);
  const json manifest = irrig::detail::read_json_file(world() / "run.json");
  EXPECT_EQ(manifest.at("verb"), "synth");
  EXPECT_EQ(manifest.at("seed"), 3);
  EXPECT_TRUE(manifest.at("outputs").contains("samples.csv"));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(irrig_run({"frobnicate"}).code, 2);
  EXPECT_EQ(irrig_run({"train", "--samples", (world() / "samples.csv").string()}).code, 2);
  EXPECT_EQ(irrig_run({"sieve", "--prediction", "x", "--connectivity", "four", "--out", path("bad").string()}).code, 2);
  EXPECT_EQ(irrig_run({}).code, 2);
}

TEST_F(Cli, MissingInputFailsWithMessage) {
  const auto r = irrig_run({"filter", "--evi", path("nope.stack.json").string(), "--slope",
                            (world() / "slope.stack.json").string(), "--out", path("filter-missing").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST_F(Cli, TrainPredictAndSweep) {
  const auto samples = (world() / "samples.csv").string();
  auto r = irrig_run({"train", "--samples", samples, "--model", "random_forest", "--out", path("rf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("rf") / "model.model.json"));
  r = irrig_run({"predict", "--model", (path("rf") / "model.model.json").string(), "--samples", samples, "--out",
                 path("rf-pred").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("rf-pred") / "predictions.csv"));

  r = irrig_run({"sweep", "--samples", samples, "--model", "reference", "--out", path("sweep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(path("sweep") / "sweep.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 1u + 3 * 2 + 3 * 1);
}

TEST_F(Cli, ConfigValuesOverrideFlags) {
  const auto cfg = path("sizes.json");
  std::ofstream(cfg) << R"({"sizes": [2]})";
  const auto r = irrig_run({"sweep", "--samples", (world() / "samples.csv").string(), "--model", "reference",
                            "--sizes", "1", "--config", cfg.string(), "--out", path("sweep-cfg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json manifest = irrig::detail::read_json_file(path("sweep-cfg") / "run.json");
  EXPECT_EQ(manifest.at("config").at("sizes"), json::array({2}));
}

TEST_F(Cli, ReplayReproducesOutputs) {
  const auto out = path("filter");
  auto r = irrig_run({"filter", "--evi", (world() / "evi.stack.json").string(), "--slope",
                      (world() / "slope.stack.json").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* threads : {"1", "8"}) {
    const auto dir = path(std::string("filter-replay-") + threads);
    r = irrig_run({"replay", "--manifest", (out / "run.json").string(), "--threads", threads, "--out", dir.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    const json rep = irrig::detail::read_json_file(dir / "replay.json");
    EXPECT_TRUE(rep.at("ok").get<bool>());
    EXPECT_TRUE(rep.at("differing").empty());
  }
}

TEST_F(Cli, ReplayDetectsChangedInput) {
  const auto copy = path("slope-copy");
  fs::create_directories(copy);
  for (const char* f : {"slope.stack.json", "slope.f32", "slope.mask.bin"})
    fs::copy_file(world() / f, copy / f);
  const auto out = path("filter-copy");
  auto r = irrig_run({"filter", "--evi", (world() / "evi.stack.json").string(), "--slope",
                      (copy / "slope.stack.json").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto slope = read_stack(copy / "slope.stack.json");
  slope.values[0] += 1.0f;
  write_stack(slope, copy / "slope.stack.json");
  r = irrig_run({"replay", "--manifest", (out / "run.json").string(), "--out", path("filter-copy-replay").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("changed"), std::string::npos);
}

}  // namespace
}  // namespace irrig
