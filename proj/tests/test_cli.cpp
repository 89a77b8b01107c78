// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include "epiview/error.hpp"
#include "epiview/features.hpp"
#include "epiview/pgm.hpp"
#include "json.hpp"
#include "run_config.hpp"
#include "test_util.hpp"

using namespace epiview;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string err;
};

// Runs the CLI with stdout discarded and stderr captured.
CliRun run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(EPIVIEW_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(err);
  std::stringstream ss;
  ss << is.rdbuf();
  r.err = ss.str();
  return r;
}

json tiny_config() {
  return json{{"seed", 5},
              {"scene",
               {{"views", 2},
                {"image_width", 112},
                {"image_height", 112},
                {"patch_size", 28},
                {"feature_dims", 6},
                {"surface_points", 400},
                {"n_train", 10},
                {"n_test", 8}}},
              {"train", {{"epochs", 2}, {"k_centers", 4}, {"batch_samples", 4}, {"collapse_samples", 64}}},
              {"bank", {{"coreset_ratio", 0.25}}}};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  write(dir / name, j.dump(2));
  return dir / name;
}

// Relative path -> bytes for every file below dir. The summary timestamp is
// blanked so two runs can be compared byte for byte.
std::map<std::string, std::vector<char>> digest(const fs::path& dir) {
  std::map<std::string, std::vector<char>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::vector<char> bytes = testutil::read_bytes(e.path());
    if (e.path().filename() == "summary.json") {
      json j = json::parse(bytes.begin(), bytes.end());
      EXPECT_TRUE(j.contains("timestamp"));
      j.erase("timestamp");
      const std::string s = j.dump();
      bytes.assign(s.begin(), s.end());
    }
    files[fs::relative(e.path(), dir).string()] = std::move(bytes);
  }
  return files;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

// ---------------------------------------------------------------------------
// config handling

TEST(RunConfigParse, DefaultsAndOverrides) {
  const cli::RunConfig defaults;
  const cli::RunConfig cfg = cli::merge_run_config(defaults, tiny_config(), "test");
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.scene.views, 2u);
  EXPECT_EQ(cfg.scene.grid.patch_size, 28);
  EXPECT_EQ(cfg.train.epochs, 2);
  EXPECT_EQ(cfg.effective_coreset_ratio(), 0.25);
  EXPECT_EQ(cfg.train.lambda, defaults.train.lambda);
  const cli::RunConfig flags = cli::merge_run_config(cfg, json{{"train", {{"epochs", 7}}}}, "flags");
  EXPECT_EQ(flags.train.epochs, 7);
  EXPECT_EQ(flags.scene.views, 2u);
}

TEST(RunConfigParse, UnknownKeysAndWrongTypesRejected) {
  const cli::RunConfig base;
  try {
    cli::merge_run_config(base, json{{"train", {{"epoch", 3}}}}, "cfg");
    FAIL() << "unknown key accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaError);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
  EXPECT_THROW(cli::merge_run_config(base, json{{"bogus", 1}}, "cfg"), Error);
  EXPECT_THROW(cli::merge_run_config(base, json{{"seed", "one"}}, "cfg"), Error);
  EXPECT_THROW(cli::merge_run_config(base, json{{"train", {{"epochs", -2}}}}, "cfg"), Error);
  EXPECT_THROW(cli::merge_run_config(base, json{{"fusion", "dense"}}, "cfg"), Error);
  EXPECT_THROW(cli::merge_run_config(base, json::array(), "cfg"), Error);
}

TEST(RunConfigParse, DeltaAcceptsInfinity) {
  const cli::RunConfig cfg = cli::merge_run_config({}, json{{"train", {{"delta_patches", "inf"}}}}, "cfg");
  EXPECT_TRUE(std::isinf(cfg.train.delta_patches));
  EXPECT_EQ(cli::to_json(cfg)["train"]["delta_patches"], "inf");
  EXPECT_EQ(cli::parse_delta("2.5"), 2.5);
  EXPECT_THROW(cli::parse_delta("-1"), Error);
  EXPECT_THROW(cli::parse_delta("wide"), Error);
}

TEST(RunConfigParse, ResolvedJsonRoundTrips) {
  const cli::RunConfig cfg = cli::merge_run_config({}, tiny_config(), "cfg");
  const cli::RunConfig again = cli::merge_run_config({}, cli::to_json(cfg), "cfg");
  EXPECT_EQ(cli::to_json(again), cli::to_json(cfg));
  EXPECT_EQ(cli::config_hash(again), cli::config_hash(cfg));
  EXPECT_EQ(cli::config_hash(cfg).size(), 16u);
  const cli::RunConfig other = cli::merge_run_config(cfg, json{{"seed", 6}}, "cfg");
  EXPECT_NE(cli::config_hash(other), cli::config_hash(cfg));
}

TEST(RunConfigParse, MalformedFileReportsPosition) {
  testutil::TempDir dir("cli");
  write(dir / "bad.json", "{\n  \"seed\": 1,\n  \"train\": {\"epochs\": }\n}\n");
  try {
    cli::load_run_config(dir / "bad.json");
    FAIL() << "malformed JSON accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaError);
    EXPECT_NE(std::string(e.what()).find("bad.json:3:"), std::string::npos) << e.what();
  }
  try {
    cli::load_run_config(dir / "missing.json");
    FAIL() << "missing file accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

// ---------------------------------------------------------------------------
// exit codes

TEST(CliExitCodes, ParseAndValidationErrors) {
  testutil::TempDir dir("cli");
  EXPECT_EQ(run_cli("", dir.path()).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 2);
  EXPECT_EQ(run_cli("synth", dir.path()).code, 2);  // --out missing
  write(dir / "bad.json", "{\"seed\": 1,,}");
  const CliRun malformed = run_cli("synth --config " + q(dir / "bad.json") + " --out " + q(dir / "d"), dir.path());
  EXPECT_EQ(malformed.code, 2);
  EXPECT_NE(malformed.err.find("bad.json:1:"), std::string::npos) << malformed.err;
  const fs::path unknown = write_config(dir.path(), json{{"sede", 1}}, "unknown.json");
  EXPECT_EQ(run_cli("synth --config " + q(unknown) + " --out " + q(dir / "d"), dir.path()).code, 2);
  EXPECT_EQ(run_cli("synth --delta -3 --out " + q(dir / "d"), dir.path()).code, 2);
}

TEST(CliExitCodes, MissingInputIsIoError) {
  testutil::TempDir dir("cli");
  EXPECT_EQ(run_cli("pipeline --manifest " + q(dir / "nope.json") + " --out " + q(dir / "o"), dir.path()).code, 1);
  EXPECT_EQ(run_cli("eval --manifest " + q(dir / "m.json") + " --scores " + q(dir / "s.json") + " --out " +
                        q(dir / "e.csv"),
                    dir.path())
                .code,
            1);
}

// ---------------------------------------------------------------------------
// synth

TEST(CliSynth, RerunIsByteIdentical) {
  testutil::TempDir dir("cli");
  const fs::path cfg = write_config(dir.path(), tiny_config());
  ASSERT_EQ(run_cli("synth --config " + q(cfg) + " --out " + q(dir / "a"), dir.path()).code, 0);
  ASSERT_EQ(run_cli("synth --config " + q(cfg) + " --threads 3 --out " + q(dir / "b"), dir.path()).code, 0);
  EXPECT_TRUE(fs::exists(dir / "a" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "a" / "rig.json"));
  EXPECT_EQ(digest(dir / "a"), digest(dir / "b"));
  ASSERT_EQ(run_cli("synth --config " + q(cfg) + " --seed 6 --out " + q(dir / "c"), dir.path()).code, 0);
  EXPECT_NE(digest(dir / "a"), digest(dir / "c"));
}

// ---------------------------------------------------------------------------
// mask export

class CliMask : public ::testing::Test {
 protected:
  void SetUp() override {
    // Horizontal stereo: p_a^T F p_b = v_b - v_a, so lines are image rows.
    Eigen::Matrix3d f;
    f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
    CameraRig rig;
    rig.view_ids = {"left", "right"};
    rig.fundamental.resize(4);
    rig.fundamental[1] = normalize_fundamental(f, 0, 1);
    rig.fundamental[2] = normalize_fundamental(f.transpose(), 1, 0);
    rig.fundamental[0] = rig.fundamental[1];
    rig.fundamental[3] = rig.fundamental[2];
    rig_ = rig;
    write_rig(rig, dir_ / "rig.json");
    config_ = write_config(dir_.path(), json{{"scene", {{"image_width", 112}, {"image_height", 112}, {"patch_size", 28}}}});
  }

  testutil::TempDir dir_{"cli-mask"};
  CameraRig rig_;
  fs::path config_;
};

TEST_F(CliMask, FiniteDeltaMatchesGeometryMask) {
  const fs::path out = dir_ / "m.pgm";
  const CliRun r = run_cli("mask --config " + q(config_) + " --rig " + q(dir_ / "rig.json") +
                               " --pair left,right --delta 1 --out " + q(out),
                           dir_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const BinaryMatrix expected = build_epipolar_mask(PatchGrid{112, 112, 28}, rig_.f(0, 1), 1.0);
  const auto encoded = mask_to_pgm(expected);
  const auto bytes = testutil::read_bytes(out);
  EXPECT_EQ(std::vector<char>(encoded.begin(), encoded.end()), bytes);
  // Banded: token j sees exactly the tokens within one row of its own.
  for (std::size_t j = 0; j < expected.rows(); ++j) {
    for (std::size_t k = 0; k < expected.cols(); ++k) {
      const long dj = static_cast<long>(j / 4) - static_cast<long>(k / 4);
      EXPECT_EQ(expected(j, k), std::labs(dj) <= 1 ? 1 : 0) << j << "," << k;
    }
  }
}

TEST_F(CliMask, InfiniteDeltaIsAllWhite) {
  const fs::path out = dir_ / "inf.pgm";
  const CliRun r = run_cli("mask --config " + q(config_) + " --rig " + q(dir_ / "rig.json") +
                               " --pair 1,0 --delta inf --out " + q(out),
                           dir_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto bytes = testutil::read_bytes(out);
  const std::string header = "P5\n16 16\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 256);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), 255);
}

TEST_F(CliMask, BadPairIsValidationError) {
  const std::string base = "mask --config " + q(config_) + " --rig " + q(dir_ / "rig.json") + " --out " + q(dir_ / "x.pgm");
  EXPECT_EQ(run_cli(base + " --pair left,center", dir_.path()).code, 2);
  EXPECT_EQ(run_cli(base + " --pair 0,5", dir_.path()).code, 2);
  EXPECT_EQ(run_cli(base + " --pair left,left", dir_.path()).code, 2);
  EXPECT_EQ(run_cli(base + " --pair left", dir_.path()).code, 2);
  EXPECT_FALSE(fs::exists(dir_ / "x.pgm"));
}

// ---------------------------------------------------------------------------
// estimate-f

TEST(CliEstimateF, RecoversRigMatrix) {
  testutil::TempDir dir("cli");
  CounterRng rng(11, 0, "cli-ef");
  const CameraPose a = testutil::random_camera(rng);
  const CameraPose b = testutil::random_camera(rng);
  json pairs = json::array();
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d x(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d pa = testutil::project(a, x);
    const Eigen::Vector3d pb = testutil::project(b, x);
    pairs.push_back({pa.x(), pa.y(), pb.x(), pb.y()});
  }
  write(dir / "corr.json", json{{"src_view", 0}, {"dst_view", 1}, {"pairs", pairs}}.dump());
  ASSERT_EQ(run_cli("estimate-f --correspondences " + q(dir / "corr.json") + " --out " + q(dir / "f.json"), dir.path())
                .code,
            0);
  std::ifstream is(dir / "f.json");
  const json out = json::parse(is);
  Eigen::Matrix3d f;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) f(r, c) = out["f"][static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  const FundamentalMatrix truth = fundamental_from_cameras(a.k, a.r, a.t, b.k, b.r, b.t);
  EXPECT_LT(fundamental_angle_sine(f, truth.m), 1e-6);

  write(dir / "few.json", json{{"pairs", json::array({{1, 2, 3, 4}})}}.dump());
  EXPECT_EQ(run_cli("estimate-f --correspondences " + q(dir / "few.json") + " --out " + q(dir / "g.json"), dir.path())
                .code,
            2);
}

// ---------------------------------------------------------------------------
// staged commands and the full pipeline

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("cli-pipeline");
    config_ = write_config(dir_->path(), tiny_config());
    ASSERT_EQ(run_cli("synth --config " + q(config_) + " --out " + q(data()), dir_->path()).code, 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path data() { return dir_->path() / "data"; }
  static std::string common() { return "--config " + q(config_) + " --manifest " + q(data() / "manifest.json"); }

  static inline testutil::TempDir* dir_ = nullptr;
  static inline fs::path config_;
};

TEST_F(CliPipeline, WritesEveryArtifactAndReruns) {
  const fs::path a = dir_->path() / "run-a";
  const fs::path b = dir_->path() / "run-b";
  ASSERT_EQ(run_cli("pipeline " + common() + " --heatmaps --out " + q(a), dir_->path()).code, 0);
  ASSERT_EQ(run_cli("pipeline " + common() + " --heatmaps --out " + q(b), dir_->path()).code, 0);
  for (const char* name : {"weights.mvft", "trace.csv", "bank/bank.json", "scores.json", "scores.csv", "metrics.csv",
                           "metrics.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(a / name)) << name;
  }
  EXPECT_FALSE(fs::is_empty(a / "heatmaps"));
  EXPECT_EQ(digest(a), digest(b));

  std::ifstream is(a / "summary.json");
  const json summary = json::parse(is);
  EXPECT_EQ(summary["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(summary["config"]["seed"], 5);
  EXPECT_TRUE(summary["versions"].contains("epiview"));
  EXPECT_TRUE(summary["results"].contains("image_auroc"));
  EXPECT_EQ(summary["artifacts"], json({"weights.mvft", "trace.csv", "bank/", "scores.json", "scores.csv",
                                        "metrics.csv", "metrics.json", "heatmaps/"}));
}

TEST_F(CliPipeline, NoFusionSkipsWeights) {
  const fs::path out = dir_->path() / "run-none";
  ASSERT_EQ(run_cli("pipeline " + common() + " --fusion none --out " + q(out), dir_->path()).code, 0);
  EXPECT_FALSE(fs::exists(out / "weights.mvft"));
  EXPECT_FALSE(fs::exists(out / "trace.csv"));
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  std::ifstream is(out / "summary.json");
  EXPECT_EQ(json::parse(is)["config"]["fusion"], "none");
}

TEST_F(CliPipeline, FlagsOverrideConfigFile) {
  const fs::path out = dir_->path() / "run-flags";
  ASSERT_EQ(run_cli("pipeline " + common() + " --epochs 1 --lambda 0 --seed 9 --out " + q(out), dir_->path()).code, 0);
  std::ifstream is(out / "summary.json");
  const json summary = json::parse(is);
  EXPECT_EQ(summary["config"]["train"]["epochs"], 1);
  EXPECT_EQ(summary["config"]["train"]["lambda"], 0.0);
  EXPECT_EQ(summary["config"]["seed"], 9);
  EXPECT_EQ(summary["config"]["scene"]["views"], 2);  // file value survives
  std::ifstream trace(out / "trace.csv");
  const std::string text((std::istreambuf_iterator<char>(trace)), std::istreambuf_iterator<char>());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);  // header + one epoch
}

// The staged commands reproduce the pipeline's scores through files.
TEST_F(CliPipeline, StagedCommandsMatchPipeline) {
  const fs::path full = dir_->path() / "run-full";
  const fs::path s = dir_->path() / "staged";
  fs::create_directories(s);
  ASSERT_EQ(run_cli("pipeline " + common() + " --out " + q(full), dir_->path()).code, 0);
  ASSERT_EQ(run_cli("pretrain " + common() + " --out " + q(s / "w.mvft") + " --summary " + q(s / "pre.json"),
                    dir_->path())
                .code,
            0);
  ASSERT_EQ(run_cli("build-bank " + common() + " --weights " + q(s / "w.mvft") + " --out " + q(s / "bank"), dir_->path())
                .code,
            0);
  ASSERT_EQ(run_cli("score " + common() + " --weights " + q(s / "w.mvft") + " --bank " + q(s / "bank") + " --out " +
                        q(s / "scores.json"),
                    dir_->path())
                .code,
            0);
  ASSERT_EQ(run_cli("eval --manifest " + q(data() / "manifest.json") + " --scores " + q(s / "scores.json") +
                        " --out " + q(s / "metrics.csv"),
                    dir_->path())
                .code,
            0);
  EXPECT_EQ(testutil::read_bytes(s / "w.mvft"), testutil::read_bytes(full / "weights.mvft"));
  EXPECT_EQ(testutil::read_bytes(s / "w.trace.csv"), testutil::read_bytes(full / "trace.csv"));
  EXPECT_EQ(digest(s / "bank"), digest(full / "bank"));
  EXPECT_EQ(testutil::read_bytes(s / "scores.json"), testutil::read_bytes(full / "scores.json"));
  EXPECT_EQ(testutil::read_bytes(s / "metrics.csv"), testutil::read_bytes(full / "metrics.csv"));
  std::ifstream pre(s / "pre.json");
  EXPECT_EQ(json::parse(pre)["artifacts"], json({"w.mvft", "w.trace.csv"}));  // relative to the summary
}

TEST_F(CliPipeline, ScoreRequiresWeightsWithFusion) {
  const fs::path bank = dir_->path() / "bank-none";
  ASSERT_EQ(run_cli("build-bank " + common() + " --fusion none --out " + q(bank), dir_->path()).code, 0);
  EXPECT_EQ(run_cli("score " + common() + " --bank " + q(bank) + " --out " + q(dir_->path() / "s.json"), dir_->path())
                .code,
            2);
  EXPECT_EQ(run_cli("score " + common() + " --fusion none --bank " + q(bank) + " --out " +
                        q(dir_->path() / "s.json"),
                    dir_->path())
                .code,
            0);
}
