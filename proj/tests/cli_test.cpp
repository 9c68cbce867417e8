// Copyright 2026 The gatedvlad Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "gatedvlad/datagen.hpp"
#include "gatedvlad/training.hpp"
#include "test_util.hpp"

namespace gatedvlad {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::string kCli = GATEDVLAD_CLI;
const std::string kData = GATEDVLAD_DATA_DIR;

struct CliRun {
  int exit_code = -1;
  std::string out;  // stdout and stderr interleaved

  json last_json() const {
    std::istringstream in(out);
    std::string line, last;
    while (std::getline(in, line)) {
      if (!line.empty() && line.front() == '{') last = line;
    }
    return json::parse(last);
  }
};

CliRun cli(const std::string& args) {
  CliRun r;
  FILE* pipe = popen((kCli + " " + args + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gatedvlad_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST_F(CliTest, HelpListsEverySubcommand) {
  const CliRun r = cli("--help");
  EXPECT_EQ(r.exit_code, 0);
  for (const char* sub : {"gen-data", "split", "train", "average-checkpoints", "eval", "compress",
                          "size-report", "calibrate-sizes", "analyze-sparsity",
                          "analyze-quantization", "build-ensemble", "tune-ensemble",
                          "budget-check", "predict"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST_F(CliTest, UsageErrorsExitOne) {
  const CliRun unknown = cli("frobnicate");
  EXPECT_EQ(unknown.exit_code, 1);
  EXPECT_NE(unknown.out.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("").exit_code, 1);
  EXPECT_EQ(cli("analyze-quantization --no-such-flag").exit_code, 1);
  EXPECT_EQ(cli("eval --data x.vds").exit_code, 1);
}

TEST_F(CliTest, DataErrorsExitTwo) {
  EXPECT_EQ(cli("eval --checkpoint " + path("missing.tb") + " --data " + path("x.vds")).exit_code, 2);
  std::ofstream(path("junk.tb")) << "not a bundle";
  std::ofstream(path("junk.vds")) << "not a dataset";
  EXPECT_EQ(cli("eval --checkpoint " + path("junk.tb") + " --data " + path("junk.vds")).exit_code, 2);
  EXPECT_EQ(cli("gen-data --out " + path("d.vds") + " --videos 0").exit_code, 2);
}

TEST_F(CliTest, DivergentTrainingExitsThree) {
  ASSERT_EQ(cli("gen-data --out " + path("d.vds") + " --videos 40").exit_code, 0);
  const CliRun r = cli("train --data " + path("d.vds") + " --out-dir " + path("run") +
                    " --steps 5 --checkpoint-interval 5 --learning-rate 1e300");
  EXPECT_EQ(r.exit_code, 3) << r.out;
}

TEST_F(CliTest, EvalReproducesGoldenValue) {
  SyntheticDatasetConfig dc;
  dc.num_videos = 30;
  dc.vocab = 8;
  dc.d_video = 5;
  dc.d_audio = 3;
  dc.max_frames = 5;
  dc.mean_labels_per_video = 2.0;
  dc.seed = 77;
  save_dataset(generate(dc), path("golden.vds"));
  const ModelConfig cfg = ModelConfig::make(2, 4, 8, 5, 3);
  save_bundle(Checkpoint{0, cfg, testing::random_weights(cfg, 78, 1.0)}.to_bundle(),
              path("golden.tb"));
  for (int threads : {1, 3}) {
    const CliRun r = cli("eval --checkpoint " + path("golden.tb") + " --data " + path("golden.vds") +
                      " --top-k 5 --threads " + std::to_string(threads));
    ASSERT_EQ(r.exit_code, 0) << r.out;
    const json s = r.last_json();
    EXPECT_EQ(s["command"], "eval");
    EXPECT_NEAR(s["gap"].get<double>(), 0.11102445636374708, 1e-12);
    EXPECT_EQ(s["records"], 150);
  }
}

TEST_F(CliTest, FullScaleSizeReportNearReference) {
  const CliRun r = cli("size-report --k 24 --h 1440 --paper-scale --calibration " + kData +
                    "/calibration_report.json --table1 " + kData + "/table1.csv");
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const json s = r.last_json();
  EXPECT_EQ(s["reference_mb"], 714.93);
  EXPECT_LE(s["relative_error"].get<double>(), 0.05);
  EXPECT_NE(r.out.find("total"), std::string::npos);
}

TEST_F(CliTest, CalibrationReportMatchesCommittedCopy) {
  const CliRun r = cli("calibrate-sizes --table1 " + kData + "/table1.csv --out " + path("cal.json"));
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_EQ(slurp(path("cal.json")), slurp(kData + "/calibration_report.json"));
  EXPECT_LE(r.last_json()["mean_abs_relative_error"].get<double>(), 0.05);
}

TEST_F(CliTest, RateAnalyses) {
  EXPECT_EQ(cli("analyze-sparsity --params 102400000 --sparsity 0.75").last_json()["rate"], 0.25);
  EXPECT_EQ(cli("analyze-quantization --from-bits 32 --to-bits 8").last_json()["rate"], 0.75);
  EXPECT_EQ(cli("analyze-sparsity --params 100 --sparsity 1.5").exit_code, 2);
}

TEST_F(CliTest, BudgetCheckFromSizes) {
  const CliRun ok = cli("budget-check --sizes-mb 381.40 211.03 216.47 210.81");
  EXPECT_EQ(ok.exit_code, 0);
  EXPECT_EQ(ok.last_json()["total_bytes"], 1019710000);
  const CliRun over = cli("budget-check --sizes-mb 700 400");
  EXPECT_EQ(over.exit_code, 2);
  EXPECT_EQ(over.last_json()["status"], "over_budget");
}

// Every artifact of a short workflow, keyed by path relative to `root`.
std::map<std::string, std::string> workflow(const fs::path& root) {
  const std::string d = root.string();
  auto must = [](const std::string& args) {
    const CliRun r = cli(args);
    EXPECT_EQ(r.exit_code, 0) << args << "\n" << r.out;
  };
  must("gen-data --out " + d + "/all.vds --videos 200 --seed 5");
  must("split --in " + d + "/all.vds --train-out " + d + "/train.vds --validate-out " + d +
       "/val.vds --seed 6");
  for (const char* seed : {"1", "2"}) {
    const std::string run = d + "/run" + seed;
    must("train --data " + d + "/train.vds --out-dir " + run +
         " --k 2 --hidden 8 --steps 40 --checkpoint-interval 20 --seed " + seed);
    must("average-checkpoints --run-dir " + run + " --out " + run + "/avg.tb");
    must("compress --checkpoint " + run + "/avg.tb --out " + run + "/half.tb");
    must("eval --checkpoint " + run + "/half.tb --data " + d + "/val.vds --predictions " + run +
         "/pred.csv");
    must("size-report --checkpoint " + run + "/avg.tb --json-out " + run + "/size.json");
  }
  must("build-ensemble --members " + d + "/run1/avg.tb " + d + "/run2/avg.tb --out " + d +
       "/ens/manifest.json");
  must("tune-ensemble --manifest " + d + "/ens/manifest.json --data " + d +
       "/val.vds --grid-step 0.25 --out " + d + "/ens/tuned.json");
  must("predict --manifest " + d + "/ens/tuned.json --data " + d + "/val.vds --out " + d +
       "/ens/pred.csv");
  must("budget-check --manifest " + d + "/ens/tuned.json");
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string text = slurp(e.path());
    // Manifests hold absolute member paths; compare them relative to the root.
    if (e.path().extension() == ".json") {
      for (std::size_t at; (at = text.find(d)) != std::string::npos;) text.replace(at, d.size(), "<root>");
    }
    files[fs::relative(e.path(), root).generic_string()] = text;
  }
  return files;
}

TEST_F(CliTest, RerunsAreByteIdentical) {
  const auto a = workflow(dir_ / "a");
  const auto b = workflow(dir_ / "b");
  ASSERT_EQ(a.size(), b.size());
  EXPECT_GE(a.size(), 20u);
  for (const auto& [name, bytes] : a) {
    ASSERT_TRUE(b.contains(name)) << name;
    EXPECT_EQ(bytes, b.at(name)) << name;
  }
  // Rerunning a read-only step in place leaves its output unchanged.
  const std::string before = a.at("ens/pred.csv");
  const std::string d = (dir_ / "a").string();
  ASSERT_EQ(cli("predict --manifest " + d + "/ens/tuned.json --data " + d + "/val.vds --out " + d +
                "/ens/pred.csv").exit_code, 0);
  EXPECT_EQ(slurp(d + "/ens/pred.csv"), before);
}

}  // namespace
}  // namespace gatedvlad
