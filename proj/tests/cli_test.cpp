#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kWork = fs::temp_directory_path() / "cplx_cli_test";

struct Run {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

Run cli(const std::string& args, const std::string& env = "") {
  const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = "cd '" + kWork.string() + "' && " + env + " '" CPLX_CLI_PATH "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::size_t count_files(const fs::path& dir, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().filename().string().starts_with(prefix);
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    ASSERT_EQ(cli("gen --count 2 --seed 5 --out small.iqds").code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(kWork); }
};

constexpr const char* kQuick = " --epochs 1 --batch-size 64 --val-fraction 0";

TEST_F(Cli, GenWritesEveryCellAndIsRepeatable) {
  const auto r = cli("gen --count 10 --seed 7 --out d.iqds");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(cli("gen --count 10 --seed 7 --out again/d.iqds --jobs 3").code, 0);
  EXPECT_EQ(slurp(kWork / "d.iqds"), slurp(kWork / "again" / "d.iqds"));
  const auto info = cli("convert-info d.iqds");
  EXPECT_EQ(info.code, 0);
  EXPECT_NE(info.out.find("frames      2200"), std::string::npos) << info.out;
  EXPECT_NE(info.out.find("220 non-empty, 10 to 10"), std::string::npos) << info.out;
  const auto echo = json::parse(slurp(kWork / "d.iqds.config.json"));
  EXPECT_EQ(echo["count"], 10);
  EXPECT_EQ(echo["seed"], 7);
  EXPECT_EQ(echo["frames"], 2200);
  EXPECT_TRUE(echo.contains("jobs"));
}

TEST_F(Cli, SeedComesFromEnvironmentUnlessGiven) {
  ASSERT_EQ(cli("gen --count 1 --out env.iqds", "CPLX_SEED=9").code, 0);
  EXPECT_EQ(json::parse(slurp(kWork / "env.iqds.config.json"))["seed"], 9);
  ASSERT_EQ(cli("gen --count 1 --seed 3 --out flag.iqds", "CPLX_SEED=9").code, 0);
  EXPECT_EQ(json::parse(slurp(kWork / "flag.iqds.config.json"))["seed"], 3);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("gen --count 0 --out zero.iqds").code, 2);
  EXPECT_FALSE(fs::exists(kWork / "zero.iqds"));
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("gen --out x.iqds").code, 2);
  const auto r = cli("experiment --data small.iqds --paradigm exp3 --out bad_paradigm");
  EXPECT_EQ(r.code, 2);
  for (const char* name : {"original", "exp1", "exp2"}) EXPECT_NE(r.err.find(name), std::string::npos) << r.err;
  EXPECT_EQ(cli("train --data small.iqds --arch ResNet --out bad_arch").code, 2);
}

TEST_F(Cli, MalformedDataExitsThree) {
  const auto bytes = slurp(kWork / "small.iqds");
  std::ofstream(kWork / "cut.iqds", std::ios::binary) << bytes.substr(0, bytes.size() - 100);
  const auto r = cli("convert-info cut.iqds");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("byte offset"), std::string::npos) << r.err;
  std::ofstream(kWork / "junk.iqds", std::ios::binary) << "not a dataset";
  EXPECT_EQ(cli("convert-info junk.iqds").code, 3);
}

TEST_F(Cli, TrainWritesCheckpointHistoryAndEcho) {
  const auto r = cli(std::string("train --data small.iqds --arch Complex --paradigm original --out tr") + kQuick);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(kWork / "tr" / "model.ckpt"));
  const auto hist = json::parse(slurp(kWork / "tr" / "history.json"));
  EXPECT_EQ(hist["epochs"].size(), 1u);
  EXPECT_EQ(hist["parameters"], 2667611);
  const auto echo = json::parse(slurp(kWork / "tr" / "config.json"));
  EXPECT_EQ(echo["arch"], "Complex");
  EXPECT_EQ(echo["train"]["batch_size"], 64);
  EXPECT_EQ(echo["train"]["patience"], 5);
  EXPECT_EQ(slurp(kWork / "tr" / "config.json").find("time"), std::string::npos);
}

TEST_F(Cli, Exp1FiveTrialsGivesFifteenFilesAndThreePairs) {
  const auto r = cli(std::string("experiment --data small.iqds --paradigm exp1 --trials 5 --out e1") + kQuick);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dir = kWork / "e1";
  EXPECT_EQ(count_files(dir, "trial_exp1_"), 15u);
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["completed"].size(), 15u);
  const auto report = json::parse(slurp(dir / "report.json"));
  ASSERT_EQ(report["significance"].size(), 3u);
  for (const auto& p : report["significance"]) {
    const double pv = p["p"];
    EXPECT_TRUE(pv >= 0 && pv <= 1) << p.dump();
  }
  for (const char* f : {"accuracy_by_snr.csv", "summary.txt", "accuracy_vs_snr.svg", "overall_accuracy.svg",
                        "confusion_Complex.svg", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto echo = json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(echo["trials"], 5);
  EXPECT_EQ(echo["architectures"].size(), 3u);

  const auto rebuilt = cli("report --results e1 --out e1_report");
  ASSERT_EQ(rebuilt.code, 0) << rebuilt.err;
  EXPECT_EQ(slurp(dir / "report.json"), slurp(kWork / "e1_report" / "report.json"));
}

TEST_F(Cli, MidRunFailureLeavesPartialManifest) {
  // The second architecture's trial file path is taken by a directory.
  const auto dir = kWork / "partial";
  fs::create_directories(dir / "trial_exp2_CNN2-257_0.json");
  const auto r = cli(std::string("experiment --data small.iqds --paradigm exp2 --trials 1 --out partial") + kQuick);
  EXPECT_NE(r.code, 0);
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["status"], "failed");
  EXPECT_EQ(manifest["completed"], json::array({"trial_exp2_CNN2_0.json"}));
  EXPECT_TRUE(manifest.contains("error"));
  EXPECT_FALSE(fs::exists(dir / "report.json"));
}

TEST_F(Cli, DivergentTrainingExitsFour) {
  const auto r = cli(std::string("experiment --data small.iqds --paradigm exp2 --trials 1 --lr 1e30 --out nan") + kQuick);
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("trial 0 (CNN2)"), std::string::npos) << r.err;
  EXPECT_EQ(json::parse(slurp(kWork / "nan" / "manifest.json"))["status"], "failed");
}

TEST_F(Cli, ActmaxMissingCheckpointWritesNothing) {
  const auto r = cli("actmax --checkpoint missing.ckpt --data small.iqds --out am_missing");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("missing.ckpt"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(kWork / "am_missing"));
}

TEST_F(Cli, ActmaxGalleryBytesAreSeedDeterministic) {
  ASSERT_EQ(cli(std::string("train --data small.iqds --arch CNN2 --out am_model") + kQuick).code, 0);
  const std::string base = "actmax --checkpoint am_model/model.ckpt --data small.iqds --steps 5 --seed 11";
  const auto a = cli(base + " --out am_a");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(cli(base + " --jobs 2 --out am_b").code, 0);
  EXPECT_EQ(slurp(kWork / "am_a" / "gallery.svg"), slurp(kWork / "am_b" / "gallery.svg"));
  EXPECT_EQ(slurp(kWork / "am_a" / "gallery.json"), slurp(kWork / "am_b" / "gallery.json"));
  EXPECT_EQ(json::parse(slurp(kWork / "am_a" / "config.json"))["steps"], 5);
  EXPECT_EQ(json::parse(slurp(kWork / "am_a" / "gallery.json")).size(), 11u);
}

}  // namespace
