#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "radpose/random.hpp"
#include "test_support.hpp"
#include "tiny_config.hpp"

namespace radpose {
namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(RADPOSE_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(testing::scratch_dir("cli"));
    config_ = new std::filesystem::path(testing::write_tiny_config(*dir_ / "work", *dir_ / "tiny.json"));
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete config_;
  }
  static std::string config() { return "--config " + config_->string(); }
  static std::filesystem::path* dir_;
  static std::filesystem::path* config_;
};
std::filesystem::path* Cli::dir_ = nullptr;
std::filesystem::path* Cli::config_ = nullptr;

TEST_F(Cli, HelpExitsZero) {
  const auto r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("sweep-noise"), std::string::npos);
}

TEST_F(Cli, UnknownFlagExitsOneAndNamesIt) {
  const auto r = run_cli("dataset " + config() + " --frobnicate 3");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--frobnicate"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingSubcommandOrRequiredOptionExitsOne) {
  EXPECT_EQ(run_cli("").code, 1);
  const auto r = run_cli("dataset");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--config"), std::string::npos) << r.output;
}

TEST_F(Cli, RuntimeFailuresExitTwo) {
  auto r = run_cli("dataset --config /nonexistent/file.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
  r = run_cli("phantom " + config() + " --set network.input=7");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("InvalidConfig"), std::string::npos) << r.output;
}

TEST_F(Cli, SetOverridesReachTheConfig) {
  const auto stem = *dir_ / "vol";
  const auto r = run_cli("phantom " + config() + " --set anatomy.dims=[8,9,10] anatomy.seed=4 --out " + stem.string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(stem.string() + ".json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("dims"), nlohmann::json::array({8, 9, 10}));
  EXPECT_EQ(std::filesystem::file_size(stem.string() + ".raw"), 8u * 9 * 10 * 4);
}

TEST_F(Cli, RenderWritesPngAndMetadata) {
  const auto out = *dir_ / "render" / "one.png";
  const auto r = run_cli("render " + config() + " --sample 3 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(out));
  std::ifstream in(*dir_ / "render" / "one.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_TRUE(j.contains("image_pose"));
  EXPECT_TRUE(j.contains("geometry"));
}

TEST_F(Cli, QqReportsSlopeOfCsvColumn) {
  const auto csv = *dir_ / "values.csv";
  {
    std::ofstream out(csv);
    out << "id,value\n";
    Rng rng(4);
    for (int i = 0; i < 880; ++i) out << i << ',' << rng.normal(0.0, 3.0) << '\n';
  }
  const auto r = run_cli("qq --input " + csv.string() + " --column value --out " + (*dir_ / "qq.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("slope 3."), std::string::npos) << r.output;
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "qq.csv"));
  EXPECT_EQ(run_cli("qq --input " + csv.string() + " --column missing").code, 2);
}

TEST_F(Cli, DatasetTrainEvalRoundTrip) {
  auto r = run_cli("dataset " + config());
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("annotate " + config() + " --eta 1 --k 1");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "work" / "annotations" / "1" / "k1.json"));
  r = run_cli("train " + config() + " --eta 1 --name m1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto model = *dir_ / "work" / "models" / "m1.ckpt";
  ASSERT_TRUE(std::filesystem::exists(model));
  r = run_cli("eval " + config() + " --model " + model.string() + " --repetitions 2");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "work" / "results" / "eval_m1" / "errors.csv"));
  EXPECT_NE(r.output.find("median position"), std::string::npos);
}

}  // namespace
}  // namespace radpose
