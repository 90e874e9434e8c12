#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout and stderr captured together.
Run cli(const std::string& args) {
  const std::string cmd = std::string(RFMAP_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (auto n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir() {
  auto d = fs::temp_directory_path() / "rfmap_test_cli";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const std::string kSmallPlan = std::string(RFMAP_EXAMPLE_DATA) + "/small_20x20.json";

}  // namespace

TEST(Cli, GenThenNseOfTruthAgainstItselfIsZero) {
  const auto t = (workdir() / "truth.t3b").string();
  ASSERT_EQ(cli("gen --out " + t).code, 0);
  const auto r = cli("eval nse --truth " + t + " --est " + t);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(std::stod(r.out), 0.0);
}

TEST(Cli, UnknownFlagExitsOneWithUsage) {
  const auto r = cli("gen --out x.t3b --bogus");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("bogus"), std::string::npos);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("").code, 1);
}

TEST(Cli, HelpPrintsDefaults) {
  const auto r = cli("sample --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("[0.3]"), std::string::npos);
  EXPECT_NE(r.out.find("[uniform]"), std::string::npos);
  EXPECT_NE(r.out.find("[4]"), std::string::npos);
}

TEST(Cli, StochasticStepsRequireSeed) {
  const auto t = (workdir() / "seedless.t3b").string();
  ASSERT_EQ(cli("gen --plan " + kSmallPlan + " --out " + t).code, 0);
  const auto r = cli("sample --truth " + t + " --out " + (workdir() / "x.smp").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--seed"), std::string::npos);
  EXPECT_EQ(cli("queries --truth " + t + " --plan " + kSmallPlan + " --out -").code, 1);
  EXPECT_EQ(cli("gen --sigma 2 --out " + t).code, 1);
}

TEST(Cli, BadInputExitsOne) {
  EXPECT_EQ(cli("eval nse --truth /nonexistent.t3b --est /nonexistent.t3b").code, 1);
  EXPECT_EQ(cli("gen --plan /nonexistent.json --out x").code, 1);
}

TEST(Cli, NumericFailureExitsTwo) {
  // All-zero truth: the NSE denominator vanishes.
  const auto z = (workdir() / "zero.t3b").string();
  {
    std::ofstream os(z, std::ios::binary);
    const unsigned char head[] = {0x54, 0x33, 0x42, 0x01, 2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0};
    os.write(reinterpret_cast<const char*>(head), sizeof head);
    const double zero = 0.0;
    for (int k = 0; k < 4; ++k) os.write(reinterpret_cast<const char*>(&zero), sizeof zero);
  }
  const auto r = cli("eval nse --truth " + z + " --est " + z);
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("numeric"), std::string::npos);
}

TEST(Cli, PipelineRoundTrip) {
  const auto d = workdir();
  const auto t = (d / "p_truth.t3b").string();
  const auto u = (d / "p_u.smp").string();
  const auto c = (d / "p_c.t3b").string();
  const auto q = (d / "p_q.csv").string();
  const auto e = (d / "p_e.csv").string();
  ASSERT_EQ(cli("gen --plan " + kSmallPlan + " --out " + t).code, 0);
  ASSERT_EQ(cli("sample --truth " + t + " --rate 0.5 --seed 3 --out " + u).code, 0);
  ASSERT_EQ(cli("complete --samples " + u + " --out " + c).code, 0);
  const auto n = cli("eval nse --truth " + t + " --est " + c + " --samples " + u);
  ASSERT_EQ(n.code, 0);
  EXPECT_LT(std::stod(n.out), 0.05);
  ASSERT_EQ(cli("queries --truth " + t + " --plan " + kSmallPlan + " --count 40 --seed 2 --out " + q).code, 0);
  ASSERT_EQ(cli("localize --map " + t + " --plan " + kSmallPlan + " --queries " + q + " --k 1 --out " + e).code, 0);
  const auto s = cli("eval errors --errors " + e + " --threshold 0");
  ASSERT_EQ(s.code, 0);
  EXPECT_NE(s.out.find("count=40"), std::string::npos);
  EXPECT_NE(s.out.find("within_0_m=1"), std::string::npos);
}

TEST(Cli, SmokeExperimentUnderTenSeconds) {
  const auto d = workdir();
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = std::string(RFMAP_EXAMPLE_DATA) + "/smoke.json";
  const auto r = cli("experiment recovery --spec " + spec + " --out " + (d / "smoke_rec.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto c = cli("experiment cdf --spec " + spec + " --out " + (d / "smoke_err.csv").string() + " --cdf-out " +
                     (d / "smoke_cdf.csv").string() + " --threads 2");
  ASSERT_EQ(c.code, 0) << c.out;
  const auto b = cli("experiment budget --spec " + spec + " --out " + (d / "smoke_budget.csv").string());
  ASSERT_EQ(b.code, 0) << b.out;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
  const auto rec = slurp(d / "smoke_rec.csv");
  EXPECT_EQ(rec.rfind("# config: ", 0), 0u);
  EXPECT_NE(rec.find("\nmethod,rate,noise,seed,nse\n"), std::string::npos);
  EXPECT_NE(slurp(d / "smoke_budget.csv").find("\nmethod,noise,min_rate"), std::string::npos);
}
