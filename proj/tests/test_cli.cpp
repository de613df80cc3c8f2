#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support.hpp"

using nlohmann::json;
using testing_support::TempDir;

namespace {

/// Exit status of the CLI with `args`; stdout goes to `capture` when given.
int cli(const std::string& args, const std::string& capture = "") {
  std::string cmd = std::string(OPTDESIGN_CLI) + " " + args;
  cmd += capture.empty() ? " > /dev/null" : " > '" + capture + "'";
  cmd += " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST(Cli, RunWritesOutputs) {
  const TempDir dir("cli");
  const json cfg = {{"dataset", {{"generator", "gaussian"}, {"n", 30}, {"dim", 3}}},
                    {"selectors", {{{"policy", "GO"}}, {{"policy", "Uniform"}}}},
                    {"budget", 3},
                    {"split", {{"k_test", 5}, {"trials", 2}}},
                    {"oracle", {{"type", "linear_gaussian"}}}};
  std::ofstream(dir.file("c.json")) << cfg.dump();
  ASSERT_EQ(cli("run --config " + dir.file("c.json") + " --out " + dir.file("o1")), 0);
  ASSERT_EQ(cli("run --config " + dir.file("c.json") + " --out " + dir.file("o2") + " --workers 3"), 0);
  const auto rounds = slurp(dir.file("o1/rounds.jsonl"));
  EXPECT_EQ(line_count(rounds), 12u);
  EXPECT_EQ(rounds, slurp(dir.file("o2/rounds.jsonl")));
  EXPECT_EQ(slurp(dir.file("o1/summary.csv")).rfind("selector,trial,t,loss,std_dev,std_err\n", 0), 0u);
  ASSERT_EQ(cli("run --config " + dir.file("c.json") + " --out " + dir.file("o3") + " --seed 99"), 0);
  EXPECT_NE(rounds, slurp(dir.file("o3/rounds.jsonl")));
}

TEST(Cli, VerifyAllPasses) {
  const TempDir dir("cli");
  ASSERT_EQ(cli("verify --suite all --seed 7", dir.file("v.jsonl")), 0);
  std::istringstream lines(slurp(dir.file("v.jsonl")));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j["passed"].get<bool>()) << line;
    ++n;
  }
  EXPECT_GT(n, 20u);
  EXPECT_EQ(cli("verify --suite nonsense"), 1);
}

TEST(Cli, GenTaskThenRun) {
  const TempDir dir("cli");
  ASSERT_EQ(cli("gen-task pcfg-repeat --n 100 --seed 3 --out " + dir.file("t.csv")), 0);
  const auto csv = slurp(dir.file("t.csv"));
  EXPECT_EQ(line_count(csv), 101u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x0,x1,x2,x3,pattern,y0,y1,y2,y3,y4");
  const json cfg = {
      {"dataset", {{"path", dir.file("t.csv")}, {"label_cols", {"y*"}}, {"group_col", "pattern"}}},
      {"selectors", {{{"policy", "GO"}}, {{"policy", "GreedyXX"}}}},
      {"budget", 5},
      {"split", {{"k_test", 10}, {"trials", 2}}}};
  std::ofstream(dir.file("c.json")) << cfg.dump();
  ASSERT_EQ(cli("run --config " + dir.file("c.json") + " --out " + dir.file("o")), 0);
  EXPECT_EQ(line_count(slurp(dir.file("o/rounds.jsonl"))), 20u);
  EXPECT_EQ(cli("gen-task pcfg-repeat --n 7 --out " + dir.file("x.csv")), 1);
}

TEST(Cli, Dopt) {
  const TempDir dir("cli");
  std::ofstream(dir.file("f.csv")) << "a,b\n1,0\n1,0\n0,1\n";
  ASSERT_EQ(cli("dopt " + dir.file("f.csv") + " --tol 1e-8", dir.file("w.json")), 0);
  const auto j = json::parse(slurp(dir.file("w.json")));
  EXPECT_NEAR(j["weights"][2].get<double>(), 0.5, 1e-6);
  EXPECT_NEAR(j["certificate"].get<double>(), 2.0, 1e-6);
  std::ofstream(dir.file("r.csv")) << "1,1\n2,2\n";
  EXPECT_EQ(cli("dopt --no-header " + dir.file("r.csv")), 1);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("run --out /tmp/x"), 1);
  EXPECT_EQ(cli("run --config /nonexistent.json --out /tmp/x"), 1);
  EXPECT_EQ(cli("--help"), 0);
  const TempDir dir("cli");
  std::ofstream(dir.file("bad.json")) << R"({"dataset": {"generator": "gaussian", "n": 10, "dim": 2}, "selector": {"policy": "GO"}, "extra": 1})";
  EXPECT_EQ(cli("run --config " + dir.file("bad.json") + " --out " + dir.file("o")), 1);
}
