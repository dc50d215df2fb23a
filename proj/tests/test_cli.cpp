#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <map>
#include <sstream>

#include "dna/io.hpp"
#include "dna/metrics.hpp"

using namespace dna;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

const fs::path& root() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "dna_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

CliRun cli(const std::string& args) {
  const fs::path capture = root() / "stdout.txt";
  const std::string cmd = std::string(DNA_CLI_PATH) + " " + args + " > " + capture.string() + " 2> " +
                          (root() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(capture);
  return r;
}

// The toy experiment shrunk so the whole pipeline runs in seconds.
fs::path tiny_config() {
  const fs::path p = root() / "tiny.json";
  if (fs::exists(p)) return p;
  Json j = read_json(fs::path(DNA_SOURCE_DIR) / "configs" / "toy.json");
  j["task"]["rows"] = 400;
  j["distill"]["train"]["epochs"] = 3;
  j["wholenet"]["train"]["epochs"] = 2;
  j["bench"]["train"]["epochs"] = 3;
  write_json(p, j);
  return p;
}

std::string common(const std::string& out) { return "--config " + tiny_config().string() + " --out " + (root() / out).string(); }

std::string field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string k, v;
  while (in >> k >> v)
    if (k == key) return v;
  return "";
}

}  // namespace

TEST(Cli, TrainRateSearch) {
  ASSERT_EQ(cli("train " + common("a")).code, 0);
  ASSERT_EQ(cli("rate " + common("a")).code, 0);
  const CliRun s = cli("search " + common("a") + " --max-params 3000");
  ASSERT_EQ(s.code, 0);
  const RunConfig cfg = load_config(tiny_config());
  const Architecture arch = decode_arch(field(s.out, "arch"), cfg.space);
  const Cost c = build_cost_lut(cfg.space).cost(arch);
  EXPECT_LE(c.params, 3000u);
  EXPECT_EQ(std::to_string(c.params), field(s.out, "params"));
  const Json j = read_json(root() / "a" / "search.json");
  EXPECT_EQ(j.at("config_hash"), config_hash(cfg));
}

TEST(Cli, RateRerunIsByteIdentical) {
  ASSERT_EQ(cli("rate " + common("b")).code, 0);
  const std::string first = read_file(root() / "b" / "scores" / "block_0.csv") + read_file(root() / "b" / "scores" / "block_1.csv");
  ASSERT_EQ(cli("rate " + common("b")).code, 0);
  EXPECT_EQ(read_file(root() / "b" / "scores" / "block_0.csv") + read_file(root() / "b" / "scores" / "block_1.csv"), first);
  ASSERT_EQ(cli("rate " + common("b") + " --force").code, 0);
  EXPECT_EQ(read_file(root() / "b" / "scores" / "block_0.csv") + read_file(root() / "b" / "scores" / "block_1.csv"), first);
}

TEST(Cli, ForeignArtifactsRefused) {
  ASSERT_EQ(cli("rate " + common("c")).code, 0);
  EXPECT_EQ(cli("rate " + common("c") + " --seed 2").code, 3);
  EXPECT_EQ(cli("rate " + common("c") + " --seed 2 --force").code, 0);
}

TEST(Cli, ErrorExitCodes) {
  const fs::path bad = root() / "bad.json";
  Json j = read_json(tiny_config());
  j["distill"]["train"]["lr"] = "fast";
  write_json(bad, j);
  EXPECT_EQ(cli("train --config " + bad.string() + " --out " + (root() / "d").string()).code, 2);
  EXPECT_EQ(cli("train --config " + (root() / "missing.json").string()).code, 2);
  EXPECT_EQ(cli("search " + common("d") + " --budgets 10,abc").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("search " + common("d") + " --max-params 1").code, 5);
}

TEST(Cli, RankMatchesPersistedFiles) {
  const CliRun r = cli("rank " + common("e"));
  ASSERT_EQ(r.code, 0);
  const RunConfig cfg = load_config(tiny_config());
  const fs::path dir = root() / "e";

  std::map<std::string, double> block_score;
  for (int k = 0; k < 2; ++k) {
    std::istringstream in(read_file(dir / "scores" / ("block_" + std::to_string(k) + ".csv")));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells = split_csv(line);
      block_score[cells[1]] = std::stod(cells[2]);
    }
  }
  std::vector<double> pred, truth;
  std::istringstream in(read_file(dir / "bench" / "bench.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells = split_csv(line);
    const auto bar = cells[0].find('|');
    pred.push_back(block_score.at(cells[0].substr(0, bar)) + block_score.at(cells[0].substr(bar + 1)));
    truth.push_back(std::stod(cells[1]));
  }
  ASSERT_EQ(pred.size(), 144u);
  const Json j = read_json(dir / "ranking.json");
  EXPECT_NEAR(j.at("dna").at("kendall_tau").get<double>(), kendall_tau(pred, truth), 1e-12);
  EXPECT_EQ(j.at("dna").at("n"), 144);
  EXPECT_EQ(j.at("config_hash"), config_hash(cfg));
}

TEST(Cli, VerifySmall) {
  const CliRun r = cli("verify --seed 3 --rating-trials 3 --search-trials 20 --gradient-trials 3");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
