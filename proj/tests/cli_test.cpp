#include <gtest/gtest.h>

#include <sstream>

#include "curate/cli.hpp"
#include "curate/pipeline.hpp"
#include "pipeline_fixture.hpp"
#include "support.hpp"

namespace curate {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string write_config(const fs::path& dir, const RunConfig& c) {
  const auto path = dir / "config.json";
  testing::write_lines(path, {c.to_json().dump(2)});
  return path.string();
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_NE(cli({"--help"}).out.find("sample-ladder"), std::string::npos);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);
  EXPECT_EQ(cli({"stats"}).code, 2);  // missing -i/-o
  EXPECT_EQ(cli({"--config", "/no/such/file.json", "run"}).code, 2);
}

TEST(Cli, StageFailureExitCode) {
  TempDir dir;
  const auto r = cli({"stats", "-i", (dir / "missing.jsonl").string(), "-o", (dir / "s").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, RunThenResumeFromRunDirectory) {
  TempDir dir;
  auto cfg = fixture::write_pipeline_fixture(dir.path(), 120);
  const auto config = write_config(dir.path(), cfg);
  const auto out = (dir / "out").string();
  const auto first = cli({"--config", config, "--mock", "run", "-o", out, "--stop-after", "seed"});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("stopped"), std::string::npos);
  const auto resumed = cli({"--resume", out, "run"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_NE(resumed.out.find("reused  seed"), std::string::npos);
  EXPECT_NE(resumed.out.find("ran     package"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(out) / "datasets/conversational.jsonl"));

  const auto fresh = cli({"--config", config, "run", "-o", (dir / "fresh").string()});
  ASSERT_EQ(fresh.code, 0) << fresh.err;
  EXPECT_EQ(output_tree_hash(out), output_tree_hash(dir / "fresh"));
}

TEST(Cli, BudgetAndConfigExitCodes) {
  TempDir dir;
  auto cfg = fixture::write_pipeline_fixture(dir.path(), 80);
  cfg.gateway.call_budget = 20;
  const auto config = write_config(dir.path(), cfg);
  const auto r = cli({"--config", config, "run", "-o", (dir / "b").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_TRUE(fs::exists(dir / "b/reports/failure.json"));

  cfg.gateway.call_budget.reset();
  cfg.paths.targets = "nowhere";
  const auto bad = write_config(dir.path(), cfg);
  EXPECT_EQ(cli({"--config", bad, "run", "-o", (dir / "c").string()}).code, 2);
  EXPECT_EQ(cli({"--config", bad, "--workers", "0", "run"}).code, 2);
  EXPECT_EQ(cli({"--config", bad, "run", "--stop-after", "train"}).code, 2);
}

TEST(Cli, SubcommandsChain) {
  TempDir dir;
  auto cfg = fixture::write_pipeline_fixture(dir.path(), 150);
  const auto config = write_config(dir.path(), cfg);
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  const auto ok = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config, "--mock", "--seed", "4"});
    const auto r = cli(args);
    EXPECT_EQ(r.code, 0) << args[5] << ": " << r.err;
    return r;
  };
  ok({"ingest", "-i", p("pool.jsonl"), "-o", p("pool_clean.jsonl")});
  EXPECT_TRUE(fs::exists(p("pool_clean.rejects.jsonl")));
  ok({"select", "-i", p("pool_clean.jsonl"), "-o", p("sel")});
  EXPECT_TRUE(fs::exists(p("sel/foundational.jsonl")));
  ok({"label", "-i", p("sel/chat.jsonl"), "-o", p("labeled.jsonl")});
  EXPECT_TRUE(fs::exists(p("labeled.taxonomy.json")));
  ok({"seed", "-i", p("labeled.jsonl"), "-o", p("seeds.jsonl")});
  ok({"evolve", "-i", p("seeds.jsonl"), "-o", p("evolved.jsonl"), "--logs", p("rounds"), "--resume", p("evo_ckpt")});
  EXPECT_TRUE(fs::exists(p("rounds/round_0.jsonl")));
  ok({"diagnose", "-i", p("evolved.jsonl"), "-o", p("diag.jsonl")});
  ok({"dedup", "-i", p("evolved.jsonl"), "-o", p("dedup.jsonl")});
  EXPECT_TRUE(fs::exists(p("dedup.dedup_report.jsonl")));
  ok({"decontam", "-i", p("dedup.jsonl"), "-o", p("clean.jsonl"), "--benchmarks", p("benchmarks")});
  ok({"sample-ladder", "-i", p("labeled.jsonl"), "-o", p("ladder"), "--sizes", "5,10"});
  EXPECT_TRUE(fs::exists(p("ladder/subset_10.jsonl")));
  const auto stats = ok({"stats", "-i", p("clean.jsonl"), "-o", p("stats")});
  EXPECT_NE(stats.out.find("\"turns\""), std::string::npos);
  EXPECT_TRUE(fs::exists(p("stats/labels.csv")));

  RunConfig no_bench = cfg;
  no_bench.paths.benchmarks.clear();
  const auto c2 = (dir / "nb").string();
  fs::create_directories(c2);
  const auto config2 = write_config(c2, no_bench);
  EXPECT_EQ(cli({"--config", config2, "decontam", "-i", p("dedup.jsonl"), "-o", p("x.jsonl")}).code, 2);
}

}  // namespace
}  // namespace curate
