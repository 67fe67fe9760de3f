#include <gtest/gtest.h>

#include <set>

#include "curate/errors.hpp"
#include "curate/manifest.hpp"
#include "curate/pipeline.hpp"
#include "pipeline_fixture.hpp"
#include "support.hpp"

namespace curate {
namespace {

namespace fs = std::filesystem;
using testing::make_record;
using testing::TempDir;

std::size_t line_count(const fs::path& p) {
  std::size_t n = 0;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

TEST(RunConfig, DefaultQuotasReproduceReferenceTotals) {
  std::map<Domain, std::size_t> sizes;
  double collected = 0, used = 0;
  for (const auto& s : reference_pool_statistics()) {
    sizes[s.domain] = static_cast<std::size_t>(s.collected * 1e6 + 0.5);
    collected += s.collected;
    used += s.used;
  }
  EXPECT_NEAR(collected, 116.4, 1e-9);
  EXPECT_NEAR(used, 9.0, 1e-9);
  const auto plans = plan_domains(default_domain_quotas(), sizes, "targets");
  ASSERT_EQ(plans.size(), 4u);
  std::size_t total = 0;
  for (const auto& p : plans) total += p.quota;
  EXPECT_EQ(total, 9'000'000u);
  EXPECT_EQ(plans[0].quota, 1'500'000u);
  EXPECT_EQ(plans[0].strategy, Strategy::dsir);
  EXPECT_EQ(plans[2].strategy, Strategy::source_rules);
}

TEST(RunConfig, EmptyDomainGetsNoPlanAndSmallDomainAtLeastOne) {
  std::vector<DomainQuota> q(1);
  q[0].domain = Domain::math;
  q[0].quota_ratio = 0.01;
  EXPECT_TRUE(plan_domains(q, {{Domain::code, 10}}, "t").empty());
  EXPECT_EQ(plan_domains(q, {{Domain::math, 10}}, "t").at(0).quota, 1u);
  q[0].quota = 7;
  EXPECT_EQ(plan_domains(q, {{Domain::math, 10}}, "t").at(0).quota, 7u);
}

TEST(RunConfig, RoundTripAndCanonicalHash) {
  RunConfig c;
  c.paths.pool = "pool.jsonl";
  c.seed = 5;
  c.ladder_sizes = {10, 20};
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());

  auto other = c;
  other.paths.output = "elsewhere";
  other.workers = 7;
  other.gateway.call_budget = 3;
  EXPECT_EQ(other.hash(), c.hash());
  other.seed = 6;
  EXPECT_NE(other.hash(), c.hash());
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_json(json{{"sede", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", "x"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"domains", {{{"domain", "poetry"}}}}}), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.validate(), ConfigError);  // no pool
  c.paths.pool = "p";
  c.validate();
  c.ladder_sizes = {5, 5};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, LoadResolvesRelativePaths) {
  TempDir dir;
  testing::write_lines(dir / "cfg.json", {R"({"seed": 3, "paths": {"pool": "data/pool.jsonl"}})"});
  const auto c = RunConfig::load(dir / "cfg.json");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.resolve(c.paths.pool), dir.path() / "data/pool.jsonl");
  testing::write_lines(dir / "bad.json", {"{not json"});
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), ConfigError);
}

TEST(Stages, NamesRoundTrip) {
  for (auto s : kAllStages) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_THROW(parse_stage("train"), ConfigError);
  EXPECT_EQ(exit_code(RunStatus::ok), 0);
  EXPECT_EQ(exit_code(RunStatus::config_error), 2);
  EXPECT_EQ(exit_code(RunStatus::stage_failure), 3);
  EXPECT_EQ(exit_code(RunStatus::budget_exhausted), 4);
}

class MockPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    config_ = new RunConfig(fixture::write_pipeline_fixture(dir_->path(), 200));
    result_ = new PipelineResult(run_pipeline(*config_));
    reference_hash_ = output_tree_hash(result_->output_dir);
  }
  static void TearDownTestSuite() {
    delete result_;
    delete config_;
    delete dir_;
  }
  static RunConfig config_at(const std::string& output) {
    auto c = *config_;
    c.paths.output = output;
    return c;
  }

  static inline TempDir* dir_ = nullptr;
  static inline RunConfig* config_ = nullptr;
  static inline PipelineResult* result_ = nullptr;
  static inline std::uint64_t reference_hash_ = 0;
};

TEST_F(MockPipeline, CompletesWithBothDatasets) {
  ASSERT_EQ(result_->status, RunStatus::ok) << result_->error;
  EXPECT_GT(result_->counts.at("foundational"), 0u);
  EXPECT_GT(result_->counts.at("conversational"), 0u);
  EXPECT_GT(result_->counts.at("seeds"), 0u);
  EXPECT_EQ(result_->executed.size(), kAllStages.size());
  const auto& root = result_->output_dir;
  for (const char* sub : {"datasets", "manifests", "reports", "checkpoints"}) EXPECT_TRUE(fs::is_directory(root / sub));
  EXPECT_EQ(line_count(root / "datasets/foundational.jsonl"), result_->counts.at("foundational"));
  EXPECT_FALSE(fs::exists(root / "reports/failure.json"));
}

TEST_F(MockPipeline, DescriptorsMatchDatasetsAndCarryHash) {
  const auto& root = result_->output_dir;
  const auto s1 = json::parse(testing::read_file(root / "manifests/stage1_foundational.json"));
  const auto s2 = json::parse(testing::read_file(root / "manifests/stage2_conversational.json"));
  EXPECT_EQ(s1.at("stage"), 1);
  EXPECT_EQ(s2.at("stage"), 2);
  EXPECT_EQ(s1.at("count").get<std::size_t>(), line_count(root / "datasets/foundational.jsonl"));
  EXPECT_EQ(s2.at("count").get<std::size_t>(), line_count(root / "datasets/conversational.jsonl"));
  EXPECT_EQ(s1.at("config_hash"), hex64(config_->hash()));
  EXPECT_EQ(s1.at("datasets")[0], "../datasets/foundational.jsonl");
  for (const auto& e : fs::directory_iterator(root / "manifests")) {
    if (e.path().extension() != ".jsonl") continue;
    EXPECT_EQ(SelectionManifest::read(e.path()).config_hash(), config_->hash()) << e.path();
  }
}

TEST_F(MockPipeline, RerunGivesIdenticalTree) {
  const auto again = run_pipeline(config_at("run_again"));
  ASSERT_EQ(again.status, RunStatus::ok);
  EXPECT_EQ(output_tree_hash(again.output_dir), reference_hash_);
}

TEST_F(MockPipeline, WorkerCountDoesNotChangeOutputs) {
  auto c = config_at("run_workers");
  c.workers = 3;
  const auto r = run_pipeline(c);
  ASSERT_EQ(r.status, RunStatus::ok);
  EXPECT_EQ(output_tree_hash(r.output_dir), reference_hash_);
}

/// Property: stopping after any stage and resuming equals the uninterrupted run.
TEST_F(MockPipeline, ResumeAfterEveryStageEqualsRestart) {
  for (auto s : kAllStages) {
    if (s == Stage::package) continue;
    const auto c = config_at(std::string("run_stop_") + std::string(to_string(s)));
    const auto first = run_pipeline(c, {.resume = false, .stop_after = s});
    ASSERT_EQ(first.status, RunStatus::stopped) << to_string(s);
    const auto resumed = run_pipeline(c, {.resume = true});
    ASSERT_EQ(resumed.status, RunStatus::ok) << to_string(s);
    EXPECT_FALSE(resumed.reused.empty());
    EXPECT_EQ(resumed.reused.back(), s);
    EXPECT_EQ(output_tree_hash(resumed.output_dir), reference_hash_) << to_string(s);
  }
}

/// Property: every output id has manifest rows, and evolved ids reach the raw
/// pool through their parents.
TEST_F(MockPipeline, EveryOutputIdTracesToThePool) {
  const auto& root = result_->output_dir;
  std::map<std::string, std::set<std::string>> stages_of;
  std::map<std::string, std::string> parent;  // evolved id -> input id
  for (const auto& e : fs::directory_iterator(root / "manifests")) {
    if (e.path().extension() != ".jsonl") continue;
    const auto manifest = SelectionManifest::read(e.path());
    for (const auto& row : manifest.rows()) {
      stages_of[row.id].insert(row.stage);
      if (row.stage == "evolve" && row.scores.contains("input_id") && row.id != row.scores.at("input_id"))
        parent[row.id] = row.scores.at("input_id").get<std::string>();
    }
  }
  for (const char* name : {"foundational", "conversational"}) {
    const auto records = read_dataset(root / "datasets" / (std::string(name) + ".jsonl"));
    for (const auto& r : records) {
      ASSERT_TRUE(stages_of.contains(r.id)) << r.id;
      std::string id = r.id;
      for (int hops = 0; !stages_of[id].contains("ingest"); ++hops) {
        ASSERT_LT(hops, 10) << r.id;
        ASSERT_TRUE(parent.contains(id)) << id;
        id = parent.at(id);
      }
      if (parent.contains(r.id)) EXPECT_EQ(r.meta.at("parent_id").get<std::string>(), parent.at(r.id));
    }
  }
}

TEST_F(MockPipeline, StageDecisionsCoverTheirInputs) {
  const auto& root = result_->output_dir;
  const auto pool = read_dataset(dir_->path() / "pool.jsonl");
  std::set<std::string> selected_rows;
  const auto select = SelectionManifest::read(root / "manifests/select.jsonl");
  for (const auto& row : select.rows()) selected_rows.insert(row.id);
  for (const auto& r : pool) EXPECT_TRUE(selected_rows.contains(r.id)) << r.id;
  EXPECT_EQ(SelectionManifest::read(root / "manifests/ingest.jsonl").rows().size(), pool.size());
}

TEST_F(MockPipeline, StatsFilesWritten) {
  const auto& root = result_->output_dir;
  const auto stats = json::parse(testing::read_file(root / "reports/stats/conversational/stats.json"));
  EXPECT_EQ(stats.at("records").get<std::size_t>(), result_->counts.at("conversational"));
  EXPECT_TRUE(fs::exists(root / "reports/stats/foundational/turns.csv"));
  EXPECT_TRUE(fs::exists(root / "reports/taxonomy.json"));
  EXPECT_TRUE(fs::exists(root / "reports/evolution/round_0.jsonl"));
  EXPECT_TRUE(fs::exists(root / "reports/warnings.json"));
}

TEST_F(MockPipeline, BudgetExhaustionIsResumable) {
  auto c = config_at("run_budget");
  c.gateway.call_budget = 150;
  const auto first = run_pipeline(c);
  ASSERT_EQ(first.status, RunStatus::budget_exhausted);
  EXPECT_EQ(exit_code(first.status), 4);
  const auto failure = json::parse(testing::read_file(first.output_dir / "reports/failure.json"));
  EXPECT_EQ(failure.at("exit_code"), 4);
  EXPECT_EQ(failure.at("stage"), to_string(*first.failed_stage));

  c.gateway.call_budget.reset();
  const auto resumed = run_pipeline(c, {.resume = true});
  ASSERT_EQ(resumed.status, RunStatus::ok) << resumed.error;
  EXPECT_FALSE(fs::exists(resumed.output_dir / "reports/failure.json"));
  EXPECT_EQ(output_tree_hash(resumed.output_dir), reference_hash_);
}

TEST_F(MockPipeline, ResumeRejectsChangedConfig) {
  auto c = config_at("run_changed");
  ASSERT_EQ(run_pipeline(c, {.stop_after = Stage::ingest}).status, RunStatus::stopped);
  c.seed += 1;
  const auto r = run_pipeline(c, {.resume = true});
  EXPECT_EQ(r.status, RunStatus::config_error);
}

TEST_F(MockPipeline, MissingTargetsIsAConfigError) {
  auto c = config_at("run_no_targets");
  c.paths.targets = "no_such_dir";
  const auto r = run_pipeline(c);
  EXPECT_EQ(r.status, RunStatus::config_error);
  ASSERT_TRUE(r.failed_stage);
  EXPECT_EQ(*r.failed_stage, Stage::select);
  EXPECT_TRUE(fs::exists(r.output_dir / "reports/failure.json"));
}

TEST(TrainingManifests, OneStageMergesIntoASingleDescriptor) {
  TempDir dir;
  const std::vector<InstructionRecord> a{make_record("a", "x"), make_record("b", "y")};
  const std::vector<InstructionRecord> b{make_record("c", "z")};
  write_dataset(a, dir / "f.jsonl");
  write_dataset(b, dir / "c.jsonl");
  const auto two = emit_training_manifests(dir / "f.jsonl", dir / "c.jsonl", 9, false, dir / "m");
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].name, "foundational");
  EXPECT_EQ(two[1].count, 1u);
  const auto one = emit_training_manifests(dir / "f.jsonl", dir / "c.jsonl", 9, true, dir / "m");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].count, 3u);
  EXPECT_TRUE(fs::exists(dir / "m/stage1_merged.json"));
  EXPECT_FALSE(fs::exists(dir / "m/stage2_conversational.json"));
}

TEST(ReportStats, EmptyDatasetIsZeroed) {
  TempDir dir;
  const auto b = report_stats({}, dir.path());
  EXPECT_EQ(b.records, 0u);
  EXPECT_TRUE(b.turns.fractions_undefined);
  for (double f : b.turns.fractions) EXPECT_EQ(f, 0.0);
  EXPECT_TRUE(b.label_frequency.empty());
  const auto j = json::parse(testing::read_file(dir / "stats.json"));
  EXPECT_EQ(j.at("turns").at("total"), 0);
  EXPECT_EQ(testing::read_file(dir / "labels.csv"), "label,count\n");
}

TEST(ReportStats, LabeledFixtureMatchesHandTally) {
  TempDir dir;
  std::vector<InstructionRecord> recs;
  // first levels: Coding x3, Math x2, Writing x1 (one record carries two)
  recs.push_back(testing::with_labels(make_record("a", "x"), {"python"}, {"Coding"}));
  recs.push_back(testing::with_labels(make_record("b", "x", 3), {"python", "algebra"}, {"Coding", "Math"}));
  recs.push_back(testing::with_labels(make_record("c", "x"), {"sql"}, {"Coding"}));
  recs.push_back(testing::with_labels(make_record("d", "x", 6), {"algebra"}, {"Math"}));
  recs.push_back(testing::with_labels(make_record("e", "x"), {"poetry"}, {"Writing"}));
  recs.push_back(make_record("f", "unlabeled"));
  const auto b = report_stats(recs, dir.path());
  EXPECT_EQ(b.first_level, (std::map<std::string, std::size_t>{{"Coding", 3}, {"Math", 2}, {"Writing", 1}}));
  EXPECT_EQ(b.label_frequency,
            (std::map<std::string, std::size_t>{{"algebra", 2}, {"poetry", 1}, {"python", 2}, {"sql", 1}}));
  EXPECT_EQ(b.labeled, 5u);
  EXPECT_EQ(b.turns.counts[0], 4u);
  EXPECT_EQ(b.turns.counts[1], 1u);
  EXPECT_EQ(b.turns.counts[2], 1u);
  EXPECT_NE(testing::read_file(dir / "first_level.csv").find("Coding,3\n"), std::string::npos);
}

TEST(ReportStats, TurnMixFractions) {
  std::vector<InstructionRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(make_record("r" + std::to_string(i), "x", i < 7 ? 1 : i < 9 ? 3 : 6));
  const auto b = compute_stats(recs);
  EXPECT_NEAR(b.turns.fractions[0], 0.7, 1e-9);
  EXPECT_NEAR(b.turns.fractions[1], 0.2, 1e-9);
  EXPECT_NEAR(b.turns.fractions[2], 0.1, 1e-9);
  EXPECT_NEAR(b.turns.fractions[3], 0.0, 1e-9);
}

}  // namespace
}  // namespace curate
