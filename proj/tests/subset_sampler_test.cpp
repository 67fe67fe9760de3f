#include <gtest/gtest.h>

#include "curate/errors.hpp"
#include "curate/subset_sampler.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace curate {
namespace {

using testing::make_record;
using testing::TempDir;

InstructionRecord rewarded(std::string id, std::vector<std::string> labels, double reward) {
  auto r = testing::with_labels(make_record(std::move(id), "prompt"), std::move(labels));
  r.mutable_scores().reward = reward;
  return r;
}

std::vector<std::string> ids_in_order(std::span<const InstructionRecord> recs, const SampleResult& s) {
  std::vector<std::string> out;
  for (auto i : s.order) out.push_back(recs[i].id);
  return out;
}

TEST(RewardSample, WholeDatasetWhenNEqualsSize) {
  const auto recs = oracle::reward_fixture(50, 6, 1);
  const auto s = reward_prioritized_sample(recs, 50, 3);
  std::set<std::size_t> all(s.order.begin(), s.order.end());
  EXPECT_EQ(all.size(), 50u);
}

TEST(RewardSample, TwoLabelsThreeRecordsEach) {
  const std::vector<InstructionRecord> recs{rewarded("a1", {"A"}, 1.0), rewarded("a2", {"A"}, 5.0),
                                            rewarded("a3", {"A"}, 3.0), rewarded("b1", {"B"}, 2.0),
                                            rewarded("b2", {"B"}, 9.0), rewarded("b3", {"B"}, 4.0)};
  const auto s = reward_prioritized_sample(recs, 4, 0);
  const auto ids = ids_in_order(recs, s);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()), (std::set<std::string>{"a2", "a3", "b2", "b3"}));
  EXPECT_EQ(s.per_label, (std::map<std::string, std::size_t>{{"A", 2}, {"B", 2}}));
  EXPECT_TRUE(s.exceptions.empty());
}

TEST(RewardSample, SingleLabelIsTopN) {
  std::vector<InstructionRecord> recs;
  for (int i = 0; i < 20; ++i) recs.push_back(rewarded("r" + std::to_string(i), {"only"}, (i * 7) % 20));
  const auto s = reward_prioritized_sample(recs, 5, 9);
  std::vector<double> picked;
  for (auto i : s.order) picked.push_back(*recs[i].scores->reward);
  EXPECT_EQ(picked, (std::vector<double>{19, 18, 17, 16, 15}));
}

TEST(RewardSample, MultiLabelRecordConsumedOnceAndExceptionLogged) {
  // With B visited first, pass 2 lets B take x, which also carries A, while
  // A's better a2 stays out.
  const std::vector<InstructionRecord> recs{rewarded("x", {"A", "B"}, 1.0), rewarded("a1", {"A"}, 5.0),
                                            rewarded("a2", {"A"}, 3.0), rewarded("b1", {"B"}, 6.0)};
  std::uint64_t seed = 0;
  while (label_visit_order({"A", "B"}, seed)[0] != "B") ++seed;
  const auto s = reward_prioritized_sample(recs, 3, seed);
  EXPECT_EQ(ids_in_order(recs, s), (std::vector<std::string>{"b1", "a1", "x"}));
  EXPECT_EQ(s.via, (std::vector<std::string>{"B", "A", "B"}));
  ASSERT_EQ(s.exceptions.size(), 1u);
  EXPECT_EQ(s.exceptions[0].label, "A");
  EXPECT_EQ(s.exceptions[0].selected_id, "x");
  EXPECT_EQ(s.exceptions[0].selected_via, "B");
  EXPECT_EQ(s.exceptions[0].unselected_id, "a2");

  std::uint64_t other = 0;
  while (label_visit_order({"A", "B"}, other)[0] != "A") ++other;
  const auto t = reward_prioritized_sample(recs, 3, other);
  EXPECT_EQ(ids_in_order(recs, t), (std::vector<std::string>{"a1", "b1", "a2"}));
  EXPECT_TRUE(t.exceptions.empty());
}

TEST(RewardSample, ErrorsAndDeterminism) {
  const auto recs = oracle::reward_fixture(30, 4, 2);
  EXPECT_THROW(reward_prioritized_sample(recs, 31, 0), InvalidArgument);
  auto missing = recs;
  missing[3].scores->reward.reset();
  EXPECT_THROW(reward_prioritized_sample(missing, 5, 0), InvalidArgument);
  auto unlabeled = recs;
  unlabeled[4].labels.reset();
  EXPECT_THROW(reward_prioritized_sample(unlabeled, 5, 0), InvalidArgument);
  EXPECT_EQ(reward_prioritized_sample(recs, 20, 5).order, reward_prioritized_sample(recs, 20, 5).order);
}

TEST(RewardSample, TaxonomyAliasesMergeLabels) {
  LabelTaxonomy t;
  t.second_level = {"math"};
  t.first_level = {"STEM"};
  t.parent = {{"math", "STEM"}};
  t.alias = {{"maths", "math"}};
  const std::vector<InstructionRecord> recs{rewarded("a", {"maths"}, 1.0), rewarded("b", {"math"}, 2.0)};
  const auto s = reward_prioritized_sample(recs, 2, 0, &t);
  EXPECT_EQ(s.per_label, (std::map<std::string, std::size_t>{{"math", 2}}));
}

/// Property: matches the direct-simulation oracle for every prefix.
TEST(RewardSample, MatchesOracleAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto recs = oracle::reward_fixture(300, 1 + seed * 3, seed);
    for (std::size_t n : {std::size_t{1}, std::size_t{37}, std::size_t{300}})
      EXPECT_EQ(ids_in_order(recs, reward_prioritized_sample(recs, n, seed)), oracle::reward_ladder(recs, n, seed));
  }
}

/// Property: per label, selected rewards dominate unselected ones except for logged cases.
TEST(RewardSample, WithinLabelDominanceExceptLoggedExceptions) {
  const auto recs = oracle::reward_fixture(400, 10, 8);
  const auto s = reward_prioritized_sample(recs, 120, 8);
  std::set<std::string> selected, excused;
  for (auto i : s.order) selected.insert(recs[i].id);
  for (const auto& e : s.exceptions) excused.insert(e.label + "|" + e.selected_id);
  std::map<std::string, std::vector<const InstructionRecord*>> by_label;
  for (const auto& r : recs)
    for (const auto& l : r.labels->second_level) by_label[l].push_back(&r);
  for (const auto& [label, members] : by_label) {
    double best_unselected = -1e300;
    for (const auto* r : members)
      if (!selected.contains(r->id)) best_unselected = std::max(best_unselected, *r->scores->reward);
    for (const auto* r : members)
      if (selected.contains(r->id) && *r->scores->reward < best_unselected)
        EXPECT_TRUE(excused.contains(label + "|" + r->id)) << label << " " << r->id;
  }
}

TEST(SizeLadder, SingleSizeEqualsSample) {
  TempDir dir;
  const auto recs = oracle::reward_fixture(100, 5, 3);
  const auto ladder = emit_size_ladder(recs, {40}, 3, dir.path());
  EXPECT_EQ(ladder.subsets[0], ids_in_order(recs, reward_prioritized_sample(recs, 40, 3)));
}

TEST(SizeLadder, NestedFilesAndManifest) {
  TempDir dir;
  const auto recs = oracle::reward_fixture(60, 4, 5);
  const auto ladder = emit_size_ladder(recs, {10, 20}, 5, dir.path());
  const std::set<std::string> small(ladder.subsets[0].begin(), ladder.subsets[0].end());
  const std::set<std::string> large(ladder.subsets[1].begin(), ladder.subsets[1].end());
  EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end()));

  const auto file10 = read_dataset(dir / "subset_10.jsonl");
  EXPECT_EQ(file10.size(), 10u);
  const auto manifest = json::parse(testing::read_file(dir / "ladder_manifest.json"));
  ASSERT_EQ(manifest.at("rungs").size(), 2u);
  std::size_t total = 0;
  for (const auto& [label, count] : manifest.at("rungs")[1].at("per_label").items()) total += count.get<std::size_t>();
  EXPECT_EQ(total, 20u);
  EXPECT_EQ(manifest.at("rungs")[0].at("file"), "subset_10.jsonl");
  EXPECT_NE(testing::read_file(dir / "ladder_stats.csv").find("size,labels_covered"), std::string::npos);
}

TEST(SizeLadder, Errors) {
  TempDir dir;
  const auto recs = oracle::reward_fixture(20, 3, 1);
  EXPECT_THROW(emit_size_ladder(recs, {10, 5}, 0, dir.path()), InvalidArgument);
  EXPECT_THROW(emit_size_ladder(recs, {10, 10}, 0, dir.path()), InvalidArgument);
  EXPECT_THROW(emit_size_ladder(recs, {10, 21}, 0, dir.path()), InvalidArgument);
  EXPECT_THROW(emit_size_ladder(recs, {}, 0, dir.path()), InvalidArgument);
}

TEST(SizeLadder, ThreeSizesMatchOracle) {
  TempDir dir;
  const auto recs = oracle::reward_fixture(1500, 40, 17);
  const auto ladder = emit_size_ladder(recs, {100, 500, 1000}, 17, dir.path());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(ladder.subsets[k], oracle::reward_ladder(recs, ladder.rungs[k].size, 17));
}

}  // namespace
}  // namespace curate
