#include <gtest/gtest.h>

#include <set>

#include "curate/domain_select.hpp"
#include "curate/errors.hpp"
#include "support.hpp"

namespace curate {
namespace {

using testing::make_record;

std::vector<std::string> ids_of(const std::vector<InstructionRecord>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs) out.push_back(r.id);
  return out;
}

void expect_stage_partition(const SelectionManifest& m, const std::string& stage, std::size_t input) {
  const auto s = m.summaries();
  ASSERT_TRUE(s.contains(stage)) << stage;
  EXPECT_EQ(s.at(stage).kept + s.at(stage).dropped, input);
  std::set<std::string> ids;
  for (const auto& row : m.rows_for(stage)) {
    EXPECT_TRUE(ids.insert(row.id).second) << "duplicate decision for " << row.id;
    EXPECT_FALSE(row.reason_code.empty());
  }
}

TEST(FilterKnowledgeSources, EmptyDenylistLeavesStreamUnchanged) {
  std::vector<InstructionRecord> in{make_record("a", "p", 1, Domain::knowledge, "sst2"),
                                    make_record("b", "q", 1, Domain::knowledge, "squad")};
  SelectionManifest m;
  EXPECT_EQ(filter_knowledge_sources(in, {}, m), in);
}

TEST(FilterKnowledgeSources, DropsDenylistedSources) {
  std::vector<InstructionRecord> in;
  const std::vector<std::string> sources{"sst2", "squad", "SST-2", "flan/nq", "triviaqa"};
  for (std::size_t i = 0; i < sources.size(); ++i)
    in.push_back(make_record("r" + std::to_string(i), "p" + std::to_string(i), 1, Domain::knowledge, sources[i]));
  SelectionManifest m;
  const auto out = filter_knowledge_sources(in, {"sst2"}, m);
  EXPECT_EQ(ids_of(out), (std::vector<std::string>{"r1", "r3", "r4"}));
  expect_stage_partition(m, "knowledge_source_filter", 5);
  EXPECT_EQ(m.summaries().at("knowledge_source_filter").reasons.at("low_knowledge_source"), 2u);
}

TEST(FilterKnowledgeSources, DefaultDenylistCoversSentimentSets) {
  const auto& d = default_knowledge_denylist();
  EXPECT_TRUE(source_denied("sst2", d));
  EXPECT_FALSE(source_denied("flan2022/imdb_reviews", d));
  EXPECT_TRUE(source_denied("flan2022/IMDb", d));
  EXPECT_TRUE(source_denied("SST-2", d));
  EXPECT_FALSE(source_denied("natural_questions", d));
}

TEST(DedupAugmented, DistinctKeysUnchanged) {
  std::vector<InstructionRecord> in{make_record("a", "one"), make_record("b", "two"), make_record("c", "three")};
  SelectionManifest m;
  const auto out = dedup_augmented(in, [](const auto& r) { return augmentation_key(r); }, 2, m);
  EXPECT_EQ(out, in);
}

TEST(DedupAugmented, KeepsFirstTwoPerGroup) {
  std::vector<InstructionRecord> in;
  for (int i = 0; i < 5; ++i) in.push_back(make_record("r" + std::to_string(i), "Same seed passage, please!"));
  SelectionManifest m;
  const auto out = dedup_augmented(in, [](const auto& r) { return augmentation_key(r); }, 2, m);
  EXPECT_EQ(ids_of(out), (std::vector<std::string>{"r0", "r1"}));
  expect_stage_partition(m, "augmented_dedup", 5);
}

TEST(DedupAugmented, QaAndQuestionGenerationFromOneSeedShareAGroup) {
  // Both samples open with the same seed passage; only the task suffix
  // differs beyond the key prefix.
  std::string passage;
  for (int i = 0; i < 70; ++i) passage += "word" + std::to_string(i) + " ";
  auto qa = make_record("qa", passage + "Question: what is word3?");
  auto qg = make_record("qg", passage + "Generate a question about this passage.");
  EXPECT_EQ(augmentation_key(qa), augmentation_key(qg));
  SelectionManifest m;
  const auto out = dedup_augmented({qa, qg, make_record("x", passage + "third")},
                                   [](const auto& r) { return augmentation_key(r); }, 1, m);
  EXPECT_EQ(ids_of(out), (std::vector<std::string>{"qa"}));
}

TEST(DedupAugmented, IdempotentProperty) {
  Rng rng(9);
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<InstructionRecord> in;
    for (int i = 0; i < 40; ++i) in.push_back(make_record("r" + std::to_string(i), "k" + std::to_string(rng.below(8))));
    const auto key = [](const InstructionRecord& r) { return augmentation_key(r); };
    SelectionManifest m;
    const auto once = dedup_augmented(in, key, 1 + iter % 3, m);
    const auto twice = dedup_augmented(once, key, 1 + iter % 3, m);
    EXPECT_EQ(once, twice);
  }
}

std::vector<InstructionRecord> arithmetic_chat_pool(std::size_t n_each, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<InstructionRecord> pool;
  for (std::size_t i = 0; i < n_each; ++i) {
    auto a = make_record("arith" + std::to_string(i), testing::random_sentence(rng, testing::arithmetic_words(), 12), 1,
                         Domain::math);
    a.meta["topic"] = "arithmetic";
    pool.push_back(std::move(a));
    auto c = make_record("chat" + std::to_string(i), testing::random_sentence(rng, testing::chat_words(), 12), 1,
                         Domain::math);
    c.meta["topic"] = "chat";
    pool.push_back(std::move(c));
  }
  return pool;
}

TEST(DsirSelectDomain, PoolEqualsTargetsAndQuotaEqualsPool) {
  auto pool = arithmetic_chat_pool(10, 1);
  std::vector<std::string> targets;
  for (const auto& r : pool) targets.push_back(r.human_text());
  SelectionManifest m;
  DsirConfig cfg;
  const auto sel = dsir_select_domain(pool, targets, pool.size(), cfg, 5, m, "select:math");
  EXPECT_EQ(ids_of(sel.selected), ids_of(pool));
  expect_stage_partition(m, "select:math", pool.size());
}

TEST(DsirSelectDomain, ArithmeticTargetsSelectArithmeticMajority) {
  const auto pool = arithmetic_chat_pool(200, 2);
  Rng rng(3);
  std::vector<std::string> targets;
  for (int i = 0; i < 100; ++i) targets.push_back(testing::random_sentence(rng, testing::arithmetic_words(), 12));
  SelectionManifest m;
  const auto sel = dsir_select_domain(pool, targets, 100, DsirConfig{}, 11, m, "select:math");
  ASSERT_EQ(sel.selected.size(), 100u);
  std::size_t arith = 0;
  for (const auto& r : sel.selected) {
    arith += r.meta.at("topic") == "arithmetic";
    ASSERT_TRUE(r.scores && r.scores->log_importance_weight);
  }
  EXPECT_GT(arith, 50u);
  EXPECT_EQ(m.rows().size(), pool.size());
  EXPECT_TRUE(m.rows().front().scores.contains("log_weight"));
}

TEST(DsirSelectDomain, HumanEvalStyleTargetsFavorCode) {
  Rng rng(4);
  std::vector<InstructionRecord> pool;
  for (int i = 0; i < 150; ++i) {
    pool.push_back(make_record("code" + std::to_string(i), testing::random_sentence(rng, testing::code_words(), 14), 1,
                               Domain::code));
    pool.push_back(make_record("chat" + std::to_string(i), testing::random_sentence(rng, testing::chat_words(), 14), 1,
                               Domain::code));
  }
  std::vector<std::string> targets;
  for (int i = 0; i < 60; ++i)
    targets.push_back("def f(x): \"\"\" " + testing::random_sentence(rng, testing::code_words(), 10) + " \"\"\"");
  SelectionManifest m;
  const auto sel = dsir_select_domain(pool, targets, 80, DsirConfig{}, 1, m, "select:code");
  std::size_t code = 0;
  for (const auto& r : sel.selected) code += r.id.starts_with("code");
  EXPECT_GT(code, 60u);
}

TEST(DsirSelectDomain, Errors) {
  const auto pool = arithmetic_chat_pool(3, 1);
  SelectionManifest m;
  EXPECT_THROW(dsir_select_domain(pool, {}, 1, DsirConfig{}, 0, m, "s"), InvalidArgument);
  try {
    dsir_select_domain(pool, {"x"}, 7, DsirConfig{}, 0, m, "s");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("6"), std::string::npos);
  }
}

TEST(DomainPlan, Validation) {
  DomainPlan p{Domain::math, Strategy::dsir, std::nullopt, 10, 0};
  EXPECT_THROW(p.validate(), ConfigError);
  p.target_prompt_path = "targets.txt";
  EXPECT_NO_THROW(p.validate());
  p.quota = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(SupplementWeakDomains, AllSaturatedAddsNothing) {
  std::vector<DomainPlan> plans{{Domain::knowledge, Strategy::source_rules, std::nullopt, 5, 0}};
  const GapReport report{{"knowledge", {Verdict::saturated, "ok"}}};
  SelectionManifest m;
  const auto res = supplement_weak_domains(report, {}, plans, {}, {}, SelectionConfig{}, 1, m);
  EXPECT_TRUE(res.added.empty());
  EXPECT_EQ(plans[0].relaxation_level, 0);
}

TEST(SupplementWeakDomains, GapGrowsQuotaByFactor) {
  EXPECT_EQ(relaxed_quota(10, 0, 1.5), 10u);
  EXPECT_EQ(relaxed_quota(10, 1, 1.5), 15u);
  EXPECT_EQ(relaxed_quota(10, 2, 1.5), 23u);  // ceil(22.5)
  EXPECT_DOUBLE_EQ(relaxed_noise(1.0, 1, 1.25), 1.25);

  std::vector<InstructionRecord> pool;
  for (int i = 0; i < 40; ++i) pool.push_back(make_record("k" + std::to_string(i), "fact " + std::to_string(i), 1, Domain::knowledge));
  std::vector<DomainPlan> plans{{Domain::knowledge, Strategy::source_rules, std::nullopt, 10, 0}};
  SelectionConfig cfg;
  SelectionManifest m;
  const auto base = select_domain(plans[0], pool, {}, cfg, 3, m);
  ASSERT_EQ(base.selected.size(), 10u);
  const auto res = supplement_weak_domains({{"knowledge", {Verdict::gap, "below baseline"}}},
                                           {{Domain::knowledge, pool}}, plans, {{Domain::knowledge, base.selected}}, {},
                                           cfg, 3, m);
  EXPECT_EQ(plans[0].relaxation_level, 1);
  ASSERT_TRUE(res.added.contains(Domain::knowledge));
  EXPECT_EQ(res.added.at(Domain::knowledge).size(), 5u);  // uniform sampling nests, so 15 - 10 new
  for (const auto& r : res.added.at(Domain::knowledge)) EXPECT_EQ(r.meta.at("weak_domain_supplement"), 1);
  expect_stage_partition(m, "supplement:knowledge:L1", pool.size());
}

TEST(SupplementWeakDomains, RepeatedGapIsMonotoneAndWarnsOnExhaustion) {
  auto pool = arithmetic_chat_pool(20, 7);
  std::vector<std::string> targets{"add the numbers and compute the sum", "how many apples are left"};
  std::vector<DomainPlan> plans{{Domain::math, Strategy::dsir, "targets.txt", 8, 0}};
  SelectionConfig cfg;
  SelectionManifest m;
  std::map<Domain, std::vector<InstructionRecord>> current{
      {Domain::math, select_domain(plans[0], pool, targets, cfg, 1, m).selected}};
  std::size_t previous = current[Domain::math].size();
  std::vector<std::string> warnings;
  for (int round = 0; round < 3; ++round) {
    auto res = supplement_weak_domains({{"math", {Verdict::gap, ""}}}, {{Domain::math, pool}}, plans, current,
                                       {{Domain::math, targets}}, cfg, 1, m);
    for (auto& r : res.added[Domain::math]) current[Domain::math].push_back(std::move(r));
    warnings.insert(warnings.end(), res.warnings.begin(), res.warnings.end());
    EXPECT_GE(current[Domain::math].size(), previous);
    previous = current[Domain::math].size();
  }
  EXPECT_EQ(plans[0].relaxation_level, 3);
  // 8 -> 12 -> 18 -> 27 stays inside the 40-record pool.
  EXPECT_EQ(current[Domain::math].size(), 27u);
  const auto cur_ids = ids_of(current[Domain::math]);
  std::set<std::string> unique(cur_ids.begin(), cur_ids.end());
  EXPECT_EQ(unique.size(), current[Domain::math].size());

  // Tiny pool: relaxation beyond it warns and returns a partial supplement.
  std::vector<DomainPlan> small{{Domain::math, Strategy::dsir, "targets.txt", 39, 0}};
  auto res = supplement_weak_domains({{"math", {Verdict::gap, ""}}}, {{Domain::math, pool}}, small, {},
                                     {{Domain::math, targets}}, cfg, 1, m);
  EXPECT_EQ(res.added[Domain::math].size(), pool.size());
  EXPECT_FALSE(res.warnings.empty());
}

TEST(SupplementWeakDomains, MissingVerdictIsConfigError) {
  std::vector<DomainPlan> plans{{Domain::code, Strategy::source_rules, std::nullopt, 5, 0}};
  SelectionManifest m;
  EXPECT_THROW(supplement_weak_domains({}, {}, plans, {}, {}, SelectionConfig{}, 0, m), ConfigError);
}

TEST(GapReport, ParsesFileSchema) {
  const auto r = parse_gap_report(json::parse(R"({"math":{"verdict":"gap","note":"GSM8K below baseline"},
                                                  "code":{"verdict":"saturated","note":""}})"));
  EXPECT_EQ(r.at("math").verdict, Verdict::gap);
  EXPECT_EQ(r.at("math").note, "GSM8K below baseline");
  EXPECT_EQ(r.at("code").verdict, Verdict::saturated);
  EXPECT_THROW(parse_gap_report(json::parse(R"({"math":{"verdict":"meh"}})")), ConfigError);
}

TEST(AssembleFoundational, EmptySeedSetIsUnionOfSelections) {
  SelectionManifest m;
  const auto out = assemble_foundational({{"domain:code", {make_record("c1", "x")}}, {"domain:math", {make_record("m1", "y")}}},
                                         {}, 1, m);
  const auto out_ids = ids_of(out);
  std::set<std::string> ids(out_ids.begin(), out_ids.end());
  EXPECT_EQ(ids, (std::set<std::string>{"c1", "m1"}));
}

TEST(AssembleFoundational, ShuffleStableAcrossReruns) {
  std::vector<InstructionRecord> sel, seeds;
  for (int i = 0; i < 100; ++i) sel.push_back(make_record("s" + std::to_string(i), "p"));
  for (int i = 0; i < 20; ++i) seeds.push_back(make_record("seed" + std::to_string(i), "q"));
  SelectionManifest m1, m2, m3;
  const auto a = assemble_foundational({{"domain:knowledge", sel}}, seeds, 42, m1);
  const auto b = assemble_foundational({{"domain:knowledge", sel}}, seeds, 42, m2);
  const auto c = assemble_foundational({{"domain:knowledge", sel}}, seeds, 43, m3);
  ASSERT_EQ(a.size(), 120u);
  EXPECT_EQ(ids_of(a), ids_of(b));
  EXPECT_NE(ids_of(a), ids_of(c));
  EXPECT_EQ(m1.hash(), m2.hash());
  std::size_t replay = 0;
  for (const auto& r : a) replay += r.meta.at("origin") == "replay_seed";
  EXPECT_EQ(replay, 20u);
}

TEST(AssembleFoundational, IdCollisionIsAnError) {
  SelectionManifest m;
  try {
    assemble_foundational({{"domain:code", {make_record("dup", "x")}}}, {make_record("dup", "y")}, 1, m);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
  }
}

}  // namespace
}  // namespace curate
