#include <gtest/gtest.h>

#include <atomic>
#include <deque>
#include <mutex>

#include "curate/errors.hpp"
#include "curate/evolve_diagnose.hpp"
#include "evolution_fixture.hpp"
#include "support.hpp"

namespace curate {
namespace {

using fixture::task_number;
using testing::make_record;
using testing::TempDir;
using testing::with_labels;

GatewayConfig quick_config() {
  GatewayConfig c;
  c.retry.initial_backoff = std::chrono::milliseconds(0);
  return c;
}

/// Chat replies per role from fixed queues; the last reply of a queue repeats.
std::unique_ptr<ModelGateway> scripted_roles(std::map<ModelRole, std::vector<std::string>> replies,
                                             std::shared_ptr<std::atomic<int>> chat_calls = {}) {
  auto state = std::make_shared<std::map<ModelRole, std::deque<std::string>>>();
  for (auto& [role, r] : replies) (*state)[role] = std::deque<std::string>(r.begin(), r.end());
  auto mutex = std::make_shared<std::mutex>();
  return std::make_unique<ModelGateway>(
      quick_config(), std::make_unique<FunctionBackend>([state, mutex, chat_calls](const json& req) -> json {
        if (req.at("kind") != "chat") return MockBackend(0, 256).call(req);
        if (chat_calls) ++*chat_calls;
        std::lock_guard lock(*mutex);
        auto& q = (*state)[parse_model_role(req.at("role").get<std::string>())];
        if (q.empty()) throw GatewayError(GatewayErrorCode::http, "no scripted reply");
        const auto text = q.front();
        if (q.size() > 1) q.pop_front();
        return {{"text", text}};
      }));
}

std::vector<std::string> ids_of(const std::vector<InstructionRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.id);
  return out;
}

std::string serialize_all(const std::vector<InstructionRecord>& records) {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  return out;
}

// ---- strategies and config ----

TEST(EvolveConfig, FourStrategiesWithInstructionSlot) {
  EvolveConfig c;
  std::set<std::string> texts;
  for (auto s : kAllStrategies) {
    EXPECT_NE(c.template_for(s).find("{instruction}"), std::string::npos);
    texts.insert(c.template_for(s));
    EXPECT_EQ(parse_evolve_strategy(to_string(s)), s);
  }
  EXPECT_EQ(texts.size(), 4u);
  EXPECT_THROW(parse_evolve_strategy("in_breadth"), ConfigError);
}

TEST(EvolveConfig, RoundTripAndTemplateFiles) {
  TempDir dir;
  testing::write_lines(dir / "deep.txt", {"Go deeper: {instruction}"});
  const auto c = EvolveConfig::from_json(
      {{"max_rounds", 3}, {"fan_out_all", true}, {"template_files", {{"deepening", "deep.txt"}}}}, dir.path());
  EXPECT_EQ(c.max_rounds, 3u);
  EXPECT_TRUE(c.fan_out_all);
  EXPECT_EQ(c.template_for(EvolveStrategy::deepening), "Go deeper: {instruction}\n");
  const auto again = EvolveConfig::from_json(c.to_json());
  EXPECT_EQ(again.to_json(), c.to_json());
  EXPECT_THROW(EvolveConfig::from_json({{"templates", {{"deepening", "no slot here"}}}}), ConfigError);
  EXPECT_THROW(EvolveConfig::from_json({{"template_files", {{"deepening", "missing.txt"}}}}, dir.path()), ConfigError);
  EXPECT_THROW(EvolveConfig::from_json({{"candidate_models", json::array()}}), ConfigError);
}

TEST(AssignedStrategy, RoundRobinFromSeededOffset) {
  std::set<EvolveStrategy> offsets;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const auto first = assigned_strategy(seed, 0, 0);
    offsets.insert(first);
    for (std::size_t i = 0; i < 12; ++i)
      EXPECT_EQ(assigned_strategy(seed, 0, i), kAllStrategies[(static_cast<std::size_t>(first) + i) % 4]);
  }
  EXPECT_GT(offsets.size(), 1u);
}

// ---- evolve_once ----

TEST(EvolveOnce, EchoGatewayTextBecomesLastHumanTurn) {
  auto g = scripted_roles({{ModelRole::rewriter, {"Explain recursion using exactly three examples."}},
                           {ModelRole::responder, {"Here are three examples."}}});
  auto seed = make_record("s1", "Explain recursion.", 2);
  const auto attempt = evolve_once(seed, EvolveStrategy::add_constraints, 0, *g, EvolveConfig{});
  ASSERT_TRUE(attempt.candidate);
  const auto& c = *attempt.candidate;
  EXPECT_EQ(attempt.rewritten, "Explain recursion using exactly three examples.");
  EXPECT_EQ(c.id, "s1.r0.add_constraints");
  ASSERT_EQ(c.conversations.size(), 4u);
  EXPECT_EQ(c.conversations[0], seed.conversations[0]);
  EXPECT_EQ(c.conversations[2].content, "Explain recursion using exactly three examples.");
  EXPECT_EQ(c.conversations[3], (Turn{Role::assistant, "Here are three examples."}));
  EXPECT_EQ(c.meta.at("parent_id"), "s1");
  EXPECT_EQ(c.meta.at("seed_id"), "s1");
  EXPECT_EQ(c.meta.at("strategy"), "add_constraints");
  EXPECT_EQ(c.meta.at("evolution_round"), 0);
  EXPECT_NO_THROW(validate(c));
}

TEST(EvolveOnce, FourStrategiesGiveFourTaggedCandidates) {
  ModelGateway g(quick_config());
  const auto seed = make_record("s1", "Write a function that reverses a list.");
  std::set<std::string> ids, tags;
  for (auto s : kAllStrategies) {
    const auto a = evolve_once(seed, s, 0, g, EvolveConfig{});
    ASSERT_TRUE(a.candidate);
    ids.insert(a.candidate->id);
    tags.insert(a.candidate->meta.at("strategy").get<std::string>());
  }
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_EQ(tags.size(), 4u);
}

TEST(EvolveOnce, GatewayFailureLeavesNoCandidate) {
  auto g = scripted_roles({});
  const auto seed = make_record("s1", "hello");
  const auto a = evolve_once(seed, EvolveStrategy::deepening, 0, *g, EvolveConfig{});
  EXPECT_FALSE(a.candidate);
  EXPECT_FALSE(a.error.empty());
  EXPECT_THROW(evolve_once(make_record("e", "   "), EvolveStrategy::deepening, 0, *g, EvolveConfig{}),
               InvalidArgument);
}

TEST(EvolveOnce, ProvenanceChainOverTwoRounds) {
  ModelGateway g(quick_config());
  const auto seed = make_record("s1", "Describe a sunset over the sea.");
  const auto a = evolve_once(seed, EvolveStrategy::concretizing, 0, g, EvolveConfig{});
  ASSERT_TRUE(a.candidate);
  const auto b = evolve_once(*a.candidate, EvolveStrategy::deepening, 1, g, EvolveConfig{});
  ASSERT_TRUE(b.candidate);
  EXPECT_EQ(b.candidate->meta.at("parent_id"), a.candidate->id);
  EXPECT_EQ(a.candidate->meta.at("parent_id"), "s1");
  EXPECT_EQ(b.candidate->meta.at("seed_id"), "s1");
  EXPECT_EQ(b.candidate->id, "s1.r0.concretizing.r1.deepening");
}

// ---- verify_rewrite ----

TEST(VerifyRewrite, IdenticalShortCircuitsWithoutCall) {
  auto calls = std::make_shared<std::atomic<int>>(0);
  auto g = scripted_roles({{ModelRole::judge, {"CHANGED_SAFE"}}}, calls);
  EXPECT_EQ(verify_rewrite("Same text.", "Same text.", *g, EvolveConfig{}), RewriteVerdict::semantically_unchanged);
  EXPECT_EQ(*calls, 0);
  EXPECT_EQ(g->calls_made(), 0u);
}

TEST(VerifyRewrite, ScriptedHarmful) {
  auto g = scripted_roles({{ModelRole::judge, {"harmful"}}});
  EXPECT_EQ(verify_rewrite("a", "b", *g, EvolveConfig{}), RewriteVerdict::harmful);
}

TEST(VerifyRewrite, ReplyParsing) {
  EXPECT_EQ(parse_judge_reply("CHANGED_SAFE"), RewriteVerdict::accepted);
  EXPECT_EQ(parse_judge_reply("Verdict: changed and safe."), RewriteVerdict::accepted);
  EXPECT_EQ(parse_judge_reply(" unchanged\n"), RewriteVerdict::semantically_unchanged);
  EXPECT_EQ(parse_judge_reply("HARMFUL"), RewriteVerdict::harmful);
  EXPECT_EQ(parse_judge_reply("maybe"), RewriteVerdict::malformed);
  EXPECT_EQ(parse_judge_reply(""), RewriteVerdict::malformed);
  EXPECT_EQ(parse_judge_reply("UNCHANGED or HARMFUL"), RewriteVerdict::malformed);
}

TEST(VerifyRewrite, BatchHistogramMatchesScript) {
  const std::vector<std::string> script{"CHANGED_SAFE", "UNCHANGED", "HARMFUL",      "???",          "CHANGED_SAFE",
                                        "CHANGED_SAFE", "harmful",   "CHANGED_SAFE", "unchanged", "CHANGED_SAFE"};
  auto g = scripted_roles({{ModelRole::judge, script}});
  std::map<RewriteVerdict, int> hist;
  for (int i = 0; i < 10; ++i)
    ++hist[verify_rewrite("orig " + std::to_string(i), "new " + std::to_string(i), *g, EvolveConfig{})];
  EXPECT_EQ(hist[RewriteVerdict::accepted], 5);
  EXPECT_EQ(hist[RewriteVerdict::semantically_unchanged], 2);
  EXPECT_EQ(hist[RewriteVerdict::harmful], 2);
  EXPECT_EQ(hist[RewriteVerdict::malformed], 1);
}

TEST(VerifyRewrite, GatewayFailureIsMalformed) {
  auto g = scripted_roles({});
  EXPECT_EQ(verify_rewrite("a", "b", *g, EvolveConfig{}), RewriteVerdict::malformed);
}

// ---- diagnosis ----

TEST(RefereeScore, Parsing) {
  EXPECT_EQ(parse_referee_score("Score: 7"), 7);
  EXPECT_EQ(parse_referee_score("score 10 out of 10"), 10);
  EXPECT_EQ(parse_referee_score("I would give it a 4/10."), 4);
  EXPECT_EQ(parse_referee_score("Score: 11"), std::nullopt);
  EXPECT_EQ(parse_referee_score("Score: 0"), std::nullopt);
  EXPECT_EQ(parse_referee_score("great answer"), std::nullopt);
}

/// Referee scoring by (task number, model): scores[k] = {a, b}.
std::unique_ptr<ModelGateway> scored_gateway(std::map<int, std::pair<int, int>> scores) {
  return std::make_unique<ModelGateway>(
      quick_config(), std::make_unique<FunctionBackend>([scores](const json& req) -> json {
        const auto role = parse_model_role(req.at("role").get<std::string>());
        const auto prompt = req.at("messages").back().at("content").get<std::string>();
        if (role == ModelRole::responder)
          return {{"text", "reply by " + req.at("model").get<std::string>() + " for task " +
                               std::to_string(task_number(prompt))}};
        const int k = task_number(prompt);
        const auto it = scores.find(k);
        if (it == scores.end()) return {{"text", "cannot rate"}};
        const bool b = prompt.find("reply by model-b") != std::string::npos;
        return {{"text", "Score: " + std::to_string(b ? it->second.second : it->second.first)}};
      }));
}

TEST(Diagnose, ThresholdZeroMarksNothing) {
  ModelGateway g(quick_config());
  std::vector<InstructionRecord> recs;
  for (int k = 0; k < 12; ++k)
    recs.push_back(with_labels(make_record("r" + std::to_string(k), "task " + std::to_string(k)), {"x"}, {"A"}));
  const auto d = diagnose_weak_abilities(recs, {"m1", "m2"}, 5, 0.0, g, 1, 0, EvolveConfig{});
  EXPECT_TRUE(d.weak_ids.empty());
  EXPECT_EQ(d.items.size(), 5u);
}

TEST(Diagnose, OneLowScoreFromEitherModelIsWeak) {
  auto g = scored_gateway({{0, {8, 8}}, {1, {9, 3}}});
  const std::vector<InstructionRecord> recs{with_labels(make_record("a", "task 0"), {"x"}, {"A"}),
                                            with_labels(make_record("b", "task 1"), {"x"}, {"A"})};
  const auto d = diagnose_weak_abilities(recs, {"model-a", "model-b"}, 5, 5.0, *g, 1, 0, EvolveConfig{});
  EXPECT_EQ(d.weak_ids, (std::vector<std::string>{"b"}));
  ASSERT_EQ(d.items.size(), 2u);
  EXPECT_EQ(d.items[1].scores, (std::map<std::string, int>{{"model-a", 9}, {"model-b", 3}}));
}

TEST(Diagnose, ThreeAbilitiesFiveSamplesHandTally) {
  // Five records per ability so every record is sampled; tasks 0-14.
  std::map<int, std::pair<int, int>> scores;
  const std::vector<std::string> abilities{"Math", "Writing", "Coding"};
  std::vector<InstructionRecord> recs;
  for (int k = 0; k < 15; ++k) {
    recs.push_back(with_labels(make_record("t" + std::to_string(k), "task " + std::to_string(k)), {"x"},
                               {abilities[static_cast<std::size_t>(k / 5)]}));
    scores[k] = {8, 8};
  }
  scores[2] = {4, 9};    // a fails
  scores[6] = {9, 2};    // b fails
  scores[7] = {5, 5};    // at threshold: not weak
  scores[11] = {1, 1};   // both fail
  scores[14] = {7, 4};   // b fails
  scores.erase(9);       // referee cannot rate: skipped
  auto g = scored_gateway(scores);
  const auto d = diagnose_weak_abilities(recs, {"model-a", "model-b"}, 5, 5.0, *g, 42, 0, EvolveConfig{});
  EXPECT_EQ(d.weak_ids, (std::vector<std::string>{"t2", "t6", "t11", "t14"}));
  ASSERT_EQ(d.items.size(), 15u);
  EXPECT_TRUE(d.items[9].skipped);
  EXPECT_FALSE(d.items[9].weak);
  EXPECT_FALSE(d.items[9].error.empty());
}

TEST(Diagnose, SamplingIsSeededAndPerAbility) {
  ModelGateway g(quick_config());
  std::vector<InstructionRecord> recs;
  for (int k = 0; k < 40; ++k)
    recs.push_back(
        with_labels(make_record("r" + std::to_string(k), "task " + std::to_string(k)), {"x"}, {k < 30 ? "A" : "B"}));
  const auto ids = [&](std::uint64_t seed, std::size_t round) {
    std::vector<std::string> out;
    for (const auto& item : diagnose_weak_abilities(recs, {"m"}, 4, 5.0, g, seed, round, EvolveConfig{}).items)
      out.push_back(item.id);
    return out;
  };
  const auto a = ids(1, 0);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(a, ids(1, 0));
  EXPECT_NE(a, ids(2, 0));
  EXPECT_NE(a, ids(1, 1));
  std::size_t from_a = 0;
  for (const auto& id : a) from_a += std::stoi(id.substr(1)) < 30;
  EXPECT_EQ(from_a, 4u);
}

// ---- rounds ----

TEST(EvolutionRound, EveryInputHasOneVerdict) {
  ModelGateway g(quick_config());
  auto recs = fixture::evolution_seeds(40);
  EvolveConfig cfg;
  cfg.diagnose = false;
  const auto out = run_evolution_round(recs, {}, 0, cfg, g, 9);
  ASSERT_EQ(out.log.entries.size(), 40u);
  std::size_t total = 0;
  for (const auto& v : {"accepted", "semantically_unchanged", "harmful", "malformed"}) total += out.log.stats.at(v);
  EXPECT_EQ(total, 40u);
  EXPECT_EQ(out.log.stats.at("accepted") + out.log.stats.at("rejected"), out.log.inputs.size());
  EXPECT_EQ(out.accepted.size(), out.log.stats.at("accepted"));
  const auto accepted_list = ids_of(out.accepted);
  const std::set<std::string> accepted_ids(accepted_list.begin(), accepted_list.end());
  for (const auto& e : out.log.entries) {
    EXPECT_EQ(accepted_ids.contains(e.candidate_id), e.verdict == RewriteVerdict::accepted) << e.candidate_id;
    EXPECT_EQ(e.strategy, assigned_strategy(9, 0, static_cast<std::size_t>(&e - out.log.entries.data())));
  }
  EXPECT_THROW(run_evolution_round(recs, {}, 2, cfg, g, 9), InvalidArgument);
}

TEST(EvolutionRound, FanOutGivesFourEntriesPerInput) {
  ModelGateway g(quick_config());
  const auto recs = fixture::evolution_seeds(5);
  EvolveConfig cfg;
  cfg.fan_out_all = true;
  cfg.diagnose = false;
  const auto out = run_evolution_round(recs, {}, 0, cfg, g, 9);
  EXPECT_EQ(out.log.entries.size(), 20u);
  for (std::size_t i = 0; i < 5; ++i) {
    std::set<EvolveStrategy> s;
    for (std::size_t k = 0; k < 4; ++k) s.insert(out.log.entries[i * 4 + k].strategy);
    EXPECT_EQ(s.size(), 4u);
  }
}

TEST(RunEvolution, ZeroRoundsPassSeedsThrough) {
  ModelGateway g(quick_config());
  const auto seeds = fixture::evolution_seeds(6);
  EvolveConfig cfg;
  cfg.max_rounds = 0;
  const auto res = run_evolution(seeds, cfg, g, 1);
  EXPECT_TRUE(res.rounds.empty());
  EXPECT_EQ(res.dataset, seeds);
  EXPECT_EQ(g.calls_made(), 0u);
}

// Hand tally for the scripted fixture (see evolution_fixture.hpp):
//   round 0 unchanged {3, 10, 17}; harmful {0, 5, 15}; malformed {4, 9, 14, 19};
//   accepted {1, 2, 6, 7, 8, 11, 12, 13, 16, 18}; weak {1, 13}.
//   round 1 evolves the children of 1 and 13: 1 accepted and weak again,
//   13 judged harmful and kept in the queue.
TEST(RunEvolution, ScriptedTwoRoundsMatchHandTally) {
  auto g = fixture::scripted_evolution_gateway();
  const auto seeds = fixture::evolution_seeds();
  const std::uint64_t seed = 5;
  const auto res = run_evolution(seeds, fixture::scripted_evolve_config(), *g, seed);
  ASSERT_TRUE(res.complete);
  ASSERT_EQ(res.rounds.size(), 2u);
  const auto strat = [&](std::size_t round, std::size_t i) { return std::string(to_string(assigned_strategy(seed, round, i))); };

  const auto& r0 = res.rounds[0];
  EXPECT_EQ(r0.inputs.size(), 20u);
  std::map<std::string, std::size_t> expect0{{"accepted", 10}, {"semantically_unchanged", 3}, {"harmful", 3},
                                             {"malformed", 4}};
  for (const auto& [k, v] : expect0) EXPECT_EQ(r0.stats.at(k), v) << k;
  const std::set<int> unchanged{3, 10, 17}, harmful{0, 5, 15}, malformed{4, 9, 14, 19};
  for (int k = 0; k < 20; ++k) {
    const auto v = r0.entries[static_cast<std::size_t>(k)].verdict;
    const auto want = unchanged.contains(k) ? RewriteVerdict::semantically_unchanged
                      : harmful.contains(k) ? RewriteVerdict::harmful
                      : malformed.contains(k) ? RewriteVerdict::malformed
                                              : RewriteVerdict::accepted;
    EXPECT_EQ(v, want) << k;
  }
  const auto c1 = "seed-01.r0." + strat(0, 1);
  const auto c13 = "seed-13.r0." + strat(0, 13);
  EXPECT_EQ(r0.carryover, (std::vector<std::string>{c1, c13}));
  EXPECT_EQ(r0.diagnosis.size(), 10u);

  const auto& r1 = res.rounds[1];
  EXPECT_EQ(r1.inputs, (std::vector<std::string>{c1, c13}));
  ASSERT_EQ(r1.entries.size(), 2u);
  EXPECT_EQ(r1.entries[0].verdict, RewriteVerdict::accepted);
  EXPECT_EQ(r1.entries[1].verdict, RewriteVerdict::harmful);
  const auto g1 = c1 + ".r1." + strat(1, 0);
  EXPECT_EQ(r1.carryover, (std::vector<std::string>{g1, c13}));

  std::vector<std::string> expected_ids;
  for (int k : {1, 2, 6, 7, 8, 11, 12, 13, 16, 18})
    expected_ids.push_back(std::string("seed-") + (k < 10 ? "0" : "") + std::to_string(k) + ".r0." +
                           strat(0, static_cast<std::size_t>(k)));
  expected_ids.push_back(g1);
  EXPECT_EQ(ids_of(res.dataset), expected_ids);
  EXPECT_EQ(res.dataset.back().meta.at("seed_id"), "seed-01");
  EXPECT_EQ(res.dataset.back().conversations[0].content, "task 1: describe item 1 [+] [+]");
}

TEST(RunEvolution, LogsByteIdenticalAcrossRerunsAndWorkers) {
  TempDir a, b;
  const auto seeds = fixture::evolution_seeds();
  auto g1 = fixture::scripted_evolution_gateway();
  auto g2 = fixture::scripted_evolution_gateway();
  const auto r1 = run_evolution(seeds, fixture::scripted_evolve_config(), *g1, 5, 1);
  const auto r2 = run_evolution(seeds, fixture::scripted_evolve_config(), *g2, 5, 4);
  write_round_logs(r1.rounds, a.path());
  write_round_logs(r2.rounds, b.path());
  for (const auto* name : {"round_0.jsonl", "round_1.jsonl"}) {
    const auto x = testing::read_file(a / name);
    EXPECT_FALSE(x.empty());
    EXPECT_EQ(x, testing::read_file(b / name));
  }
  EXPECT_EQ(serialize_all(r1.dataset), serialize_all(r2.dataset));
}

TEST(RunEvolution, AcceptedRecordsOnlyFromAcceptedVerdicts) {
  ModelGateway g(quick_config());
  auto seeds = fixture::evolution_seeds(60);
  EvolveConfig cfg;
  cfg.max_rounds = 3;
  const auto res = run_evolution(seeds, cfg, g, 11);
  std::map<std::string, RewriteVerdict> verdicts;
  std::set<std::string> diagnosed;
  for (const auto& r : res.rounds) {
    for (const auto& e : r.entries) verdicts[e.candidate_id] = e.verdict;
    for (const auto& d : r.diagnosis) diagnosed.insert(d.id);
  }
  for (const auto& rec : res.dataset) EXPECT_EQ(verdicts.at(rec.id), RewriteVerdict::accepted);
  // Carryover is drawn from the evolved-and-diagnosed population, or from
  // carried items that stayed in the queue.
  for (std::size_t i = 0; i < res.rounds.size(); ++i)
    for (const auto& id : res.rounds[i].carryover)
      EXPECT_TRUE(diagnosed.contains(id) || (i > 0 && std::count(res.rounds[i - 1].carryover.begin(),
                                                                  res.rounds[i - 1].carryover.end(), id)))
          << id;
}

/// Property: interrupting after n calls and resuming gives the uninterrupted result.
TEST(RunEvolution, ResumeAfterBudgetExhaustionMatchesUninterrupted) {
  const auto seeds = fixture::evolution_seeds(30);
  EvolveConfig cfg;
  cfg.max_rounds = 3;
  TempDir full_dir;
  ModelGateway full_gw(quick_config());
  const auto full = run_evolution(seeds, cfg, full_gw, 3, 2, full_dir.path());
  ASSERT_TRUE(full.complete);
  const auto total_calls = full_gw.calls_made();
  ASSERT_GT(total_calls, 40u);

  for (std::size_t cut : {std::size_t{1}, std::size_t{17}, total_calls / 2, total_calls - 3}) {
    TempDir dir;
    auto limited = quick_config();
    limited.call_budget = cut;
    ModelGateway first(limited);
    const auto partial = run_evolution(seeds, cfg, first, 3, 2, dir.path());
    EXPECT_FALSE(partial.complete);
    EXPECT_TRUE(partial.budget_exhausted);

    ModelGateway second(quick_config());
    const auto resumed = run_evolution(seeds, cfg, second, 3, 3, dir.path());
    ASSERT_TRUE(resumed.complete) << cut;
    EXPECT_EQ(serialize_all(resumed.dataset), serialize_all(full.dataset)) << cut;
    ASSERT_EQ(resumed.rounds.size(), full.rounds.size());
    for (std::size_t i = 0; i < full.rounds.size(); ++i)
      EXPECT_EQ(resumed.rounds[i].to_jsonl(), full.rounds[i].to_jsonl()) << cut;
    EXPECT_GE(second.calls_made(), cut);
  }
}

TEST(EvolutionRound, JsonRoundTrip) {
  auto g = fixture::scripted_evolution_gateway();
  const auto res = run_evolution(fixture::evolution_seeds(), fixture::scripted_evolve_config(), *g, 5);
  for (const auto& r : res.rounds) EXPECT_EQ(EvolutionRound::from_json(r.to_json()).to_jsonl(), r.to_jsonl());
}

}  // namespace
}  // namespace curate
