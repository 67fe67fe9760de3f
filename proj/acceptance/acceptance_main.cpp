// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Fixtures and brute-force oracles are shared with the unit tests.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/dedup_decontam.hpp"
#include "curate/dsir.hpp"
#include "curate/evolve_diagnose.hpp"
#include "curate/featurizer.hpp"
#include "curate/label_system.hpp"
#include "curate/manifest.hpp"
#include "curate/pipeline.hpp"
#include "curate/seed_filter.hpp"
#include "curate/subset_sampler.hpp"
#include "dedup_fixture.hpp"
#include "evolution_fixture.hpp"
#include "oracles.hpp"
#include "pipeline_fixture.hpp"
#include "support.hpp"

namespace curate::acceptance {
namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1. Importance weights agree with the per-n-gram oracle.
Verdict dsir_oracle() {
  const auto start = Clock::now();
  Rng rng(101);
  std::vector<std::string> targets, raw;
  for (int i = 0; i < 200; ++i) targets.push_back(testing::random_sentence(rng, testing::arithmetic_words(), 12));
  for (int i = 0; i < 1000; ++i)
    raw.push_back(testing::random_sentence(rng, i % 3 ? testing::chat_words() : testing::arithmetic_words(), 4 + i % 17));
  FeaturizerConfig fc;
  fc.buckets = 4099;
  fc.seed = 19;
  std::vector<FeatureVector> tf, rf;
  for (const auto& t : targets) tf.push_back(hash_ngram_features(t, fc));
  for (const auto& t : raw) rf.push_back(hash_ngram_features(t, fc));
  DsirConfig cfg;
  cfg.featurizer = fc;
  const auto got = score_all(fit_importance_model(tf, rf, cfg, 0), rf);
  const auto want = oracle::dsir_log_weights(targets, raw, fc.buckets, fc.seed);
  double worst = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  const double secs = seconds_since(start);
  return {got.size() == want.size() && worst <= 1e-9 && secs < 5.0,
          fmt("max |diff| %.3g over 1000 records, %.2fs", worst, secs)};
}

// 2. Selected subsets land closer to the target mix than random subsets.
Verdict dsir_distribution() {
  const auto start = Clock::now();
  constexpr std::size_t kRaw = 50000, kTarget = 2000, kSelect = 5000;
  DsirConfig cfg;
  cfg.featurizer.buckets = 10000;
  std::size_t wins = 0;
  double mean_sel = 0, mean_rand = 0, share_a = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 7919 + 1);
    const auto sentence = [&](bool topic_a) {
      return testing::random_sentence(rng, topic_a ? testing::arithmetic_words() : testing::chat_words(), 10);
    };
    std::vector<FeatureVector> target, raw;
    std::vector<bool> topic_a;
    target.reserve(kTarget);
    raw.reserve(kRaw);
    for (std::size_t i = 0; i < kTarget; ++i) target.push_back(hash_ngram_features(sentence(rng.below(10) < 9), cfg.featurizer));
    for (std::size_t i = 0; i < kRaw; ++i) {
      topic_a.push_back(rng.below(2) == 0);
      raw.push_back(hash_ngram_features(sentence(topic_a.back()), cfg.featurizer));
    }
    const auto model = fit_importance_model(target, raw, cfg, seed);
    const auto weights = score_all(model, raw);
    const auto selected = gumbel_topk_resample(weights, kSelect, seed);
    const auto random = uniform_sample_indices(kRaw, kSelect, seed ^ 0x5eed);
    const auto subset_distribution = [&](const std::vector<std::size_t>& idx) {
      BucketCounter c(cfg.featurizer.buckets);
      for (auto i : idx) c.add(raw[i]);
      return c.distribution(1.0);
    };
    const auto target_dist = fit_bucket_distribution(target, cfg.featurizer.buckets, 1.0);
    const double kl_sel = kl_divergence(target_dist.probs, subset_distribution(selected).probs);
    const double kl_rand = kl_divergence(target_dist.probs, subset_distribution(random).probs);
    wins += kl_sel < kl_rand;
    for (auto i : selected) share_a += topic_a[i] ? 1.0 / (100.0 * kSelect) : 0.0;
    mean_sel += kl_sel / 100;
    mean_rand += kl_rand / 100;
  }
  const double secs = seconds_since(start);
  return {wins >= 95 && secs < 60.0,
          std::to_string(wins) + "/100 seeds, " + fmt("mean KL selected %.4f vs random %.4f, %.1fs", mean_sel, mean_rand, secs) +
              fmt(", selected topic-A share %.3f", share_a)};
}

// 3. Long-tail retention per frequency band.
Verdict frequency_bands() {
  const std::vector<std::size_t> freqs{19, 20, 150, 200, 201, 350, 500, 501};
  std::vector<InstructionRecord> rs;
  for (auto f : freqs)
    for (std::size_t i = 0; i < f; ++i)
      rs.push_back(testing::with_labels(testing::make_record("f" + std::to_string(f) + "_" + std::to_string(i), "p"),
                                        {"f" + std::to_string(f)}));
  std::ostringstream detail;
  bool ok = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = partition_long_tail(rs, compute_label_frequencies(rs), SeedFilterConfig{}, seed);
    std::map<std::string, std::size_t> kept;
    for (auto i : p.retained) ++kept[rs[i].labels->second_level.front()];
    for (auto f : freqs) {
      const std::size_t want = f >= 20 && f <= 200 ? f : f > 200 && f <= 500 ? f / 3 : 0;
      const auto got = kept["f" + std::to_string(f)];
      if (got != want) {
        ok = false;
        detail << " f" << f << " got " << got << " want " << want << ";";
      }
      if (seed == 1) detail << " " << f << "->" << got;
    }
  }
  return {ok, "retained per band:" + detail.str()};
}

// 4. Seed selection equals the brute-force script.
Verdict seed_filter_oracle() {
  Rng rng(44);
  std::vector<InstructionRecord> rs;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> labels{"L" + std::to_string(rng.below(3))};
    if (rng.below(5) == 0) labels.push_back("M" + std::to_string(rng.below(6)));
    if (rng.below(20) == 0) labels.push_back("R" + std::to_string(rng.below(20)));
    auto r = testing::with_labels(testing::make_record("s" + std::to_string(i), "p"), labels);
    ScoreSet s;
    s.answer_loss = double(rng.below(1000)) / 100.0;
    if (rng.below(30) != 0) s.post_tune_loss = *s.answer_loss - (double(rng.below(600)) - 100.0) / 100.0;
    r.scores = s;
    rs.push_back(std::move(r));
  }
  bool ok = true;
  std::size_t sizes = 0;
  for (std::size_t target : {150u, 300u, 600u}) {
    SeedFilterConfig cfg;
    cfg.target_size = target;
    SelectionManifest manifest;
    const auto sel = select_seed_set(rs, compute_label_frequencies(rs), cfg, 9, manifest);
    std::set<std::string> got;
    for (const auto& r : sel.seeds) got.insert(r.id);
    ok = ok && got == oracle::seed_set(rs, 9, target);
    sizes += got.size();
  }
  return {ok, "targets 150/300/600 -> " + std::to_string(sizes) + " ids, oracle " + (ok ? "equal" : "differs")};
}

// 5. Planted duplicates and contamination removed, controls untouched,
// blocked search equal to exhaustive.
Verdict dedup_recall() {
  SimilarityConfig cfg;
  cfg.backend = EmbeddingBackend::hashed_ngram_fallback;
  cfg.seed = 7;
  auto data = fixture::planted_dataset(1000, 10, 10, 31);
  const auto control = fixture::orthogonal_records(200);
  data.records.insert(data.records.end(), control.begin(), control.end());

  const auto dd = dedup_dataset(data.records, build_similarity_index(data.records, cfg, nullptr));
  const auto dc = decontaminate_against_benchmarks(dd.kept, build_similarity_index(dd.kept, cfg, nullptr),
                                                   {{"bench", data.benchmark}}, nullptr);
  const std::set<std::string> dups(dd.removed.begin(), dd.removed.end());
  const std::set<std::string> contaminated(dc.removed.begin(), dc.removed.end());
  std::size_t control_removed = 0;
  for (const auto& r : control) control_removed += dups.contains(r.id) + contaminated.contains(r.id);
  const bool recall = dups == data.duplicates && contaminated == data.contaminated;

  bool equal = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto big = fixture::planted_dataset(2000, 25, 15, seed);
    auto blocked = cfg;
    blocked.seed = seed;
    auto exhaustive = blocked;
    exhaustive.exhaustive = true;
    const auto bi = build_similarity_index(big.records, blocked, nullptr);
    const auto ei = build_similarity_index(big.records, exhaustive, nullptr);
    equal = equal && dedup_dataset(big.records, bi).removed == dedup_dataset(big.records, ei).removed;
    const std::map<std::string, std::vector<std::string>> bench{{"bench", big.benchmark}};
    equal = equal && decontaminate_against_benchmarks(big.records, bi, bench, nullptr).removed ==
                         decontaminate_against_benchmarks(big.records, ei, bench, nullptr).removed;
  }
  return {recall && control_removed == 0 && equal,
          "duplicates " + std::to_string(dups.size()) + "/10, contaminated " + std::to_string(contaminated.size()) +
              "/10, control removals " + std::to_string(control_removed) + ", blocked==exhaustive " +
              (equal ? "yes" : "no")};
}

// 6. Turn histogram fractions.
Verdict turn_statistics() {
  std::vector<InstructionRecord> rs;
  const auto add = [&](std::size_t count, std::size_t turns) {
    for (std::size_t i = 0; i < count; ++i) rs.push_back(testing::make_record("t" + std::to_string(rs.size()), "p", turns));
  };
  add(7000, 1);
  add(2000, 3);
  add(1000, 6);
  const auto h = turn_stats(rs);
  const auto released = TurnHistogram::from_counts({6897934, 466354, 73912, 10906});
  const bool ok = std::abs(h.fractions[0] - 0.7) <= 1e-9 && std::abs(h.fractions[1] - 0.2) <= 1e-9 &&
                  std::abs(h.fractions[2] - 0.1) <= 1e-9 && std::abs(released.fractions[0] - 0.926) <= 0.001;
  return {ok, fmt("mix %.12f/%.12f/%.12f", h.fractions[0], h.fractions[1], h.fractions[2]) +
                  fmt(", released single-turn %.4f", released.fractions[0])};
}

// 7. Byte-identical mock runs, with and without interruption.
Verdict end_to_end_determinism() {
  const auto start = Clock::now();
  testing::TempDir dir;
  auto cfg = fixture::write_pipeline_fixture(dir.path(), 500, 23);
  const auto run = [&](const std::string& out, RunOptions opts = {}) {
    auto c = cfg;
    c.paths.output = out;
    return run_pipeline(c, opts);
  };
  const auto a = run("a");
  const auto b = run("b");
  if (a.status != RunStatus::ok || b.status != RunStatus::ok) return {false, "mock run failed: " + a.error + b.error};
  const auto reference = output_tree_hash(a.output_dir);
  bool ok = reference == output_tree_hash(b.output_dir);
  std::size_t resumed = 0;
  std::string mismatch;
  for (auto s : kAllStages) {
    if (s == Stage::package) continue;
    const std::string out = "stop_" + std::string(to_string(s));
    const auto first = run(out, {.resume = false, .stop_after = s});
    const auto second = run(out, {.resume = true});
    const bool same = first.status == RunStatus::stopped && second.status == RunStatus::ok &&
                      output_tree_hash(second.output_dir) == reference;
    if (!same) mismatch += " " + std::string(to_string(s));
    resumed += same;
    ok = ok && same;
  }
  // An interruption mid-evolution (call budget) resumes to the same tree.
  auto limited = cfg;
  limited.paths.output = "budget";
  const auto calls_after = [&](const char* stage) {
    const auto marker = json::parse(testing::read_file(a.output_dir / "checkpoints" / (std::string(stage) + ".done.json")));
    return marker.at("calls_made").get<std::size_t>();
  };
  limited.gateway.call_budget = (calls_after("assemble") + calls_after("evolve")) / 2;
  const auto cut = run_pipeline(limited);
  limited.gateway.call_budget.reset();
  const auto healed = run_pipeline(limited, {.resume = true});
  const bool budget_ok = cut.status == RunStatus::budget_exhausted && healed.status == RunStatus::ok &&
                         output_tree_hash(healed.output_dir) == reference;
  ok = ok && budget_ok;
  const double secs = seconds_since(start);
  return {ok && secs < 120.0, "tree " + hex64(reference) + ", " + std::to_string(resumed) +
                                  "/8 stop-and-resume identical, budget cut resume " + (budget_ok ? "identical" : "differs") +
                                  mismatch + fmt(", %.1fs", secs)};
}

// 8. Scripted evolution matches the hand tally.
Verdict evolution_bookkeeping() {
  auto gateway = fixture::scripted_evolution_gateway();
  const std::uint64_t seed = 5;
  const auto res = run_evolution(fixture::evolution_seeds(), fixture::scripted_evolve_config(), *gateway, seed);
  if (!res.complete || res.rounds.size() != 2) return {false, "expected two complete rounds"};
  const auto strat = [&](std::size_t round, std::size_t i) { return std::string(to_string(assigned_strategy(seed, round, i))); };
  const auto seed_id = [](int k) { return std::string("seed-") + (k < 10 ? "0" : "") + std::to_string(k); };
  std::vector<std::string> errors;
  const auto& r0 = res.rounds[0];
  const std::set<int> unchanged{3, 10, 17}, harmful{0, 5, 15}, malformed{4, 9, 14, 19};
  for (int k = 0; k < 20; ++k) {
    const auto want = unchanged.contains(k)   ? RewriteVerdict::semantically_unchanged
                      : harmful.contains(k)   ? RewriteVerdict::harmful
                      : malformed.contains(k) ? RewriteVerdict::malformed
                                              : RewriteVerdict::accepted;
    if (r0.entries.size() != 20 || r0.entries[static_cast<std::size_t>(k)].verdict != want)
      errors.push_back("round 0 verdict " + std::to_string(k));
  }
  const std::map<std::string, std::size_t> stats0{
      {"accepted", 10}, {"semantically_unchanged", 3}, {"harmful", 3}, {"malformed", 4}};
  for (const auto& [k, v] : stats0)
    if (!r0.stats.contains(k) || r0.stats.at(k) != v) errors.push_back("round 0 stat " + k);
  const auto c1 = seed_id(1) + ".r0." + strat(0, 1);
  const auto c13 = seed_id(13) + ".r0." + strat(0, 13);
  if (r0.carryover != std::vector<std::string>{c1, c13}) errors.push_back("round 0 carryover");
  const auto& r1 = res.rounds[1];
  if (r1.inputs != std::vector<std::string>{c1, c13}) errors.push_back("round 1 inputs");
  if (r1.entries.size() != 2 || r1.entries[0].verdict != RewriteVerdict::accepted ||
      r1.entries[1].verdict != RewriteVerdict::harmful)
    errors.push_back("round 1 verdicts");
  const auto g1 = c1 + ".r1." + strat(1, 0);
  if (r1.carryover != std::vector<std::string>{g1, c13}) errors.push_back("round 1 carryover");
  std::vector<std::string> expected;
  for (int k : {1, 2, 6, 7, 8, 11, 12, 13, 16, 18}) expected.push_back(seed_id(k) + ".r0." + strat(0, static_cast<std::size_t>(k)));
  expected.push_back(g1);
  std::vector<std::string> got;
  for (const auto& r : res.dataset) got.push_back(r.id);
  if (got != expected) errors.push_back("accepted set");
  std::string detail = "10 accepted + 1 in round 1, carryover [" + g1 + ", " + c13 + "]";
  for (const auto& e : errors) detail += "; mismatch: " + e;
  return {errors.empty(), detail};
}

// 9. Nested reward ladder equal to the simulation oracle.
Verdict reward_ladder() {
  testing::TempDir dir;
  const auto recs = oracle::reward_fixture(1500, 40, 17);
  const auto ladder = emit_size_ladder(recs, {100, 500, 1000}, 17, dir.path());
  bool nested = ladder.subsets.size() == 3;
  bool oracle_equal = nested;
  for (std::size_t k = 0; nested && k < 3; ++k) {
    oracle_equal = oracle_equal && ladder.subsets[k] == oracle::reward_ladder(recs, ladder.rungs[k].size, 17);
    if (k > 0) {
      const std::set<std::string> small(ladder.subsets[k - 1].begin(), ladder.subsets[k - 1].end());
      const std::set<std::string> large(ladder.subsets[k].begin(), ladder.subsets[k].end());
      nested = nested && std::includes(large.begin(), large.end(), small.begin(), small.end());
    }
    nested = nested && ladder.subsets[k].size() == ladder.rungs[k].size;
  }
  return {nested && oracle_equal, std::string("nested ") + (nested ? "yes" : "no") + ", oracle " +
                                      (oracle_equal ? "equal" : "differs") + " for 100/500/1000"};
}

// 10. Single-worker featurization and scoring throughput.
Verdict throughput() {
  constexpr std::size_t kRecords = 1'000'000, kChunk = 10'000;
  DsirConfig cfg;
  Rng rng(77);
  std::vector<std::string> vocab;
  for (const auto* pool : {&testing::arithmetic_words(), &testing::chat_words(), &testing::code_words()})
    vocab.insert(vocab.end(), pool->begin(), pool->end());
  const auto make = [&](std::size_t i) {
    return testing::make_record("x" + std::to_string(i), testing::random_sentence(rng, vocab, 20 + rng.below(30)));
  };
  std::vector<FeatureVector> target, sample;
  for (std::size_t i = 0; i < 2000; ++i)
    target.push_back(hash_ngram_features(testing::random_sentence(rng, testing::arithmetic_words(), 30), cfg.featurizer));
  for (std::size_t i = 0; i < 20000; ++i) sample.push_back(featurize(make(i), cfg.featurizer));
  const auto model = fit_importance_model(target, sample, cfg, 0);

  double busy = 0, checksum = 0;
  std::vector<InstructionRecord> chunk;
  std::vector<FeatureVector> features;
  for (std::size_t done = 0; done < kRecords; done += kChunk) {
    chunk.clear();
    for (std::size_t i = 0; i < kChunk; ++i) chunk.push_back(make(done + i));
    const auto start = Clock::now();
    features.clear();
    for (const auto& r : chunk) features.push_back(featurize(r, cfg.featurizer));
    for (double w : score_all(model, features, 1)) checksum += w;
    busy += seconds_since(start);
  }
  const double rate = kRecords / busy;
  return {rate >= 10000.0 && std::isfinite(checksum), fmt("%.0f records/s over 1M records (%.2fs)", rate, busy)};
}

}  // namespace
}  // namespace curate::acceptance

int main() {
  using namespace curate::acceptance;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"DSIR oracle equivalence", dsir_oracle},
      {"DSIR distribution matching", dsir_distribution},
      {"frequency-band exactness", frequency_bands},
      {"seed-filter oracle", seed_filter_oracle},
      {"dedup/decontamination recall", dedup_recall},
      {"turn statistics", turn_statistics},
      {"end-to-end determinism", end_to_end_determinism},
      {"evolution bookkeeping", evolution_bookkeeping},
      {"reward-ladder nesting", reward_ladder},
      {"throughput floor", throughput},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << i + 1 << ": " << criteria[i].first << " (" << v.detail << ")"
              << std::endl;
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failures) << "/"
            << criteria.size() << std::endl;
  return failures ? 1 : 0;
}
