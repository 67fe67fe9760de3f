#include "curate/seed_filter.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"

namespace curate {

void SeedFilterConfig::validate() const {
  if (retain_all_min > retain_all_max) throw ConfigError("seed_filter: retain_all_min > retain_all_max");
  if (retain_part_max <= retain_all_max) throw ConfigError("seed_filter: partial band must lie above the full band");
  if (!(retain_part_rate > 0.0 && retain_part_rate <= 1.0)) throw ConfigError("seed_filter: rate must be in (0, 1]");
  if (!(loss_keep_quantile > 0.0 && loss_keep_quantile <= 1.0))
    throw ConfigError("seed_filter: loss_keep_quantile must be in (0, 1]");
  if (!(convergence_drop_quantile >= 0.0 && convergence_drop_quantile < 1.0))
    throw ConfigError("seed_filter: convergence_drop_quantile must be in [0, 1)");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw ConfigError("seed_filter: target_ratio must be in (0, 1]");
}

json SeedFilterConfig::to_json() const {
  return {{"retain_all_min", retain_all_min},
          {"retain_all_max", retain_all_max},
          {"retain_part_max", retain_part_max},
          {"retain_part_rate", retain_part_rate},
          {"min_capabilities", min_capabilities},
          {"loss_keep_quantile", loss_keep_quantile},
          {"convergence_drop_quantile", convergence_drop_quantile},
          {"target_size", target_size ? json(*target_size) : json(nullptr)},
          {"target_ratio", target_ratio}};
}

SeedFilterConfig SeedFilterConfig::from_json(const json& j) {
  SeedFilterConfig c;
  try {
    c.retain_all_min = j.value("retain_all_min", c.retain_all_min);
    c.retain_all_max = j.value("retain_all_max", c.retain_all_max);
    c.retain_part_max = j.value("retain_part_max", c.retain_part_max);
    c.retain_part_rate = j.value("retain_part_rate", c.retain_part_rate);
    c.min_capabilities = j.value("min_capabilities", c.min_capabilities);
    c.loss_keep_quantile = j.value("loss_keep_quantile", c.loss_keep_quantile);
    c.convergence_drop_quantile = j.value("convergence_drop_quantile", c.convergence_drop_quantile);
    if (j.contains("target_size") && !j.at("target_size").is_null()) c.target_size = j.at("target_size").get<std::size_t>();
    c.target_ratio = j.value("target_ratio", c.target_ratio);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("seed_filter config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::vector<std::string> distinct_labels(const InstructionRecord& r) {
  std::vector<std::string> out;
  if (!r.labels) return out;
  std::set<std::string> seen;
  for (const auto& l : r.labels->second_level)
    if (seen.insert(l).second) out.push_back(l);
  return out;
}

std::size_t frequency_of(const std::map<std::string, std::size_t>& f, const std::string& label) {
  const auto it = f.find(label);
  return it == f.end() ? 0 : it->second;
}

}  // namespace

LongTailPartition partition_long_tail(std::span<const InstructionRecord> records,
                                      const std::map<std::string, std::size_t>& frequencies,
                                      const SeedFilterConfig& config, std::uint64_t seed) {
  const auto in_full = [&](std::size_t f) { return f >= config.retain_all_min && f <= config.retain_all_max; };
  const auto in_part = [&](std::size_t f) { return f > config.retain_all_max && f <= config.retain_part_max; };

  LongTailPartition out;
  out.band.assign(records.size(), LongTailBand::none);
  std::map<std::string, std::vector<std::size_t>> candidates;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto labels = distinct_labels(records[i]);
    if (labels.empty()) continue;
    bool any_full = false, all_part = true;
    for (const auto& l : labels) {
      const auto f = frequency_of(frequencies, l);
      any_full |= in_full(f);
      all_part &= in_part(f);
    }
    if (any_full) {
      out.band[i] = LongTailBand::retain_all;
    } else if (all_part) {
      for (const auto& l : labels) candidates[l].push_back(i);
    }
  }
  for (const auto& [label, idx] : candidates) {
    const auto take =
        static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * config.retain_part_rate + 1e-9));
    if (take == 0) continue;
    const auto lh = stable_hash(label);
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    keyed.reserve(idx.size());
    for (auto i : idx) keyed.emplace_back(keyed_hash(seed, lh, stable_hash(records[i].id)), i);
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end());
    for (std::size_t t = 0; t < take; ++t) out.band[keyed[t].second] = LongTailBand::retain_part;
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    (out.band[i] == LongTailBand::none ? out.remainder : out.retained).push_back(i);
  return out;
}

std::vector<bool> filter_multi_capability(std::span<const InstructionRecord> records, std::size_t min_capabilities) {
  std::vector<bool> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = distinct_labels(records[i]).size() >= min_capabilities;
  return out;
}

ScoreFilterResult filter_by_answer_loss(std::span<const InstructionRecord> records, double keep_quantile) {
  ScoreFilterResult out;
  std::vector<double> losses;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = records[i].scores;
    if (s && s->answer_loss) losses.push_back(*s->answer_loss);
  }
  if (!losses.empty()) {
    const auto n = losses.size();
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(keep_quantile * static_cast<double>(n) - 1e-9)), 1, n);
    std::nth_element(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(n - k), losses.end());
    out.threshold = losses[n - k];
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = records[i].scores;
    if (!s || !s->answer_loss) out.missing.push_back(i);
    else (*s->answer_loss >= *out.threshold ? out.kept : out.dropped).push_back(i);
  }
  return out;
}

ScoreFilterResult filter_by_convergence_gap(std::span<const InstructionRecord> records, double drop_quantile) {
  ScoreFilterResult out;
  std::vector<std::pair<double, std::size_t>> positive;
  std::size_t scored = 0;
  std::vector<bool> drop(records.size(), false);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = records[i].scores;
    if (!s || !s->answer_loss || !s->post_tune_loss) continue;
    ++scored;
    const double gap = *s->answer_loss - *s->post_tune_loss;
    if (gap > 0.0) positive.emplace_back(gap, i);
  }
  const auto m = std::min(positive.size(),
                          static_cast<std::size_t>(std::floor(drop_quantile * static_cast<double>(scored) + 1e-9)));
  std::sort(positive.begin(), positive.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t t = 0; t < m; ++t) drop[positive[t].second] = true;
  if (m > 0) out.threshold = positive[m - 1].first;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& s = records[i].scores;
    if (!s || !s->answer_loss || !s->post_tune_loss) out.missing.push_back(i);
    else (drop[i] ? out.dropped : out.kept).push_back(i);
  }
  return out;
}

std::size_t attach_scores(std::span<InstructionRecord> records, ModelGateway& gateway, std::size_t workers,
                          bool with_reward) {
  std::atomic<std::size_t> failures{0};
  parallel_for(records.size(), workers, [&](std::size_t i) {
    auto& r = records[i];
    const auto fill = [&](std::optional<double>& slot, auto&& fn) {
      if (slot) return;
      try {
        slot = fn();
      } catch (const GatewayError& e) {
        if (e.code() == GatewayErrorCode::budget_exhausted) throw;
        ++failures;
      }
    };
    auto scores = r.scores.value_or(ScoreSet{});
    fill(scores.answer_loss, [&] { return gateway.score_answer_loss(r, LossPhase::before); });
    fill(scores.post_tune_loss, [&] { return gateway.score_answer_loss(r, LossPhase::after); });
    if (with_reward) fill(scores.reward, [&] { return gateway.score_reward(r); });
    r.scores = scores;
  });
  return failures.load();
}

SeedSelection select_seed_set(std::span<const InstructionRecord> records,
                              const std::map<std::string, std::size_t>& frequencies, const SeedFilterConfig& config,
                              std::uint64_t seed, SelectionManifest& manifest, const std::string& stage) {
  config.validate();
  SeedSelection out;
  const auto partition = partition_long_tail(records, frequencies, config, seed);
  out.retained_long_tail = partition.retained.size();

  std::vector<InstructionRecord> remainder;
  remainder.reserve(partition.remainder.size());
  for (auto i : partition.remainder) remainder.push_back(records[i]);

  enum class Fate { keep, missing, low_loss, large_gap };
  std::vector<Fate> fate(remainder.size(), Fate::keep);
  const auto by_loss = filter_by_answer_loss(remainder, config.loss_keep_quantile);
  for (auto i : by_loss.missing) fate[i] = Fate::missing;
  for (auto i : by_loss.dropped) fate[i] = Fate::low_loss;
  if (config.convergence_drop_quantile > 0.0) {
    const auto by_gap = filter_by_convergence_gap(remainder, config.convergence_drop_quantile);
    for (auto i : by_gap.missing) fate[i] = Fate::missing;
    for (auto i : by_gap.dropped)
      if (fate[i] == Fate::keep) fate[i] = Fate::large_gap;
  }

  const auto priority = filter_multi_capability(records, config.min_capabilities);
  struct Candidate {
    std::size_t index;
    bool long_tail;
  };
  std::vector<Candidate> candidates;
  for (auto i : partition.retained) candidates.push_back({i, true});
  for (std::size_t r = 0; r < remainder.size(); ++r)
    if (fate[r] == Fate::keep) candidates.push_back({partition.remainder[r], false});
  out.after_filters = candidates.size();
  out.missing_score = static_cast<std::size_t>(std::count(fate.begin(), fate.end(), Fate::missing));

  out.target = config.target_size.value_or(
      static_cast<std::size_t>(std::llround(config.target_ratio * static_cast<double>(records.size()))));
  if (out.target > candidates.size()) {
    if (config.target_size)
      out.warnings.push_back("seed target " + std::to_string(out.target) + " exceeds the " +
                             std::to_string(candidates.size()) + " records that survived filtering");
    out.target = candidates.size();
  }
  const auto loss_of = [&](std::size_t i) {
    const auto& s = records[i].scores;
    return s && s->answer_loss ? *s->answer_loss : -std::numeric_limits<double>::infinity();
  };
  std::stable_sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.long_tail != b.long_tail) return a.long_tail;
    if (priority[a.index] != priority[b.index]) return static_cast<bool>(priority[a.index]);
    const double la = loss_of(a.index), lb = loss_of(b.index);
    if (la != lb) return la > lb;
    return a.index < b.index;
  });
  std::vector<char> selected(records.size(), 0);
  for (std::size_t t = 0; t < out.target; ++t) selected[candidates[t].index] = 1;

  std::vector<char> candidate(records.size(), 0);
  for (const auto& c : candidates) candidate[c.index] = 1;
  std::vector<Fate> fate_by_input(records.size(), Fate::keep);
  for (std::size_t r = 0; r < remainder.size(); ++r) fate_by_input[partition.remainder[r]] = fate[r];

  for (std::size_t i = 0; i < records.size(); ++i) {
    json scores = json::object();
    if (const auto& s = records[i].scores) {
      if (s->answer_loss) scores["answer_loss"] = *s->answer_loss;
      if (s->post_tune_loss) scores["post_tune_loss"] = *s->post_tune_loss;
    }
    if (priority[i]) scores["multi_capability"] = true;
    const auto& id = records[i].id;
    if (selected[i]) {
      out.seeds.push_back(records[i]);
      const char* reason = partition.band[i] == LongTailBand::retain_all    ? "long_tail_full_band"
                           : partition.band[i] == LongTailBand::retain_part ? "long_tail_partial_band"
                                                                            : "passed_filters";
      manifest.keep(id, stage, reason, std::move(scores));
    } else if (candidate[i]) {
      manifest.drop(id, stage, "over_target", std::move(scores));
    } else {
      switch (fate_by_input[i]) {
        case Fate::missing: manifest.drop(id, stage, "missing_score", std::move(scores)); break;
        case Fate::low_loss: manifest.drop(id, stage, "low_answer_loss", std::move(scores)); break;
        case Fate::large_gap: manifest.drop(id, stage, "large_convergence_gap", std::move(scores)); break;
        case Fate::keep: break;
      }
    }
  }
  if (out.missing_score > 0)
    out.warnings.push_back(std::to_string(out.missing_score) + " records lacked scores and were set aside");
  return out;
}

}  // namespace curate
