#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/manifest.hpp"
#include "curate/model_gateway.hpp"

namespace curate {

struct SeedFilterConfig {
  /// Labels with frequency in [retain_all_min, retain_all_max] retain all their records.
  std::size_t retain_all_min = 20;
  std::size_t retain_all_max = 200;
  /// Labels with frequency in (retain_all_max, retain_part_max] retain a seeded fraction.
  std::size_t retain_part_max = 500;
  double retain_part_rate = 1.0 / 3.0;
  std::size_t min_capabilities = 2;
  double loss_keep_quantile = 0.5;
  /// 0 disables the convergence-gap filter.
  double convergence_drop_quantile = 0.05;
  std::optional<std::size_t> target_size;
  /// Used when target_size is unset: round(target_ratio * input size).
  double target_ratio = 0.133;

  /// Throws ConfigError.
  void validate() const;
  [[nodiscard]] json to_json() const;
  static SeedFilterConfig from_json(const json& j);
};

enum class LongTailBand { none, retain_all, retain_part };

struct LongTailPartition {
  std::vector<std::size_t> retained;   // input indices, ascending
  std::vector<std::size_t> remainder;  // input indices, ascending
  std::vector<LongTailBand> band;      // per input record
};

/// A record is retained when any of its second-level labels falls in the
/// retain-all band. Records whose labels all fall in the partial band are
/// candidates: for each such label with m candidates, the floor(m * rate)
/// candidates with the smallest keyed hash of (seed, label, id) are retained.
LongTailPartition partition_long_tail(std::span<const InstructionRecord> records,
                                      const std::map<std::string, std::size_t>& frequencies,
                                      const SeedFilterConfig& config, std::uint64_t seed);

/// Per-record flag: at least `min_capabilities` distinct second-level labels.
std::vector<bool> filter_multi_capability(std::span<const InstructionRecord> records, std::size_t min_capabilities);

struct ScoreFilterResult {
  std::vector<std::size_t> kept;     // indices into the input, ascending
  std::vector<std::size_t> dropped;  // filtered out by the rule
  std::vector<std::size_t> missing;  // required score absent
  std::optional<double> threshold;
};

/// Keeps the ceil(q * n) highest answer losses, plus every record tied with
/// the lowest kept loss. n counts records that have an answer loss.
ScoreFilterResult filter_by_answer_loss(std::span<const InstructionRecord> records, double keep_quantile);

/// Drops the floor(q * n) records with the largest positive gap between
/// answer_loss and post_tune_loss (earlier records win ties for staying).
ScoreFilterResult filter_by_convergence_gap(std::span<const InstructionRecord> records, double drop_quantile);

/// Fills missing answer_loss, post_tune_loss and reward from the gateway.
/// Failures other than budget exhaustion leave the score missing.
std::size_t attach_scores(std::span<InstructionRecord> records, ModelGateway& gateway, std::size_t workers = 1,
                          bool with_reward = true);

struct SeedSelection {
  std::vector<InstructionRecord> seeds;  // stream order
  std::size_t retained_long_tail = 0;
  std::size_t missing_score = 0;
  std::size_t after_filters = 0;
  std::size_t target = 0;
  std::vector<std::string> warnings;
};

/// Union of long-tail retained records and the filtered remainder, truncated
/// to the target by (long-tail first, multi-capability first, answer loss
/// descending, stream order).
SeedSelection select_seed_set(std::span<const InstructionRecord> records,
                              const std::map<std::string, std::size_t>& frequencies, const SeedFilterConfig& config,
                              std::uint64_t seed, SelectionManifest& manifest, const std::string& stage = "seed_filter");

}  // namespace curate
