#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/dsir.hpp"
#include "curate/manifest.hpp"

namespace curate {

/// Sentiment-classification sources whose records carry little knowledge.
const std::vector<std::string>& default_knowledge_denylist();

/// Lowercase with non-alphanumerics removed: "SST-2" and "sst2" compare equal.
std::string normalize_source(std::string_view source);

/// True when the whole source, or any '/'-separated segment of it,
/// normalizes to a denylist entry.
bool source_denied(std::string_view source, const std::vector<std::string>& denylist);

std::vector<InstructionRecord> filter_knowledge_sources(std::vector<InstructionRecord> records,
                                                        const std::vector<std::string>& denylist,
                                                        SelectionManifest& manifest,
                                                        const std::string& stage = "knowledge_source_filter");

using GroupKeyFn = std::function<std::string(const InstructionRecord&)>;

/// Default augmentation-group key: the first human turn, tokenized and
/// lowercased, truncated to `max_tokens` tokens.
std::string augmentation_key(const InstructionRecord& record, std::size_t max_tokens = 64);

/// Keeps at most `max_per_group` records per group key, earliest first.
std::vector<InstructionRecord> dedup_augmented(std::vector<InstructionRecord> records, const GroupKeyFn& key,
                                               std::size_t max_per_group, SelectionManifest& manifest,
                                               const std::string& stage = "augmented_dedup");

struct DsirSelection {
  std::vector<InstructionRecord> selected;
  /// Log weight of every pool record, in pool order.
  std::vector<double> log_weights;
  ImportanceModel model;
};

/// Featurize, fit, score and resample `quota` records from `pool`. Selected
/// records carry their log weight in scores.log_importance_weight and stay
/// in pool order. Throws InvalidArgument when quota > pool size or there are
/// no target prompts.
DsirSelection dsir_select_domain(const std::vector<InstructionRecord>& pool,
                                 const std::vector<std::string>& target_prompts, std::size_t quota,
                                 const DsirConfig& config, std::uint64_t seed, SelectionManifest& manifest,
                                 const std::string& stage, std::size_t workers = 1);

/// Plain text, one prompt per line; blank lines ignored.
std::vector<std::string> load_target_prompts(const std::filesystem::path& path);

enum class Strategy { source_rules, dsir };

std::string_view to_string(Strategy s) noexcept;

struct DomainPlan {
  Domain domain = Domain::knowledge;
  Strategy strategy = Strategy::source_rules;
  std::optional<std::filesystem::path> target_prompt_path;
  std::size_t quota = 1;
  int relaxation_level = 0;

  /// Throws ConfigError when the plan is inconsistent.
  void validate() const;
};

struct SelectionConfig {
  DsirConfig dsir;
  std::vector<std::string> denylist = default_knowledge_denylist();
  std::size_t max_per_group = 2;
  std::size_t group_key_tokens = 64;
  double relax_quota_factor = 1.5;
  double relax_noise_factor = 1.25;
  std::size_t workers = 1;

  [[nodiscard]] json to_json() const;
  static SelectionConfig from_json(const json& j);
};

/// Quota and noise multiplier after `relaxation_level` relaxations.
std::size_t relaxed_quota(std::size_t quota, int level, double factor);
double relaxed_noise(double noise_scale, int level, double factor);

struct DomainSelection {
  std::vector<InstructionRecord> selected;
  std::vector<std::string> warnings;
};

/// Runs one plan at its current relaxation level. `targets` is required for
/// the dsir strategy. A quota above the eligible pool yields a warning and
/// everything eligible.
DomainSelection select_domain(const DomainPlan& plan, const std::vector<InstructionRecord>& pool,
                              const std::vector<std::string>& targets, const SelectionConfig& config,
                              std::uint64_t seed, SelectionManifest& manifest);

enum class Verdict { saturated, gap };

struct GapEntry {
  Verdict verdict = Verdict::saturated;
  std::string note;
};

using GapReport = std::map<std::string, GapEntry>;

GapReport parse_gap_report(const json& j);
GapReport load_gap_report(const std::filesystem::path& path);

/// Throws ConfigError when a planned domain has no verdict.
void check_gap_report(const GapReport& report, const std::vector<DomainPlan>& plans);

struct SupplementResult {
  std::map<Domain, std::vector<InstructionRecord>> added;
  std::vector<std::string> warnings;
};

/// For every plan whose domain has a `gap` verdict, bumps its relaxation
/// level, reselects with the widened quota and noise, and returns the
/// records not already in `current`. New records are tagged
/// meta.weak_domain_supplement = level.
SupplementResult supplement_weak_domains(const GapReport& report,
                                         const std::map<Domain, std::vector<InstructionRecord>>& pools,
                                         std::vector<DomainPlan>& plans,
                                         const std::map<Domain, std::vector<InstructionRecord>>& current,
                                         const std::map<Domain, std::vector<std::string>>& targets,
                                         const SelectionConfig& config, std::uint64_t seed,
                                         SelectionManifest& manifest);

struct OriginSet {
  std::string origin;
  std::vector<InstructionRecord> records;
};

/// Concatenates per-domain selections with the replayed seed set and applies
/// a seeded global shuffle. Each output record gets meta.origin. Throws
/// InvalidArgument listing any id that appears more than once.
std::vector<InstructionRecord> assemble_foundational(std::vector<OriginSet> selections,
                                                     std::vector<InstructionRecord> seed_set, std::uint64_t seed,
                                                     SelectionManifest& manifest);

}  // namespace curate
