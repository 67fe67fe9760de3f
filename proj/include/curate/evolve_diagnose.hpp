#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/model_gateway.hpp"

namespace curate {

enum class EvolveStrategy { add_constraints, deepening, concretizing, increase_reasoning };

inline constexpr std::array<EvolveStrategy, 4> kAllStrategies{EvolveStrategy::add_constraints, EvolveStrategy::deepening,
                                                              EvolveStrategy::concretizing,
                                                              EvolveStrategy::increase_reasoning};

std::string_view to_string(EvolveStrategy s) noexcept;
EvolveStrategy parse_evolve_strategy(std::string_view s);  // throws ConfigError

/// Built-in rewrite prompt for a strategy, with an {instruction} slot.
std::string default_strategy_template(EvolveStrategy s);

enum class RewriteVerdict { accepted, semantically_unchanged, harmful, malformed };

std::string_view to_string(RewriteVerdict v) noexcept;
RewriteVerdict parse_rewrite_verdict(std::string_view s);  // throws SchemaError

struct EvolveConfig {
  std::size_t max_rounds = 2;
  /// Apply all four strategies to every input instead of one round-robin pick.
  bool fan_out_all = false;
  std::map<EvolveStrategy, std::string> templates;  // missing entries use the built-in text
  std::string judge_template;
  std::string referee_template;
  std::vector<std::string> candidate_models{"candidate-a", "candidate-b"};
  std::size_t samples_per_ability = 5;
  /// A referee score strictly below this marks the instruction weak.
  double score_threshold = 6.0;
  bool diagnose = true;

  [[nodiscard]] std::string template_for(EvolveStrategy s) const;
  void validate() const;
  [[nodiscard]] json to_json() const;
  /// Accepts inline "templates" and "template_files" (read relative to `base_dir`).
  static EvolveConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
};

struct EvolveAttempt {
  std::optional<InstructionRecord> candidate;
  std::string rewritten;
  std::string error;
};

/// Rewrites the last human turn with `strategy` and asks the responder for a
/// fresh answer. The child id is "<parent>.r<round>.<strategy>" and meta
/// records parent_id, seed_id, strategy and evolution_round. Gateway failures
/// (other than budget exhaustion) come back as an attempt without candidate.
EvolveAttempt evolve_once(const InstructionRecord& record, EvolveStrategy strategy, std::size_t round,
                          ModelGateway& gateway, const EvolveConfig& config);

/// Maps a judge reply to a verdict; replies naming no keyword, or several, are malformed.
RewriteVerdict parse_judge_reply(std::string_view reply);

/// Identical instructions short-circuit to semantically_unchanged without a call.
RewriteVerdict verify_rewrite(const std::string& original, const std::string& candidate, ModelGateway& gateway,
                              const EvolveConfig& config);

/// First integer in [1, 10] following "score" (case-insensitive), else the
/// first integer in the reply. nullopt when none is in range.
std::optional<int> parse_referee_score(std::string_view reply);

struct DiagnosisItem {
  std::string id;
  std::vector<std::string> abilities;
  std::map<std::string, int> scores;  // model -> referee score
  bool weak = false;
  bool skipped = false;
  std::string error;

  [[nodiscard]] json to_json() const;
  static DiagnosisItem from_json(const json& j);
};

struct DiagnosisResult {
  std::vector<std::string> weak_ids;  // input order
  std::vector<DiagnosisItem> items;   // sampled items, input order
};

/// Samples up to `samples_per_ability` records per first-level label (the
/// smallest keyed hashes of (seed, round, label, id)), has each candidate
/// model answer, and asks the referee for a 1-10 score. An item is weak when
/// any model scores below the threshold. Referee failures skip the item.
DiagnosisResult diagnose_weak_abilities(std::span<const InstructionRecord> records,
                                        const std::vector<std::string>& candidate_models,
                                        std::size_t samples_per_ability, double score_threshold,
                                        ModelGateway& gateway, std::uint64_t seed, std::size_t round,
                                        const EvolveConfig& config, std::size_t workers = 1);

struct EvolutionEntry {
  std::string input_id;
  EvolveStrategy strategy = EvolveStrategy::add_constraints;
  std::string candidate_id;
  std::string rewritten;
  RewriteVerdict verdict = RewriteVerdict::malformed;
  std::string error;

  [[nodiscard]] json to_json() const;
  static EvolutionEntry from_json(const json& j);
};

struct EvolutionRound {
  std::size_t round_index = 0;
  std::vector<std::string> inputs;
  std::vector<EvolutionEntry> entries;
  std::vector<std::string> carryover;
  std::map<std::string, std::size_t> stats;  // verdict -> count
  std::vector<DiagnosisItem> diagnosis;

  [[nodiscard]] json to_json() const;
  static EvolutionRound from_json(const json& j);
  /// Summary line followed by one line per entry and per diagnosis item.
  [[nodiscard]] std::string to_jsonl() const;
};

struct RoundOutcome {
  EvolutionRound log;
  std::vector<InstructionRecord> accepted;
  /// Records to evolve in the next round.
  std::vector<InstructionRecord> next_inputs;
};

/// Strategy for the i-th input of a round: round-robin from a seeded offset.
EvolveStrategy assigned_strategy(std::uint64_t seed, std::size_t round, std::size_t index) noexcept;

/// One evolve/verify/diagnose pass. `carried` names inputs that were carried
/// over for weakness; those that fail verification stay in next_inputs.
RoundOutcome run_evolution_round(std::span<const InstructionRecord> inputs, const std::set<std::string>& carried,
                                 std::size_t round, const EvolveConfig& config, ModelGateway& gateway,
                                 std::uint64_t seed, std::size_t workers = 1,
                                 const std::filesystem::path& checkpoint_dir = {});

struct EvolutionResult {
  std::vector<EvolutionRound> rounds;
  /// Accepted records across rounds, or the seeds themselves when max_rounds is 0.
  std::vector<InstructionRecord> dataset;
  bool complete = true;
  bool budget_exhausted = false;
};

/// Runs up to max_rounds rounds. With a checkpoint directory, progress is
/// saved per input and per round; rerunning with the same arguments resumes.
/// On budget exhaustion the result is incomplete and the checkpoint holds
/// everything done so far.
EvolutionResult run_evolution(std::span<const InstructionRecord> seeds, const EvolveConfig& config,
                              ModelGateway& gateway, std::uint64_t seed, std::size_t workers = 1,
                              const std::filesystem::path& checkpoint_dir = {});

/// Writes round_<n>.jsonl for every round.
void write_round_logs(std::span<const EvolutionRound> rounds, const std::filesystem::path& dir);

}  // namespace curate
