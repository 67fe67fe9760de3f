#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/dedup_decontam.hpp"
#include "curate/domain_select.hpp"
#include "curate/evolve_diagnose.hpp"
#include "curate/label_system.hpp"
#include "curate/model_gateway.hpp"
#include "curate/seed_filter.hpp"

namespace curate {

/// One domain of the raw pool. The quota is an absolute count when set,
/// otherwise quota_ratio times the number of pool records in the domain.
/// Phase 1 plans feed the foundational dataset; phase 2 plans feed labeling.
struct DomainQuota {
  Domain domain = Domain::knowledge;
  Strategy strategy = Strategy::source_rules;
  double quota_ratio = 1.0;
  std::optional<std::size_t> quota;
  std::string targets;  // file name under paths.targets, dsir only
  int phase = 1;

  [[nodiscard]] json to_json() const;
  static DomainQuota from_json(const json& j);
};

/// Collection and used counts per domain, in millions.
struct PoolStatistic {
  Domain domain;
  double collected;
  double used;
};

const std::vector<PoolStatistic>& reference_pool_statistics();

/// Code and math by importance resampling, knowledge and chat by source
/// rules, with the reference used/collected ratios. Chat is phase 2.
std::vector<DomainQuota> default_domain_quotas();

struct RunPaths {
  std::string pool;        // JSONL file or directory of .jsonl files
  std::string targets;     // directory of target prompt files
  std::string benchmarks;  // directory of <benchmark>.txt, optional
  std::string gap_report;  // optional
  std::string output = "run";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  RunPaths paths;
  /// Relative paths resolve against this; not part of the canonical form.
  std::filesystem::path base_dir;
  GatewayConfig gateway;
  SelectionConfig selection;
  std::vector<DomainQuota> domains = default_domain_quotas();
  LabelConfig labels;
  SeedFilterConfig seed_filter;
  EvolveConfig evolve;
  SimilarityConfig similarity;
  bool one_stage = false;
  std::vector<std::size_t> ladder_sizes;

  void validate() const;
  [[nodiscard]] json to_json() const;
  static RunConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  /// Canonical form: sorted keys, shortest round-trip numbers, and no
  /// output directory or worker count, which never change results.
  [[nodiscard]] json canonical() const;
  [[nodiscard]] std::uint64_t hash() const;

  [[nodiscard]] std::filesystem::path resolve(const std::string& p) const;
};

/// Quota each plan gets for the given per-domain pool sizes. Domains with an
/// empty pool get no plan.
std::vector<DomainPlan> plan_domains(std::span<const DomainQuota> quotas, const std::map<Domain, std::size_t>& pool_sizes,
                                     const std::filesystem::path& targets_dir);

enum class Stage { ingest, select, label, seed, assemble, evolve, dedup, decontam, package };

inline constexpr std::array<Stage, 9> kAllStages{Stage::ingest, Stage::select,   Stage::label,
                                                 Stage::seed,   Stage::assemble, Stage::evolve,
                                                 Stage::dedup,  Stage::decontam, Stage::package};

std::string_view to_string(Stage s) noexcept;
Stage parse_stage(std::string_view s);  // throws ConfigError

enum class RunStatus { ok, stopped, config_error, stage_failure, budget_exhausted };

std::string_view to_string(RunStatus s) noexcept;
/// 0 ok (and stopped), 2 config error, 3 stage failure, 4 budget exhausted.
int exit_code(RunStatus s) noexcept;

struct RunOptions {
  /// Reuse finished stages found under the output directory.
  bool resume = false;
  /// Return after this stage is checkpointed, as if the process died.
  std::optional<Stage> stop_after;
};

struct PipelineResult {
  RunStatus status = RunStatus::ok;
  std::filesystem::path output_dir;
  std::optional<Stage> failed_stage;
  std::string error;
  std::vector<Stage> executed;  // stages run in this invocation
  std::vector<Stage> reused;    // stages loaded from checkpoints
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> warnings;
};

/// Runs every stage into paths.output with the layout datasets/,
/// manifests/, reports/ and checkpoints/. A fresh run clears those four
/// directories first. A failing stage leaves reports/failure.json and the
/// checkpoints of every earlier stage.
PipelineResult run_pipeline(const RunConfig& config, const RunOptions& options = {});
PipelineResult run_pipeline(const RunConfig& config, ModelGateway& gateway, const RunOptions& options = {});

/// The config a run in `run_dir` was started with, from
/// checkpoints/run_config.json.
RunConfig load_saved_run_config(const std::filesystem::path& run_dir);

/// Hash over the relative path and bytes of every file under datasets/,
/// manifests/ and reports/.
std::uint64_t output_tree_hash(const std::filesystem::path& run_dir);

struct TrainingDescriptor {
  int stage = 1;
  std::string name;
  std::vector<std::filesystem::path> datasets;
  std::size_t count = 0;
  std::uint64_t config_hash = 0;

  [[nodiscard]] json to_json() const;
};

/// stage1_foundational.json and stage2_conversational.json, or one
/// stage1_merged.json when `one_stage` is set. Counts are dataset line counts.
std::vector<TrainingDescriptor> emit_training_manifests(const std::filesystem::path& foundational,
                                                        const std::filesystem::path& conversational,
                                                        std::uint64_t config_hash, bool one_stage,
                                                        const std::filesystem::path& out_dir);

struct StatsBundle {
  TurnHistogram turns;
  std::map<std::string, std::size_t> label_frequency;
  std::map<std::string, std::size_t> first_level;
  std::size_t records = 0;
  std::size_t labeled = 0;

  [[nodiscard]] json to_json() const;
};

StatsBundle compute_stats(std::span<const InstructionRecord> records);

/// Writes stats.json, turns.csv, labels.csv and first_level.csv into `out_dir`.
StatsBundle report_stats(std::span<const InstructionRecord> records, const std::filesystem::path& out_dir);

}  // namespace curate
