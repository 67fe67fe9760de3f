#pragma once

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
#include "curate/manifest.hpp"
#include "curate/model_gateway.hpp"

namespace curate {

struct LabelTaxonomy {
  std::set<std::string> second_level;
  std::set<std::string> first_level;
  /// second-level -> first-level
  std::map<std::string, std::string> parent;
  /// raw tag -> canonical second-level
  std::map<std::string, std::string> alias;

  /// Canonical label for a raw or canonical tag; nullopt when unseen.
  [[nodiscard]] std::optional<std::string> resolve(const std::string& tag) const;
  /// Throws SchemaError when alias targets or parents are inconsistent.
  void validate() const;

  [[nodiscard]] json to_json() const;
  static LabelTaxonomy from_json(const json& j);
  void save(const std::filesystem::path& path) const;
  static LabelTaxonomy load(const std::filesystem::path& path);
};

struct TaggingConfig {
  std::string prompt_template;  // empty: built-in template
  std::string delimiter = ",";
  std::size_t max_tags = 8;
  std::size_t max_tag_length = 64;
  int parse_retries = 1;

  [[nodiscard]] json to_json() const;
  static TaggingConfig from_json(const json& j);
};

/// Lowercases ASCII, trims and collapses internal whitespace runs to one space.
std::string fold_tag(std::string_view tag);

/// Splits, folds and deduplicates (first occurrence wins) a tagger reply.
/// nullopt when the reply is malformed: no tags, or a tag longer than the
/// configured limit. At most max_tags are kept.
std::optional<std::vector<std::string>> parse_tags(std::string_view reply, const TaggingConfig& config);

struct TagResult {
  std::vector<std::string> tags;
  int retries = 0;
  bool untaggable = false;
  std::string error;
};

/// Gateway failures other than budget exhaustion flag the record instead of
/// propagating.
TagResult tag_second_level(const InstructionRecord& record, ModelGateway& gateway, const TaggingConfig& config);

std::vector<TagResult> tag_dataset(std::span<const InstructionRecord> records, ModelGateway& gateway,
                                   const TaggingConfig& config, std::size_t workers = 1);

struct KMeansConfig {
  int max_iterations = 100;
  double tolerance = 1e-4;
};

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centers;
  int iterations = 0;
  double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding. Ties go to the lower center
/// index, so results depend only on (points, k, seed).
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    const KMeansConfig& config = {});

struct ClusterResult {
  std::map<std::string, std::string> alias;
  std::set<std::string> canonical;
  int iterations = 0;
};

/// Clusters distinct `tags` by their embeddings into `k` groups; each group
/// is named by its most frequent member (ties: lexicographically smallest).
/// Throws InvalidArgument when k is 0 or exceeds the number of tags.
ClusterResult cluster_normalize(const std::vector<std::string>& tags, const std::vector<std::vector<double>>& embeddings,
                                const std::map<std::string, std::size_t>& tag_counts, std::size_t k,
                                std::uint64_t seed, const KMeansConfig& config = {});

/// Applies a {raw_tag: canonical} override map and then resolves alias chains
/// so that alias(alias(t)) == alias(t). Throws ConfigError on a cycle.
void apply_alias_overrides(std::map<std::string, std::string>& alias, const std::map<std::string, std::string>& overrides);

std::map<std::string, std::string> load_alias_overrides(const std::filesystem::path& path);

struct FirstLevelResult {
  std::map<std::string, std::string> parent;
  std::vector<std::string> uncovered;
  std::vector<std::string> warnings;
};

inline constexpr const char* kOtherFirstLevel = "Other";

/// Asks the tagger to group labels into `target_count` categories in batches.
/// Labels the model does not place go to "Other" and are listed in uncovered.
FirstLevelResult derive_first_level(const std::set<std::string>& canonical, ModelGateway& gateway,
                                    std::size_t target_count = 26, std::size_t batch_size = 200,
                                    const std::string& prompt_template = {});

/// Number of records carrying each second-level label, resolved through the
/// taxonomy when one is given. A label repeated on one record counts once.
std::map<std::string, std::size_t> compute_label_frequencies(std::span<const InstructionRecord> records,
                                                             const LabelTaxonomy* taxonomy = nullptr,
                                                             std::size_t workers = 1);

/// Number of records carrying each first-level label.
std::map<std::string, std::size_t> first_level_counts(std::span<const InstructionRecord> records);

struct LabelConfig {
  TaggingConfig tagging;
  /// Target canonical label count; unset keeps every distinct tag.
  std::optional<std::size_t> second_level_count;
  std::size_t first_level_count = 26;
  std::size_t grouping_batch = 200;
  std::string grouping_template;
  KMeansConfig kmeans;
  std::optional<std::filesystem::path> override_file;

  [[nodiscard]] json to_json() const;
  static LabelConfig from_json(const json& j);
};

struct LabelingResult {
  std::vector<InstructionRecord> records;
  LabelTaxonomy taxonomy;
  std::map<std::string, std::size_t> frequencies;
  std::size_t untaggable = 0;
  std::vector<std::string> warnings;
};

/// Tags, clusters, derives first-level parents and writes labels onto the
/// records. Untaggable records are kept without labels and flagged in meta.
LabelingResult build_label_system(std::vector<InstructionRecord> records, ModelGateway& gateway,
                                  const LabelConfig& config, std::uint64_t seed, SelectionManifest& manifest,
                                  std::size_t workers = 1, const std::string& stage = "label");

}  // namespace curate
