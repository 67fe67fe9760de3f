#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/manifest.hpp"
#include "curate/model_gateway.hpp"

namespace curate {

enum class EmbeddingBackend { gateway_embeddings, hashed_ngram_fallback };

std::string_view to_string(EmbeddingBackend b) noexcept;
EmbeddingBackend parse_embedding_backend(std::string_view s);  // throws ConfigError

struct SimilarityConfig {
  EmbeddingBackend backend = EmbeddingBackend::gateway_embeddings;
  /// Dimension of the fallback embedding; the gateway backend uses its own.
  std::size_t fallback_dim = 256;
  std::size_t planes = 256;
  std::size_t band_bits = 8;
  double threshold = 0.3;
  /// false: filter at cosine distance < threshold. true: similarity >= threshold.
  bool threshold_is_similarity = false;
  /// Score every pair instead of only blocking candidates.
  bool exhaustive = false;
  std::uint64_t seed = 0;

  [[nodiscard]] bool crosses(double similarity) const noexcept;
  /// e.g. "cosine_distance<0.3" or "cosine_similarity>=0.3".
  [[nodiscard]] std::string criterion() const;
  void validate() const;
  [[nodiscard]] json to_json() const;
  static SimilarityConfig from_json(const json& j);
};

/// Unit vectors over the prompt text (human turns) of a dataset, with
/// random-hyperplane signatures split into bands for candidate blocking.
class SimilarityIndex {
 public:
  SimilarityIndex() = default;
  SimilarityIndex(std::vector<std::string> ids, std::vector<std::vector<double>> vectors,
                  const SimilarityConfig& config);

  [[nodiscard]] std::size_t size() const noexcept { return ids_.size(); }
  [[nodiscard]] bool empty() const noexcept { return ids_.empty(); }
  [[nodiscard]] const std::string& id(std::size_t i) const { return ids_.at(i); }
  [[nodiscard]] const std::vector<double>& vector(std::size_t i) const { return vectors_.at(i); }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] const SimilarityConfig& config() const noexcept { return config_; }

  [[nodiscard]] double similarity(std::size_t i, std::size_t j) const;
  [[nodiscard]] double similarity_to(std::size_t i, std::span<const double> v) const;

  /// Pairs (i < j) sharing at least one band, sorted and unique.
  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> candidate_pairs() const;
  /// Indexed records sharing a band with `v`, ascending.
  [[nodiscard]] std::vector<std::size_t> candidates_for(std::span<const double> v) const;

 private:
  [[nodiscard]] std::vector<std::uint64_t> band_keys(std::span<const double> v) const;

  SimilarityConfig config_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> vectors_;
  std::vector<std::vector<double>> planes_;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> bands_;
};

/// Embeds texts with the configured backend. `gateway` may be null only for the fallback.
std::vector<std::vector<double>> embed_for_similarity(const std::vector<std::string>& texts,
                                                      const SimilarityConfig& config, ModelGateway* gateway,
                                                      std::size_t workers = 1);

/// Throws InvalidArgument when a record has no prompt text. Gateway failures
/// surface after the gateway's own retries.
SimilarityIndex build_similarity_index(std::span<const InstructionRecord> records, const SimilarityConfig& config,
                                       ModelGateway* gateway, std::size_t workers = 1);

struct DuplicatePair {
  std::string id;            // removed (later) record
  std::string duplicate_of;  // earliest qualifying earlier record
  double score = 0.0;
};

struct DedupResult {
  std::vector<InstructionRecord> kept;
  std::vector<std::string> removed;
  std::vector<DuplicatePair> pairs;  // one per removed record, stream order
  std::size_t candidate_pairs = 0;
  std::size_t scored_pairs = 0;
};

/// A record is removed when an earlier record forms a qualifying pair with it.
DedupResult dedup_dataset(std::span<const InstructionRecord> records, const SimilarityIndex& index,
                          SelectionManifest* manifest = nullptr, const std::string& stage = "dedup");

/// Header line (criterion and its reading) followed by one line per pair.
void write_dedup_report(const DedupResult& result, const SimilarityConfig& config, const std::filesystem::path& path);

/// Benchmark name -> prompts, read from `<dir>/<name>.txt` (one prompt per line).
std::map<std::string, std::vector<std::string>> load_benchmarks(const std::filesystem::path& dir);

struct ContaminationHit {
  std::string id;
  std::string benchmark;
  std::string matched_prompt;
  double score = 0.0;
  std::string criterion;

  [[nodiscard]] json to_json() const;
};

struct DecontamResult {
  std::vector<InstructionRecord> kept;
  std::vector<std::string> removed;
  /// Best-matching prompt per (record, benchmark), record order then benchmark name.
  std::vector<ContaminationHit> report;
  std::vector<std::string> warnings;
};

/// Removes records crossing the criterion against any benchmark prompt.
/// Empty benchmarks are skipped with a warning.
DecontamResult decontaminate_against_benchmarks(std::span<const InstructionRecord> records,
                                                const SimilarityIndex& index,
                                                const std::map<std::string, std::vector<std::string>>& benchmarks,
                                                ModelGateway* gateway, SelectionManifest* manifest = nullptr,
                                                const std::string& stage = "decontam", std::size_t workers = 1);

void write_contamination_report(std::span<const ContaminationHit> hits, const std::filesystem::path& path);

}  // namespace curate
