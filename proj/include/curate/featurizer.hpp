#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "curate/corpus.hpp"

namespace curate {

struct FeaturizerConfig {
  std::vector<int> n_orders{1, 2};
  std::uint32_t buckets = 10000;
  std::uint64_t seed = 0;
  /// Featurize assistant turns as well as prompts.
  bool include_answers = false;

  [[nodiscard]] json to_json() const;
  static FeaturizerConfig from_json(const json& j);
};

/// Sparse hashed n-gram counts. Entries are sorted by bucket and unique.
struct FeatureVector {
  std::uint32_t buckets = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;

  [[nodiscard]] std::uint64_t total() const noexcept;
  [[nodiscard]] bool empty() const noexcept { return entries.empty(); }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct BucketDistribution {
  std::vector<double> probs;
  double smoothing = 0.0;

  [[nodiscard]] std::uint32_t buckets() const noexcept { return static_cast<std::uint32_t>(probs.size()); }
};

/// Lowercased word tokens. Boundaries are whitespace and punctuation, both
/// ASCII and the common Unicode blocks (general punctuation, CJK and
/// fullwidth punctuation, Unicode spaces).
std::vector<std::string> tokenize(std::string_view text);

/// Bucket of one word n-gram: FNV-1a-64 seeded with mix64(seed), fed the
/// order as one byte followed by the tokens joined by 0x1F, finalized with
/// mix64 and reduced modulo `buckets`.
std::uint32_t ngram_bucket(std::span<const std::string> tokens, int order, std::uint32_t buckets,
                           std::uint64_t seed) noexcept;

FeatureVector hash_ngram_features(std::string_view text, const FeaturizerConfig& config);

/// Text a record contributes to featurization under `config`.
std::string featurization_text(const InstructionRecord& record, const FeaturizerConfig& config);

FeatureVector featurize(const InstructionRecord& record, const FeaturizerConfig& config);

/// Additive accumulator of bucket counts; partial counters merge associatively.
class BucketCounter {
 public:
  explicit BucketCounter(std::uint32_t buckets);

  void add(const FeatureVector& features);
  void merge(const BucketCounter& other);

  [[nodiscard]] std::uint32_t buckets() const noexcept { return static_cast<std::uint32_t>(counts_.size()); }
  [[nodiscard]] std::uint64_t total() const noexcept { return total_; }
  [[nodiscard]] const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  /// probs[b] = (counts[b] + alpha) / (total + alpha * B). Throws
  /// InvalidArgument when the result is undefined (no counts, alpha == 0).
  [[nodiscard]] BucketDistribution distribution(double alpha) const;

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

BucketDistribution fit_bucket_distribution(std::span<const FeatureVector> features, std::uint32_t buckets,
                                           double alpha);

/// Dense unit vector: a seeded +-1 random projection of the text's hashed
/// unigram and bigram counts. Texts without tokens map to a hashed basis vector.
std::vector<double> hashed_ngram_embedding(std::string_view text, std::size_t dim, std::uint64_t seed);

/// Throws InvalidArgument on dimension mismatch or a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

/// Binary feature dump, all integers little-endian:
///   magic "CURFEAT1" (8 bytes) | u32 buckets | u64 record_count
///   per record: u32 id_len | id bytes | u32 n | n x (u32 bucket, u32 count)
struct FeatureDumpEntry {
  std::string id;
  FeatureVector features;
};

void write_feature_dump(std::span<const FeatureDumpEntry> entries, std::uint32_t buckets,
                        const std::filesystem::path& path);
std::vector<FeatureDumpEntry> read_feature_dump(const std::filesystem::path& path);

}  // namespace curate
