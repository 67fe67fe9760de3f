#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "curate/featurizer.hpp"

namespace curate {

struct DsirConfig {
  FeaturizerConfig featurizer;
  double smoothing = 1.0;
  /// Raw distribution is fitted on a uniform sample of at most this many records.
  std::size_t raw_sample_cap = 1'000'000;
  /// Multiplier on the Gumbel noise; larger values flatten the selection.
  double noise_scale = 1.0;

  [[nodiscard]] json to_json() const;
  static DsirConfig from_json(const json& j);
};

/// Target and raw bucket distributions plus their per-bucket log ratio.
struct ImportanceModel {
  BucketDistribution target;
  BucketDistribution raw;
  std::vector<double> log_ratio;
  std::uint64_t config_hash = 0;
  std::size_t target_records = 0;
  std::size_t raw_records_seen = 0;
  std::size_t raw_sample_size = 0;
};

/// Picks a uniform sample of at most `cap` indices out of `n`, by keyed hash
/// rank, returned in ascending order.
std::vector<std::size_t> uniform_sample_indices(std::size_t n, std::size_t cap, std::uint64_t seed);

/// Throws InvalidArgument("no target distribution") for an empty target and
/// InvalidArgument for an empty raw stream.
ImportanceModel fit_importance_model(std::span<const FeatureVector> target, std::span<const FeatureVector> raw,
                                     const DsirConfig& config, std::uint64_t seed);

/// sum_b count[b] * (ln target[b] - ln raw[b]); 0 for empty features.
double log_importance_weight(const ImportanceModel& model, const FeatureVector& features);

std::vector<double> score_all(const ImportanceModel& model, std::span<const FeatureVector> features,
                              std::size_t workers = 1);

/// Standard Gumbel noise for position `index`, a pure function of (seed, index).
double gumbel_noise(std::uint64_t seed, std::size_t index) noexcept;

/// Bounded top-k over (key, index) with ties broken toward lower index.
/// Per-shard accumulators merge associatively.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_{k} {}

  void push(double key, std::size_t index);
  void merge(const TopK& other);
  /// Selected indices in ascending order.
  [[nodiscard]] std::vector<std::size_t> indices() const;
  [[nodiscard]] std::size_t size() const noexcept { return heap_.size(); }

 private:
  struct Item {
    double key;
    std::size_t index;
  };
  // Min-heap on "worse" so the root is the first element to evict.
  static bool better(const Item& a, const Item& b) noexcept {
    return a.key > b.key || (a.key == b.key && a.index < b.index);
  }
  std::size_t k_;
  std::vector<Item> heap_;
};

/// Sampling without replacement proportional to exp(log_weight): top-k of
/// log_weight + noise_scale * Gumbel(0, 1). Output sorted by index.
std::vector<std::size_t> gumbel_topk_resample(std::span<const double> log_weights, std::size_t k,
                                              std::uint64_t seed, double noise_scale = 1.0);

/// Writes `{id, log_weight}` rows.
void export_weights(std::span<const std::string> ids, std::span<const double> log_weights,
                    const std::filesystem::path& path);

/// KL(p || q) in nats; q must be positive wherever p is.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace curate
