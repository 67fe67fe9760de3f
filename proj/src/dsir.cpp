#include "curate/dsir.hpp"

#include <algorithm>
#include <cmath>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"

namespace curate {

json DsirConfig::to_json() const {
  return {{"featurizer", featurizer.to_json()},
          {"smoothing", smoothing},
          {"raw_sample_cap", raw_sample_cap},
          {"noise_scale", noise_scale}};
}

DsirConfig DsirConfig::from_json(const json& j) {
  DsirConfig c;
  if (j.contains("featurizer")) c.featurizer = FeaturizerConfig::from_json(j.at("featurizer"));
  c.smoothing = j.value("smoothing", c.smoothing);
  c.raw_sample_cap = j.value("raw_sample_cap", c.raw_sample_cap);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  if (c.smoothing < 0) throw ConfigError("dsir.smoothing must be >= 0");
  if (c.raw_sample_cap == 0) throw ConfigError("dsir.raw_sample_cap must be positive");
  if (c.noise_scale < 0) throw ConfigError("dsir.noise_scale must be >= 0");
  return c;
}

std::vector<std::size_t> uniform_sample_indices(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= cap) return idx;
  TopK top(cap);
  for (std::size_t i = 0; i < n; ++i) top.push(to_open_unit(keyed_hash(seed, 0x5a4d, i)), i);
  return top.indices();
}

ImportanceModel fit_importance_model(std::span<const FeatureVector> target, std::span<const FeatureVector> raw,
                                     const DsirConfig& config, std::uint64_t seed) {
  if (target.empty()) throw InvalidArgument("no target distribution");
  if (raw.empty()) throw InvalidArgument("no raw distribution");
  const std::uint32_t buckets = config.featurizer.buckets;

  BucketCounter target_counts(buckets);
  for (const auto& f : target) target_counts.add(f);
  BucketCounter raw_counts(buckets);
  const auto sample = uniform_sample_indices(raw.size(), config.raw_sample_cap, seed);
  for (auto i : sample) raw_counts.add(raw[i]);

  ImportanceModel model;
  model.target = target_counts.distribution(config.smoothing);
  model.raw = raw_counts.distribution(config.smoothing);
  model.log_ratio.resize(buckets);
  for (std::uint32_t b = 0; b < buckets; ++b) {
    const double t = model.target.probs[b];
    const double r = model.raw.probs[b];
    // With zero smoothing a bucket absent from both sides contributes nothing.
    model.log_ratio[b] = (t == 0 && r == 0) ? 0.0 : std::log(t) - std::log(r);
  }
  model.config_hash = json_hash(config.to_json());
  model.target_records = target.size();
  model.raw_records_seen = raw.size();
  model.raw_sample_size = sample.size();
  return model;
}

double log_importance_weight(const ImportanceModel& model, const FeatureVector& features) {
  double w = 0.0;
  for (const auto& [b, c] : features.entries) w += static_cast<double>(c) * model.log_ratio[b];
  return w;
}

std::vector<double> score_all(const ImportanceModel& model, std::span<const FeatureVector> features,
                              std::size_t workers) {
  std::vector<double> out(features.size());
  parallel_for(features.size(), workers, [&](std::size_t i) { out[i] = log_importance_weight(model, features[i]); });
  return out;
}

double gumbel_noise(std::uint64_t seed, std::size_t index) noexcept {
  const double u = to_open_unit(keyed_hash(seed, 0x6b6d, index));
  return -std::log(-std::log(u));
}

void TopK::push(double key, std::size_t index) {
  if (k_ == 0) return;
  const Item item{key, index};
  auto cmp = [](const Item& a, const Item& b) { return better(a, b); };
  if (heap_.size() < k_) {
    heap_.push_back(item);
    std::push_heap(heap_.begin(), heap_.end(), cmp);
    return;
  }
  if (!better(item, heap_.front())) return;
  std::pop_heap(heap_.begin(), heap_.end(), cmp);
  heap_.back() = item;
  std::push_heap(heap_.begin(), heap_.end(), cmp);
}

void TopK::merge(const TopK& other) {
  for (const auto& item : other.heap_) push(item.key, item.index);
}

std::vector<std::size_t> TopK::indices() const {
  std::vector<std::size_t> out;
  out.reserve(heap_.size());
  for (const auto& item : heap_) out.push_back(item.index);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> gumbel_topk_resample(std::span<const double> log_weights, std::size_t k,
                                              std::uint64_t seed, double noise_scale) {
  if (k > log_weights.size())
    throw InvalidArgument("cannot select " + std::to_string(k) + " of " + std::to_string(log_weights.size()) +
                          " records");
  TopK top(k);
  for (std::size_t i = 0; i < log_weights.size(); ++i)
    top.push(log_weights[i] + noise_scale * gumbel_noise(seed, i), i);
  return top.indices();
}

void export_weights(std::span<const std::string> ids, std::span<const double> log_weights,
                    const std::filesystem::path& path) {
  if (ids.size() != log_weights.size()) throw InvalidArgument("ids and weights differ in length");
  std::vector<json> rows;
  rows.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) rows.push_back({{"id", ids[i]}, {"log_weight", log_weights[i]}});
  write_jsonl(rows, path);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("KL of distributions with different support");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0) continue;
    if (q[i] <= 0) throw InvalidArgument("KL undefined: q is zero where p is positive");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

}  // namespace curate
