#include "curate/dedup_decontam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "curate/errors.hpp"
#include "curate/featurizer.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"
#include "curate/prompts.hpp"

namespace curate {

std::string_view to_string(EmbeddingBackend b) noexcept {
  return b == EmbeddingBackend::gateway_embeddings ? "gateway_embeddings" : "hashed_ngram_fallback";
}

EmbeddingBackend parse_embedding_backend(std::string_view s) {
  if (s == "gateway_embeddings") return EmbeddingBackend::gateway_embeddings;
  if (s == "hashed_ngram_fallback") return EmbeddingBackend::hashed_ngram_fallback;
  throw ConfigError("unknown embedding backend '" + std::string(s) + "'");
}

// ---- config ----

bool SimilarityConfig::crosses(double similarity) const noexcept {
  return threshold_is_similarity ? similarity >= threshold : 1.0 - similarity < threshold;
}

std::string SimilarityConfig::criterion() const {
  std::ostringstream ss;
  ss << (threshold_is_similarity ? "cosine_similarity>=" : "cosine_distance<") << threshold;
  return ss.str();
}

void SimilarityConfig::validate() const {
  if (planes == 0 || band_bits == 0 || band_bits > 64 || planes % band_bits != 0)
    throw ConfigError("similarity: planes must be a positive multiple of band_bits (1-64)");
  if (fallback_dim == 0) throw ConfigError("similarity: fallback_dim must be positive");
  if (!(threshold >= 0.0 && threshold <= 2.0)) throw ConfigError("similarity: threshold must lie in [0, 2]");
}

json SimilarityConfig::to_json() const {
  return {{"backend", std::string(to_string(backend))},
          {"fallback_dim", fallback_dim},
          {"planes", planes},
          {"band_bits", band_bits},
          {"threshold", threshold},
          {"threshold_is_similarity", threshold_is_similarity},
          {"exhaustive", exhaustive},
          {"seed", seed}};
}

SimilarityConfig SimilarityConfig::from_json(const json& j) {
  SimilarityConfig c;
  try {
    if (j.contains("backend")) c.backend = parse_embedding_backend(j.at("backend").get<std::string>());
    c.fallback_dim = j.value("fallback_dim", c.fallback_dim);
    c.planes = j.value("planes", c.planes);
    c.band_bits = j.value("band_bits", c.band_bits);
    c.threshold = j.value("threshold", c.threshold);
    c.threshold_is_similarity = j.value("threshold_is_similarity", c.threshold_is_similarity);
    c.exhaustive = j.value("exhaustive", c.exhaustive);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("similarity: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- index ----

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// Gaussian hyperplanes via Box-Muller so the planes do not depend on the
// standard library's distribution implementation.
std::vector<std::vector<double>> random_planes(std::size_t count, std::size_t dim, std::uint64_t seed) {
  Rng rng(keyed_hash(seed, 0x6c7368ULL, dim));
  std::vector<std::vector<double>> planes(count, std::vector<double>(dim));
  for (auto& p : planes)
    for (std::size_t d = 0; d < dim; d += 2) {
      const double u1 = to_open_unit(rng());
      const double u2 = to_open_unit(rng());
      const double r = std::sqrt(-2.0 * std::log(u1));
      p[d] = r * std::cos(2.0 * std::numbers::pi * u2);
      if (d + 1 < dim) p[d + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
    }
  return planes;
}

}  // namespace

SimilarityIndex::SimilarityIndex(std::vector<std::string> ids, std::vector<std::vector<double>> vectors,
                                 const SimilarityConfig& config)
    : config_{config}, ids_{std::move(ids)}, vectors_{std::move(vectors)} {
  config_.validate();
  if (ids_.size() != vectors_.size()) throw InvalidArgument("similarity index: ids and vectors differ in length");
  bands_.resize(config_.planes / config_.band_bits);
  if (vectors_.empty()) return;
  dim_ = vectors_.front().size();
  for (auto& v : vectors_) {
    if (v.size() != dim_ || dim_ == 0) throw InvalidArgument("similarity index: inconsistent vector dimensions");
    const double norm = std::sqrt(dot(v, v));
    if (norm == 0.0) throw InvalidArgument("similarity index: zero vector");
    for (double& x : v) x /= norm;
  }
  planes_ = random_planes(config_.planes, dim_, config_.seed);
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    const auto keys = band_keys(vectors_[i]);
    for (std::size_t b = 0; b < keys.size(); ++b) bands_[b][keys[b]].push_back(i);
  }
}

std::vector<std::uint64_t> SimilarityIndex::band_keys(std::span<const double> v) const {
  std::vector<std::uint64_t> keys(bands_.size());
  for (std::size_t b = 0; b < bands_.size(); ++b) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < config_.band_bits; ++k)
      if (dot(planes_[b * config_.band_bits + k], v) >= 0.0) bits |= std::uint64_t{1} << k;
    keys[b] = keyed_hash(config_.seed, b, bits);
  }
  return keys;
}

double SimilarityIndex::similarity(std::size_t i, std::size_t j) const { return dot(vectors_.at(i), vectors_.at(j)); }

double SimilarityIndex::similarity_to(std::size_t i, std::span<const double> v) const {
  if (v.size() != dim_) throw InvalidArgument("similarity: query dimension does not match the index");
  return dot(vectors_.at(i), v);
}

std::vector<std::pair<std::size_t, std::size_t>> SimilarityIndex::candidate_pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& band : bands_)
    for (const auto& [key, members] : band)
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) out.emplace_back(members[a], members[b]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> SimilarityIndex::candidates_for(std::span<const double> v) const {
  if (empty()) return {};
  if (v.size() != dim_) throw InvalidArgument("similarity: query dimension does not match the index");
  std::vector<std::size_t> out;
  const auto keys = band_keys(v);
  for (std::size_t b = 0; b < keys.size(); ++b)
    if (const auto it = bands_[b].find(keys[b]); it != bands_[b].end())
      out.insert(out.end(), it->second.begin(), it->second.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::vector<double>> embed_for_similarity(const std::vector<std::string>& texts,
                                                      const SimilarityConfig& config, ModelGateway* gateway,
                                                      std::size_t workers) {
  std::vector<std::vector<double>> out(texts.size());
  if (config.backend == EmbeddingBackend::hashed_ngram_fallback) {
    parallel_for(texts.size(), workers, [&](std::size_t i) {
      out[i] = hashed_ngram_embedding(texts[i], config.fallback_dim, config.seed);
    });
    return out;
  }
  if (!gateway) throw InvalidArgument("gateway embeddings requested without a gateway");
  // Shards of whole gateway batches, so results do not depend on the worker count.
  const std::size_t shard = std::max<std::size_t>(1, gateway->config().embed_batch) * 4;
  const std::size_t n_shards = (texts.size() + shard - 1) / shard;
  parallel_for(n_shards, workers, [&](std::size_t s) {
    const auto begin = s * shard;
    const auto end = std::min(texts.size(), begin + shard);
    auto vecs = gateway->embed_texts(std::vector<std::string>(texts.begin() + begin, texts.begin() + end));
    for (std::size_t k = 0; k < vecs.size(); ++k) out[begin + k] = std::move(vecs[k]);
  });
  return out;
}

SimilarityIndex build_similarity_index(std::span<const InstructionRecord> records, const SimilarityConfig& config,
                                       ModelGateway* gateway, std::size_t workers) {
  std::vector<std::string> ids, texts;
  ids.reserve(records.size());
  texts.reserve(records.size());
  for (const auto& r : records) {
    auto text = r.human_text();
    if (prompts::trim(text).empty()) throw InvalidArgument("record '" + r.id + "' has no prompt text to index");
    ids.push_back(r.id);
    texts.push_back(std::move(text));
  }
  return SimilarityIndex(std::move(ids), embed_for_similarity(texts, config, gateway, workers), config);
}

// ---- dedup ----

DedupResult dedup_dataset(std::span<const InstructionRecord> records, const SimilarityIndex& index,
                          SelectionManifest* manifest, const std::string& stage) {
  if (records.size() != index.size()) throw InvalidArgument("dedup: index was built on a different dataset");
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].id != index.id(i)) throw InvalidArgument("dedup: index was built on a different dataset");
  const auto& cfg = index.config();
  const std::size_t n = records.size();

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (cfg.exhaustive) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    pairs = index.candidate_pairs();
  }

  DedupResult result;
  result.candidate_pairs = pairs.size();
  constexpr auto kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> first_match(n, kNone);
  std::vector<double> match_score(n, 0.0);
  // Pairs are sorted by (i, j), so the first hit for j has the smallest i.
  for (const auto& [i, j] : pairs) {
    if (first_match[j] != kNone) continue;
    ++result.scored_pairs;
    const double s = index.similarity(i, j);
    if (cfg.crosses(s)) {
      first_match[j] = i;
      match_score[j] = s;
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    if (first_match[j] == kNone) {
      result.kept.push_back(records[j]);
      if (manifest) manifest->keep(records[j].id, stage, "unique");
      continue;
    }
    result.removed.push_back(records[j].id);
    result.pairs.push_back({records[j].id, records[first_match[j]].id, match_score[j]});
    if (manifest)
      manifest->drop(records[j].id, stage, "near_duplicate",
                     {{"similarity", match_score[j]}, {"duplicate_of", records[first_match[j]].id}});
  }
  return result;
}

void write_dedup_report(const DedupResult& result, const SimilarityConfig& config, const std::filesystem::path& path) {
  std::string out =
      json{{"type", "header"},
           {"criterion", config.criterion()},
           {"reading", config.threshold_is_similarity ? "threshold applied to cosine similarity"
                                                      : "threshold applied to cosine distance (1 - similarity); a "
                                                        "similarity cut this low would flag most pairs of dense "
                                                        "embeddings"},
           {"candidate_pairs", result.candidate_pairs},
           {"removed", result.removed.size()}}
          .dump() +
      "\n";
  for (const auto& p : result.pairs)
    out += json{{"id", p.id}, {"duplicate_of", p.duplicate_of}, {"score", p.score}}.dump() + "\n";
  write_file_atomic(path, out);
}

// ---- decontamination ----

std::map<std::string, std::vector<std::string>> load_benchmarks(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("benchmark directory '" + dir.string() + "' not found");
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    if (!in) throw IoError("cannot read '" + entry.path().string() + "'");
    auto& prompts_for = out[entry.path().stem().string()];
    std::string line;
    while (std::getline(in, line)) {
      auto p = prompts::trim(line);
      if (!p.empty()) prompts_for.push_back(std::move(p));
    }
  }
  return out;
}

json ContaminationHit::to_json() const {
  return {{"id", id}, {"benchmark", benchmark}, {"matched_prompt", matched_prompt}, {"score", score},
          {"criterion", criterion}};
}

DecontamResult decontaminate_against_benchmarks(std::span<const InstructionRecord> records,
                                                const SimilarityIndex& index,
                                                const std::map<std::string, std::vector<std::string>>& benchmarks,
                                                ModelGateway* gateway, SelectionManifest* manifest,
                                                const std::string& stage, std::size_t workers) {
  if (records.size() != index.size()) throw InvalidArgument("decontam: index was built on a different dataset");
  const auto& cfg = index.config();
  const auto criterion = cfg.criterion();
  DecontamResult result;

  struct Query {
    const std::string* benchmark;
    const std::string* prompt;
  };
  std::vector<Query> queries;
  std::vector<std::string> texts;
  for (const auto& [name, list] : benchmarks) {
    if (list.empty()) {
      result.warnings.push_back("benchmark '" + name + "' has no prompts; skipped");
      continue;
    }
    for (const auto& p : list) {
      queries.push_back({&name, &p});
      texts.push_back(p);
    }
  }

  // best[(record, benchmark)] = (score, query index); highest score, then earliest prompt.
  std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> best;
  if (!queries.empty() && !index.empty()) {
    const auto vectors = embed_for_similarity(texts, cfg, gateway, workers);
    std::vector<std::vector<std::pair<std::size_t, double>>> hits(queries.size());
    parallel_for(queries.size(), workers, [&](std::size_t q) {
      std::vector<std::size_t> cands;
      if (cfg.exhaustive) {
        cands.resize(index.size());
        for (std::size_t i = 0; i < cands.size(); ++i) cands[i] = i;
      } else {
        cands = index.candidates_for(vectors[q]);
      }
      for (auto i : cands) {
        const double s = index.similarity_to(i, vectors[q]);
        if (cfg.crosses(s)) hits[q].emplace_back(i, s);
      }
    });
    for (std::size_t q = 0; q < queries.size(); ++q)
      for (const auto& [i, s] : hits[q]) {
        const auto key = std::make_pair(i, *queries[q].benchmark);
        const auto it = best.find(key);
        if (it == best.end() || s > it->second.first) best[key] = {s, q};
      }
  }

  std::vector<bool> contaminated(records.size(), false);
  for (const auto& [key, hit] : best) {
    contaminated[key.first] = true;
    result.report.push_back({records[key.first].id, key.second, *queries[hit.second].prompt, hit.first, criterion});
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (contaminated[i]) {
      result.removed.push_back(records[i].id);
      if (manifest) {
        const auto it = std::find_if(result.report.begin(), result.report.end(),
                                     [&](const ContaminationHit& h) { return h.id == records[i].id; });
        manifest->drop(records[i].id, stage, "contaminated", {{"benchmark", it->benchmark}, {"similarity", it->score}});
      }
    } else {
      result.kept.push_back(records[i]);
      if (manifest) manifest->keep(records[i].id, stage, "clean");
    }
  }
  return result;
}

void write_contamination_report(std::span<const ContaminationHit> hits, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(hits.size());
  for (const auto& h : hits) rows.push_back(h.to_json());
  write_jsonl(rows, path);
}

}  // namespace curate
