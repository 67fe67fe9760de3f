#include "curate/featurizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"

namespace curate {

json FeaturizerConfig::to_json() const {
  return {{"n_orders", n_orders}, {"buckets", buckets}, {"seed", seed}, {"include_answers", include_answers}};
}

FeaturizerConfig FeaturizerConfig::from_json(const json& j) {
  FeaturizerConfig c;
  c.n_orders = j.value("n_orders", c.n_orders);
  c.buckets = j.value("buckets", c.buckets);
  c.seed = j.value("seed", c.seed);
  c.include_answers = j.value("include_answers", c.include_answers);
  if (c.buckets < 2) throw ConfigError("featurizer.buckets must be >= 2");
  if (c.n_orders.empty()) throw ConfigError("featurizer.n_orders must be non-empty");
  for (int n : c.n_orders)
    if (n < 1 || n > 8) throw ConfigError("featurizer.n_orders entries must be in [1, 8]");
  return c;
}

std::uint64_t FeatureVector::total() const noexcept {
  std::uint64_t t = 0;
  for (const auto& [b, c] : entries) t += c;
  return t;
}

namespace {

bool is_separator(char32_t cp) noexcept {
  if (cp < 0x80) {
    const bool alnum = (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    return !alnum;
  }
  if (cp == 0x85 || cp == 0xA0 || cp == 0x1680 || cp == 0xD7 || cp == 0xF7 || cp == 0xFEFF) return true;
  if (cp >= 0xA1 && cp <= 0xBF) return true;
  if (cp >= 0x2000 && cp <= 0x206F) return true;  // spaces and general punctuation
  if (cp >= 0x3000 && cp <= 0x3003) return true;
  if (cp >= 0x3008 && cp <= 0x3011) return true;
  if (cp >= 0x3014 && cp <= 0x301F) return true;
  if (cp >= 0xFF01 && cp <= 0xFF0F) return true;
  if (cp >= 0xFF1A && cp <= 0xFF20) return true;
  if (cp >= 0xFF3B && cp <= 0xFF40) return true;
  if (cp >= 0xFF5B && cp <= 0xFF65) return true;
  return false;
}

char32_t fold_case(char32_t cp) noexcept {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Decodes one code point starting at i; invalid sequences decode to a
// separator so malformed bytes never glue tokens together.
char32_t decode(std::string_view s, std::size_t& i) noexcept {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return U' ';
  }
  if (i + static_cast<std::size_t>(len) > s.size()) {
    i = s.size();
    return U' ';
  }
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) {
      i += static_cast<std::size_t>(k);
      return U' ';
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      // ASCII fast path.
      ++i;
      if ((b >= '0' && b <= '9') || (b >= 'a' && b <= 'z')) {
        current += static_cast<char>(b);
      } else if (b >= 'A' && b <= 'Z') {
        current += static_cast<char>(b + 32);
      } else if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      continue;
    }
    const char32_t cp = decode(text, i);
    if (is_separator(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      append_utf8(current, fold_case(cp));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint32_t ngram_bucket(std::span<const std::string> tokens, int order, std::uint32_t buckets,
                           std::uint64_t seed) noexcept {
  Fnv1a h(seed);
  h.byte(static_cast<std::uint8_t>(order));
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (k > 0) h.byte(0x1f);
    h.bytes(tokens[k]);
  }
  return static_cast<std::uint32_t>(h.digest() % buckets);
}

FeatureVector hash_ngram_features(std::string_view text, const FeaturizerConfig& config) {
  FeatureVector fv;
  fv.buckets = config.buckets;
  const auto tokens = tokenize(text);
  if (tokens.empty()) return fv;
  std::vector<std::uint32_t> hits;
  hits.reserve(tokens.size() * config.n_orders.size());
  const std::span<const std::string> all(tokens);
  for (int order : config.n_orders) {
    const auto n = static_cast<std::size_t>(order);
    if (n > tokens.size()) continue;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      hits.push_back(ngram_bucket(all.subspan(i, n), order, config.buckets, config.seed));
  }
  std::sort(hits.begin(), hits.end());
  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    while (j < hits.size() && hits[j] == hits[i]) ++j;
    fv.entries.emplace_back(hits[i], static_cast<std::uint32_t>(j - i));
    i = j;
  }
  return fv;
}

std::string featurization_text(const InstructionRecord& record, const FeaturizerConfig& config) {
  if (!config.include_answers) return record.human_text();
  std::string out;
  for (const auto& t : record.conversations) {
    if (t.role == Role::system) continue;
    if (!out.empty()) out += '\n';
    out += t.content;
  }
  return out;
}

FeatureVector featurize(const InstructionRecord& record, const FeaturizerConfig& config) {
  return hash_ngram_features(featurization_text(record, config), config);
}

BucketCounter::BucketCounter(std::uint32_t buckets) : counts_(buckets, 0) {
  if (buckets < 2) throw InvalidArgument("bucket count must be >= 2");
}

void BucketCounter::add(const FeatureVector& features) {
  if (features.buckets != buckets()) throw InvalidArgument("feature vector bucket count mismatch");
  for (const auto& [b, c] : features.entries) {
    counts_[b] += c;
    total_ += c;
  }
}

void BucketCounter::merge(const BucketCounter& other) {
  if (other.buckets() != buckets()) throw InvalidArgument("bucket counter size mismatch");
  for (std::size_t b = 0; b < counts_.size(); ++b) counts_[b] += other.counts_[b];
  total_ += other.total_;
}

BucketDistribution BucketCounter::distribution(double alpha) const {
  if (alpha < 0 || !std::isfinite(alpha)) throw InvalidArgument("smoothing must be a finite value >= 0");
  const double denom = static_cast<double>(total_) + alpha * static_cast<double>(counts_.size());
  if (denom <= 0) throw InvalidArgument("undefined distribution: no counts and zero smoothing");
  BucketDistribution d;
  d.smoothing = alpha;
  d.probs.resize(counts_.size());
  for (std::size_t b = 0; b < counts_.size(); ++b) d.probs[b] = (static_cast<double>(counts_[b]) + alpha) / denom;
  return d;
}

BucketDistribution fit_bucket_distribution(std::span<const FeatureVector> features, std::uint32_t buckets,
                                           double alpha) {
  BucketCounter counter(buckets);
  for (const auto& f : features) counter.add(f);
  return counter.distribution(alpha);
}

std::vector<double> hashed_ngram_embedding(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  FeaturizerConfig fc;
  fc.buckets = 1u << 20;
  fc.seed = seed;
  const auto features = hash_ngram_features(text, fc);
  std::vector<double> v(dim, 0.0);
  for (const auto& [bucket, count] : features.entries) {
    // Each hash supplies the projection signs for 64 dimensions.
    for (std::size_t d = 0; d < dim; d += 64) {
      const auto bits = keyed_hash(seed, 0x656d62ULL, bucket, d);
      for (std::size_t k = 0; k < 64 && d + k < dim; ++k) v[d + k] += ((bits >> k) & 1U) ? count : -double(count);
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[stable_hash(text, seed) % dim] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine similarity of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw InvalidArgument("undefined similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  if (a.buckets != b.buckets) throw InvalidArgument("cosine similarity of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (const auto& [k, c] : a.entries) na += static_cast<double>(c) * c;
  for (const auto& [k, c] : b.entries) nb += static_cast<double>(c) * c;
  if (na == 0 || nb == 0) throw InvalidArgument("undefined similarity: zero vector");
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += static_cast<double>(ia->second) * ib->second;
      ++ia;
      ++ib;
    }
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

constexpr char kDumpMagic[8] = {'C', 'U', 'R', 'F', 'E', 'A', 'T', '1'};

template <typename UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

template <typename UInt>
UInt get_le(std::ifstream& in) {
  unsigned char buf[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(UInt))) throw IoError("truncated feature dump");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_feature_dump(std::span<const FeatureDumpEntry> entries, std::uint32_t buckets,
                        const std::filesystem::path& path) {
  std::string out(kDumpMagic, sizeof(kDumpMagic));
  put_le<std::uint32_t>(out, buckets);
  put_le<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    if (e.features.buckets != buckets) throw InvalidArgument("feature dump entry bucket count mismatch");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.id.size()));
    out += e.id;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.features.entries.size()));
    for (const auto& [b, c] : e.features.entries) {
      put_le<std::uint32_t>(out, b);
      put_le<std::uint32_t>(out, c);
    }
  }
  write_file_atomic(path, out);
}

std::vector<FeatureDumpEntry> read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature dump '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDumpMagic, 8) != 0) throw IoError("bad feature dump magic");
  const auto buckets = get_le<std::uint32_t>(in);
  const auto n = get_le<std::uint64_t>(in);
  std::vector<FeatureDumpEntry> out;
  for (std::uint64_t r = 0; r < n; ++r) {
    FeatureDumpEntry e;
    const auto id_len = get_le<std::uint32_t>(in);
    e.id.resize(id_len);
    if (!in.read(e.id.data(), id_len)) throw IoError("truncated feature dump");
    e.features.buckets = buckets;
    const auto pairs = get_le<std::uint32_t>(in);
    e.features.entries.reserve(pairs);
    for (std::uint32_t k = 0; k < pairs; ++k) {
      const auto b = get_le<std::uint32_t>(in);
      const auto c = get_le<std::uint32_t>(in);
      e.features.entries.emplace_back(b, c);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace curate
