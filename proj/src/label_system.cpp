#include "curate/label_system.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"
#include "curate/prompts.hpp"

namespace curate {

// ---- taxonomy ----

std::optional<std::string> LabelTaxonomy::resolve(const std::string& tag) const {
  if (const auto it = alias.find(tag); it != alias.end()) return it->second;
  const auto folded = fold_tag(tag);
  if (const auto it = alias.find(folded); it != alias.end()) return it->second;
  if (second_level.contains(tag)) return tag;
  return std::nullopt;
}

void LabelTaxonomy::validate() const {
  for (const auto& [raw, canonical] : alias)
    if (!second_level.contains(canonical))
      throw SchemaError("taxonomy: alias '" + raw + "' points at unknown label '" + canonical + "'");
  for (const auto& label : second_level) {
    const auto it = parent.find(label);
    if (it == parent.end()) throw SchemaError("taxonomy: label '" + label + "' has no parent");
    if (!first_level.contains(it->second))
      throw SchemaError("taxonomy: parent '" + it->second + "' of '" + label + "' is not a first-level label");
  }
}

json LabelTaxonomy::to_json() const {
  return {{"second_level", second_level}, {"first_level", first_level}, {"parent", parent}, {"alias", alias}};
}

LabelTaxonomy LabelTaxonomy::from_json(const json& j) {
  LabelTaxonomy t;
  try {
    t.second_level = j.at("second_level").get<std::set<std::string>>();
    t.first_level = j.at("first_level").get<std::set<std::string>>();
    t.parent = j.at("parent").get<std::map<std::string, std::string>>();
    t.alias = j.at("alias").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("taxonomy: ") + e.what());
  }
  t.validate();
  return t;
}

void LabelTaxonomy::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

LabelTaxonomy LabelTaxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open taxonomy '" + path.string() + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// ---- tagging ----

json TaggingConfig::to_json() const {
  return {{"prompt_template", prompt_template.empty() ? std::string(prompts::default_tagging_template()) : prompt_template},
          {"delimiter", delimiter},
          {"max_tags", max_tags},
          {"max_tag_length", max_tag_length},
          {"parse_retries", parse_retries}};
}

TaggingConfig TaggingConfig::from_json(const json& j) {
  TaggingConfig c;
  c.prompt_template = j.value("prompt_template", c.prompt_template);
  if (c.prompt_template == prompts::default_tagging_template()) c.prompt_template.clear();
  c.delimiter = j.value("delimiter", c.delimiter);
  c.max_tags = j.value("max_tags", c.max_tags);
  c.max_tag_length = j.value("max_tag_length", c.max_tag_length);
  c.parse_retries = j.value("parse_retries", c.parse_retries);
  if (c.delimiter.empty() || c.max_tags == 0 || c.parse_retries < 0)
    throw ConfigError("tagging: delimiter must be non-empty, max_tags positive, parse_retries >= 0");
  return c;
}

std::string fold_tag(std::string_view tag) {
  std::string out;
  bool pending_space = false;
  for (char c : tag) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  return out;
}

std::optional<std::vector<std::string>> parse_tags(std::string_view reply, const TaggingConfig& config) {
  std::vector<std::string> tags;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto next = reply.find(config.delimiter, pos);
    const auto nl = reply.find('\n', pos);
    std::size_t step = config.delimiter.size();
    if (nl != std::string_view::npos && (next == std::string_view::npos || nl < next)) {
      next = nl;
      step = 1;
    }
    const auto piece = fold_tag(reply.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (!piece.empty()) {
      if (piece.size() > config.max_tag_length) return std::nullopt;
      if (seen.insert(piece).second && tags.size() < config.max_tags) tags.push_back(piece);
    }
    if (next == std::string_view::npos) break;
    pos = next + step;
  }
  if (tags.empty()) return std::nullopt;
  return tags;
}

TagResult tag_second_level(const InstructionRecord& record, ModelGateway& gateway, const TaggingConfig& config) {
  const std::string_view tpl =
      config.prompt_template.empty() ? prompts::default_tagging_template() : std::string_view(config.prompt_template);
  const auto prompt = prompts::fill(tpl, {{"instruction", record.human_text()}});
  TagResult result;
  for (int attempt = 0; attempt <= config.parse_retries; ++attempt) {
    result.retries = attempt;
    try {
      // Retries after a parse failure are distinct requests so that mock and
      // replay backends can answer them differently.
      std::vector<ChatMessage> messages{{"user", prompt}};
      if (attempt > 0)
        messages.push_back({"user", "Your previous reply could not be parsed. Reply only with tags separated by '" +
                                        config.delimiter + "'. Attempt " + std::to_string(attempt + 1) + "."});
      const auto reply = gateway.complete_chat(messages, ModelRole::tagger);
      if (auto tags = parse_tags(reply, config)) {
        result.tags = std::move(*tags);
        result.error.clear();
        return result;
      }
      result.error = "unparseable tagger reply";
    } catch (const GatewayError& e) {
      if (e.code() == GatewayErrorCode::budget_exhausted) throw;
      result.error = e.what();
      result.untaggable = true;
      return result;
    }
  }
  result.untaggable = true;
  return result;
}

std::vector<TagResult> tag_dataset(std::span<const InstructionRecord> records, ModelGateway& gateway,
                                   const TaggingConfig& config, std::size_t workers) {
  std::vector<TagResult> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) { out[i] = tag_second_level(records[i], gateway, config); });
  return out;
}

// ---- clustering ----

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::pair<std::size_t, double> nearest(const std::vector<double>& p, const std::vector<std::vector<double>>& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(p, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best, best_d};
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    const KMeansConfig& config) {
  const std::size_t n = points.size();
  if (k == 0 || k > n) throw InvalidArgument("kmeans: k=" + std::to_string(k) + " with " + std::to_string(n) + " points");
  const std::size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw InvalidArgument("kmeans: points have different dimensions");

  Rng rng(keyed_hash(seed, 0x6b6d6561ULL));
  KMeansResult r;
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(n);
  r.centers.push_back(points[first]);
  chosen[first] = 1;
  while (r.centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], r.centers.back()));
      if (!chosen[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        pick = i;
        u -= d2[i];
        if (u <= 0.0) break;
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (!chosen[i]) pick = i;
    }
    chosen[pick] = 1;
    r.centers.push_back(points[pick]);
  }

  r.assignment.assign(n, 0);
  double previous = std::numeric_limits<double>::infinity();
  for (r.iterations = 1; r.iterations <= config.max_iterations; ++r.iterations) {
    std::vector<double> dist(n);
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [c, d] = nearest(points[i], r.centers);
      r.assignment[i] = c;
      dist[i] = d;
      r.inertia += d;
    }
    // Refill empty clusters with the point farthest from its center.
    std::vector<std::size_t> sizes(k, 0);
    for (auto c : r.assignment) ++sizes[c];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (sizes[r.assignment[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
      if (far == n) continue;
      --sizes[r.assignment[far]];
      r.assignment[far] = c;
      sizes[c] = 1;
      r.inertia -= dist[far];
      dist[far] = 0.0;
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d) sums[r.assignment[i]][d] += points[i][d];
    for (std::size_t c = 0; c < k; ++c)
      if (sizes[c] > 0)
        for (std::size_t d = 0; d < dim; ++d) r.centers[c][d] = sums[c][d] / static_cast<double>(sizes[c]);

    const bool converged = r.inertia == 0.0 || (std::isfinite(previous) &&
                                                std::abs(previous - r.inertia) <= config.tolerance * previous);
    previous = r.inertia;
    if (converged) break;
  }
  r.iterations = std::min(r.iterations, config.max_iterations);
  // Final assignment against the last centers.
  r.inertia = 0.0;
  std::vector<std::size_t> sizes(k, 0);
  std::vector<std::size_t> final_assignment(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [c, d] = nearest(points[i], r.centers);
    final_assignment[i] = c;
    ++sizes[c];
    r.inertia += d;
  }
  if (std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; })) r.assignment = final_assignment;
  return r;
}

ClusterResult cluster_normalize(const std::vector<std::string>& tags, const std::vector<std::vector<double>>& embeddings,
                                const std::map<std::string, std::size_t>& tag_counts, std::size_t k,
                                std::uint64_t seed, const KMeansConfig& config) {
  if (k == 0 || k > tags.size())
    throw InvalidArgument("cluster_normalize: K=" + std::to_string(k) + " but only " + std::to_string(tags.size()) +
                          " distinct tags");
  ClusterResult out;
  if (k == tags.size()) {
    for (const auto& t : tags) {
      out.alias[t] = t;
      out.canonical.insert(t);
    }
    return out;
  }
  if (embeddings.size() != tags.size())
    throw InvalidArgument("cluster_normalize: " + std::to_string(embeddings.size()) + " embeddings for " +
                          std::to_string(tags.size()) + " tags");
  const auto km = kmeans(embeddings, k, seed, config);
  out.iterations = km.iterations;
  std::vector<std::string> names(k);
  std::vector<std::size_t> best(k, 0);
  const auto count_of = [&](const std::string& t) {
    const auto it = tag_counts.find(t);
    return it == tag_counts.end() ? std::size_t{0} : it->second;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto c = km.assignment[i];
    const auto cnt = count_of(tags[i]);
    if (names[c].empty() || cnt > best[c] || (cnt == best[c] && tags[i] < names[c])) {
      names[c] = tags[i];
      best[c] = cnt;
    }
  }
  for (std::size_t i = 0; i < tags.size(); ++i) out.alias[tags[i]] = names[km.assignment[i]];
  for (const auto& n : names)
    if (!n.empty()) out.canonical.insert(n);
  return out;
}

void apply_alias_overrides(std::map<std::string, std::string>& alias, const std::map<std::string, std::string>& overrides) {
  for (const auto& [raw, target] : overrides) alias[fold_tag(raw)] = fold_tag(target);
  // Every target must map to itself unless it was explicitly redirected.
  std::vector<std::string> targets;
  for (const auto& [raw, target] : alias) targets.push_back(target);
  for (const auto& t : targets) alias.try_emplace(t, t);
  for (auto& [raw, target] : alias) {
    std::string cur = target;
    for (std::size_t steps = 0;; ++steps) {
      const auto& next = alias.at(cur);
      if (next == cur) break;
      if (steps > alias.size()) throw ConfigError("label overrides form a cycle through '" + raw + "'");
      cur = next;
    }
    target = cur;
  }
}

std::map<std::string, std::string> load_alias_overrides(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open override file '" + path.string() + "'");
  try {
    return json::parse(in).get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---- first level ----

FirstLevelResult derive_first_level(const std::set<std::string>& canonical, ModelGateway& gateway,
                                    std::size_t target_count, std::size_t batch_size,
                                    const std::string& prompt_template) {
  if (target_count == 0 || batch_size == 0) throw InvalidArgument("derive_first_level: zero target or batch size");
  const std::string_view tpl =
      prompt_template.empty() ? prompts::default_grouping_template() : std::string_view(prompt_template);
  FirstLevelResult out;
  const std::vector<std::string> labels(canonical.begin(), canonical.end());
  for (std::size_t begin = 0; begin < labels.size(); begin += batch_size) {
    const auto end = std::min(labels.size(), begin + batch_size);
    std::map<std::string, std::string> by_fold;
    std::string listing;
    for (std::size_t i = begin; i < end; ++i) {
      by_fold.emplace(fold_tag(labels[i]), labels[i]);
      listing += "- " + labels[i] + "\n";
    }
    std::string reply;
    try {
      reply = gateway.complete_chat(
          {{"user", prompts::fill(tpl, {{"count", std::to_string(target_count)}, {"labels", listing}})}}, ModelRole::tagger);
    } catch (const GatewayError& e) {
      if (e.code() == GatewayErrorCode::budget_exhausted) throw;
      out.warnings.push_back(std::string("first-level grouping batch failed: ") + e.what());
    }
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line)) {
      const auto arrow = line.find("=>");
      if (arrow == std::string::npos) continue;
      auto label = prompts::trim(std::string_view(line).substr(0, arrow));
      if (label.starts_with("- ")) label = prompts::trim(std::string_view(label).substr(2));
      const auto category = prompts::trim(std::string_view(line).substr(arrow + 2));
      const auto it = by_fold.find(fold_tag(label));
      if (it == by_fold.end() || category.empty()) continue;
      out.parent.try_emplace(it->second, category);
    }
  }
  for (const auto& l : labels) {
    if (out.parent.contains(l)) continue;
    out.parent[l] = kOtherFirstLevel;
    out.uncovered.push_back(l);
  }
  std::set<std::string> categories;
  for (const auto& [l, c] : out.parent) categories.insert(c);
  if (!out.uncovered.empty())
    out.warnings.push_back(std::to_string(out.uncovered.size()) + " labels not grouped; assigned to " + kOtherFirstLevel);
  if (categories.size() > target_count + (out.uncovered.empty() ? 0 : 1))
    out.warnings.push_back("grouping produced " + std::to_string(categories.size()) + " first-level labels, asked for " +
                           std::to_string(target_count));
  return out;
}

// ---- frequencies ----

std::map<std::string, std::size_t> compute_label_frequencies(std::span<const InstructionRecord> records,
                                                             const LabelTaxonomy* taxonomy, std::size_t workers) {
  const std::size_t shards = std::max<std::size_t>(1, std::min(workers, records.size()));
  std::vector<std::map<std::string, std::size_t>> partial(shards);
  const std::size_t chunk = records.empty() ? 0 : (records.size() + shards - 1) / shards;
  parallel_for(shards, shards, [&](std::size_t s) {
    const auto end = std::min(records.size(), (s + 1) * chunk);
    for (std::size_t i = s * chunk; i < end; ++i) {
      if (!records[i].labels) continue;
      std::set<std::string> distinct;
      for (const auto& l : records[i].labels->second_level) {
        auto resolved = taxonomy ? taxonomy->resolve(l) : std::nullopt;
        distinct.insert(resolved ? *resolved : l);
      }
      for (const auto& l : distinct) ++partial[s][l];
    }
  });
  std::map<std::string, std::size_t> out;
  for (const auto& p : partial)
    for (const auto& [l, c] : p) out[l] += c;
  return out;
}

std::map<std::string, std::size_t> first_level_counts(std::span<const InstructionRecord> records) {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records) {
    if (!r.labels) continue;
    const std::set<std::string> distinct(r.labels->first_level.begin(), r.labels->first_level.end());
    for (const auto& l : distinct) ++out[l];
  }
  return out;
}

// ---- orchestration ----

json LabelConfig::to_json() const {
  return {{"tagging", tagging.to_json()},
          {"second_level_count", second_level_count ? json(*second_level_count) : json(nullptr)},
          {"first_level_count", first_level_count},
          {"grouping_batch", grouping_batch},
          {"grouping_template",
           grouping_template.empty() ? std::string(prompts::default_grouping_template()) : grouping_template},
          {"kmeans", {{"max_iterations", kmeans.max_iterations}, {"tolerance", kmeans.tolerance}}},
          {"override_file", override_file ? json(override_file->string()) : json(nullptr)}};
}

LabelConfig LabelConfig::from_json(const json& j) {
  LabelConfig c;
  try {
    if (j.contains("tagging")) c.tagging = TaggingConfig::from_json(j.at("tagging"));
    if (j.contains("second_level_count") && !j.at("second_level_count").is_null())
      c.second_level_count = j.at("second_level_count").get<std::size_t>();
    c.first_level_count = j.value("first_level_count", c.first_level_count);
    c.grouping_batch = j.value("grouping_batch", c.grouping_batch);
    c.grouping_template = j.value("grouping_template", c.grouping_template);
    if (c.grouping_template == prompts::default_grouping_template()) c.grouping_template.clear();
    if (j.contains("kmeans")) {
      c.kmeans.max_iterations = j.at("kmeans").value("max_iterations", c.kmeans.max_iterations);
      c.kmeans.tolerance = j.at("kmeans").value("tolerance", c.kmeans.tolerance);
    }
    if (j.contains("override_file") && !j.at("override_file").is_null())
      c.override_file = j.at("override_file").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("label config: ") + e.what());
  }
  if (c.first_level_count == 0 || c.grouping_batch == 0) throw ConfigError("label config: counts must be positive");
  return c;
}

LabelingResult build_label_system(std::vector<InstructionRecord> records, ModelGateway& gateway,
                                  const LabelConfig& config, std::uint64_t seed, SelectionManifest& manifest,
                                  std::size_t workers, const std::string& stage) {
  LabelingResult out;
  const auto tagged = tag_dataset(records, gateway, config.tagging, workers);

  std::map<std::string, std::size_t> tag_counts;
  for (const auto& t : tagged)
    for (const auto& tag : t.tags) ++tag_counts[tag];  // tags are already unique per record
  std::vector<std::string> distinct;
  for (const auto& [tag, c] : tag_counts) distinct.push_back(tag);

  std::map<std::string, std::string> alias;
  if (!distinct.empty()) {
    const std::size_t k = config.second_level_count.value_or(distinct.size());
    std::vector<std::vector<double>> embeddings;
    if (k < distinct.size()) embeddings = gateway.embed_texts(distinct);
    alias = cluster_normalize(distinct, embeddings, tag_counts, k, seed, config.kmeans).alias;
  }
  if (config.override_file) apply_alias_overrides(alias, load_alias_overrides(*config.override_file));
  else apply_alias_overrides(alias, {});

  auto& tax = out.taxonomy;
  tax.alias = alias;
  for (const auto& [raw, canonical] : alias) tax.second_level.insert(canonical);
  auto first = derive_first_level(tax.second_level, gateway, config.first_level_count, config.grouping_batch,
                                  config.grouping_template);
  tax.parent = std::move(first.parent);
  for (const auto& [label, p] : tax.parent) tax.first_level.insert(p);
  out.warnings = std::move(first.warnings);

  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    const auto& t = tagged[i];
    json scores{{"tag_retries", t.retries}};
    if (t.untaggable) {
      r.labels.reset();
      r.meta["untaggable"] = true;
      ++out.untaggable;
      manifest.keep(r.id, stage, "untaggable", std::move(scores));
      continue;
    }
    LabelSet ls;
    std::set<std::string> seen_second, seen_first;
    for (const auto& tag : t.tags) {
      const auto& canonical = tax.alias.at(tag);
      if (seen_second.insert(canonical).second) ls.second_level.push_back(canonical);
    }
    for (const auto& l : ls.second_level) {
      const auto& p = tax.parent.at(l);
      if (seen_first.insert(p).second) ls.first_level.push_back(p);
    }
    r.labels = std::move(ls);
    manifest.keep(r.id, stage, "tagged", std::move(scores));
  }
  if (out.untaggable > 0) out.warnings.push_back(std::to_string(out.untaggable) + " records untaggable");
  out.frequencies = compute_label_frequencies(records, nullptr, workers);
  out.records = std::move(records);
  return out;
}

}  // namespace curate
