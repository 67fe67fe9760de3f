#include "curate/domain_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"

namespace curate {

const std::vector<std::string>& default_knowledge_denylist() {
  static const std::vector<std::string> kList{"SST-2", "IMDb"};
  return kList;
}

std::string normalize_source(std::string_view source) {
  std::string out;
  for (char c : source) {
    if (c >= 'A' && c <= 'Z') out += static_cast<char>(c + 32);
    else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) out += c;
  }
  return out;
}

bool source_denied(std::string_view source, const std::vector<std::string>& denylist) {
  if (denylist.empty()) return false;
  std::vector<std::string> candidates{normalize_source(source)};
  std::size_t start = 0;
  while (start <= source.size()) {
    const auto slash = source.find('/', start);
    const auto end = slash == std::string_view::npos ? source.size() : slash;
    candidates.push_back(normalize_source(source.substr(start, end - start)));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  for (const auto& entry : denylist) {
    const auto n = normalize_source(entry);
    if (n.empty()) continue;
    if (std::find(candidates.begin(), candidates.end(), n) != candidates.end()) return true;
  }
  return false;
}

std::vector<InstructionRecord> filter_knowledge_sources(std::vector<InstructionRecord> records,
                                                        const std::vector<std::string>& denylist,
                                                        SelectionManifest& manifest, const std::string& stage) {
  std::vector<InstructionRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    if (source_denied(r.source, denylist)) {
      manifest.drop(r.id, stage, "low_knowledge_source", {{"source", r.source}});
    } else {
      manifest.keep(r.id, stage, "pass");
      kept.push_back(std::move(r));
    }
  }
  return kept;
}

std::string augmentation_key(const InstructionRecord& record, std::size_t max_tokens) {
  const Turn* first = record.first_human();
  if (!first) return {};
  const auto tokens = tokenize(first->content);
  std::string key;
  for (std::size_t i = 0; i < tokens.size() && i < max_tokens; ++i) {
    if (i) key += ' ';
    key += tokens[i];
  }
  return key;
}

std::vector<InstructionRecord> dedup_augmented(std::vector<InstructionRecord> records, const GroupKeyFn& key,
                                               std::size_t max_per_group, SelectionManifest& manifest,
                                               const std::string& stage) {
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<InstructionRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    auto& count = seen[key(r)];
    if (count >= max_per_group) {
      manifest.drop(r.id, stage, "augmented_duplicate");
      continue;
    }
    ++count;
    manifest.keep(r.id, stage, "pass");
    kept.push_back(std::move(r));
  }
  return kept;
}

DsirSelection dsir_select_domain(const std::vector<InstructionRecord>& pool, const std::vector<std::string>& targets,
                                 std::size_t quota, const DsirConfig& config, std::uint64_t seed,
                                 SelectionManifest& manifest, const std::string& stage, std::size_t workers) {
  if (targets.empty()) throw InvalidArgument("no target distribution: target prompt set is empty");
  if (quota > pool.size())
    throw InvalidArgument("quota " + std::to_string(quota) + " exceeds pool size " + std::to_string(pool.size()));

  std::vector<FeatureVector> target_features(targets.size());
  parallel_for(targets.size(), workers,
               [&](std::size_t i) { target_features[i] = hash_ngram_features(targets[i], config.featurizer); });
  std::vector<FeatureVector> pool_features(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) { pool_features[i] = featurize(pool[i], config.featurizer); });

  DsirSelection out;
  out.model = fit_importance_model(target_features, pool_features, config, keyed_hash(seed, 0x7261));
  out.log_weights = score_all(out.model, pool_features, workers);
  const auto picked = gumbel_topk_resample(out.log_weights, quota, seed, config.noise_scale);

  std::size_t next = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const json scores{{"log_weight", out.log_weights[i]}};
    if (next < picked.size() && picked[next] == i) {
      ++next;
      manifest.keep(pool[i].id, stage, "dsir_selected", scores);
      auto r = pool[i];
      r.mutable_scores().log_importance_weight = out.log_weights[i];
      out.selected.push_back(std::move(r));
    } else {
      manifest.drop(pool[i].id, stage, "dsir_not_selected", scores);
    }
  }
  return out;
}

std::vector<std::string> load_target_prompts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open target prompt file '" + path.string() + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

std::string_view to_string(Strategy s) noexcept { return s == Strategy::dsir ? "dsir" : "source_rules"; }

void DomainPlan::validate() const {
  if (quota == 0) throw ConfigError("domain plan for '" + std::string(to_string(domain)) + "' has zero quota");
  if (strategy == Strategy::dsir && !target_prompt_path)
    throw ConfigError("dsir plan for '" + std::string(to_string(domain)) + "' requires target_prompt_path");
  if (relaxation_level < 0) throw ConfigError("relaxation_level must be nonnegative");
}

json SelectionConfig::to_json() const {
  return {{"dsir", dsir.to_json()},
          {"denylist", denylist},
          {"max_per_group", max_per_group},
          {"group_key_tokens", group_key_tokens},
          {"relax_quota_factor", relax_quota_factor},
          {"relax_noise_factor", relax_noise_factor}};
}

SelectionConfig SelectionConfig::from_json(const json& j) {
  SelectionConfig c;
  if (j.contains("dsir")) c.dsir = DsirConfig::from_json(j.at("dsir"));
  c.denylist = j.value("denylist", c.denylist);
  c.max_per_group = j.value("max_per_group", c.max_per_group);
  c.group_key_tokens = j.value("group_key_tokens", c.group_key_tokens);
  c.relax_quota_factor = j.value("relax_quota_factor", c.relax_quota_factor);
  c.relax_noise_factor = j.value("relax_noise_factor", c.relax_noise_factor);
  if (c.max_per_group == 0) throw ConfigError("selection.max_per_group must be positive");
  if (c.relax_quota_factor < 1.0 || c.relax_noise_factor < 1.0)
    throw ConfigError("relaxation factors must be >= 1");
  return c;
}

std::size_t relaxed_quota(std::size_t quota, int level, double factor) {
  // Rounded before ceil so 10 * 1.5 stays exactly 15.
  const double q = static_cast<double>(quota) * std::pow(factor, level);
  return static_cast<std::size_t>(std::ceil(q - 1e-9));
}

double relaxed_noise(double noise_scale, int level, double factor) { return noise_scale * std::pow(factor, level); }

DomainSelection select_domain(const DomainPlan& plan, const std::vector<InstructionRecord>& pool,
                              const std::vector<std::string>& targets, const SelectionConfig& config,
                              std::uint64_t seed, SelectionManifest& manifest) {
  plan.validate();
  const std::string domain(to_string(plan.domain));
  const std::string stage = "select:" + domain;
  const std::uint64_t domain_seed = keyed_hash(seed, stable_hash(domain));
  DomainSelection out;
  std::size_t quota = relaxed_quota(plan.quota, plan.relaxation_level, config.relax_quota_factor);

  if (plan.strategy == Strategy::dsir) {
    if (quota > pool.size()) {
      out.warnings.push_back(domain + ": quota " + std::to_string(quota) + " exceeds pool of " +
                             std::to_string(pool.size()) + "; selecting the whole pool");
      quota = pool.size();
    }
    auto cfg = config.dsir;
    cfg.noise_scale = relaxed_noise(cfg.noise_scale, plan.relaxation_level, config.relax_noise_factor);
    out.selected =
        dsir_select_domain(pool, targets, quota, cfg, domain_seed, manifest, stage, config.workers).selected;
    return out;
  }

  auto eligible = filter_knowledge_sources(pool, config.denylist, manifest, stage + ":source");
  const auto tokens = config.group_key_tokens;
  eligible = dedup_augmented(
      std::move(eligible), [tokens](const InstructionRecord& r) { return augmentation_key(r, tokens); },
      config.max_per_group, manifest, stage + ":augmented");
  if (quota > eligible.size()) {
    if (quota > pool.size() || plan.relaxation_level > 0)
      out.warnings.push_back(domain + ": quota " + std::to_string(quota) + " exceeds " +
                             std::to_string(eligible.size()) + " eligible records; taking all");
    quota = eligible.size();
  }
  const std::vector<double> flat(eligible.size(), 0.0);
  const auto picked = gumbel_topk_resample(flat, quota, domain_seed, 1.0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    if (next < picked.size() && picked[next] == i) {
      ++next;
      manifest.keep(eligible[i].id, stage, "source_rules_selected");
      out.selected.push_back(std::move(eligible[i]));
    } else {
      manifest.drop(eligible[i].id, stage, "over_quota");
    }
  }
  return out;
}

GapReport parse_gap_report(const json& j) {
  if (!j.is_object()) throw ConfigError("gap report must be a JSON object");
  GapReport report;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (!v.is_object() || !v.contains("verdict")) throw ConfigError("gap report entry '" + it.key() + "' lacks a verdict");
    const auto verdict = v.at("verdict").get<std::string>();
    GapEntry e;
    if (verdict == "gap") e.verdict = Verdict::gap;
    else if (verdict == "saturated") e.verdict = Verdict::saturated;
    else throw ConfigError("gap report entry '" + it.key() + "' has unknown verdict '" + verdict + "'");
    e.note = v.value("note", "");
    report[it.key()] = std::move(e);
  }
  return report;
}

GapReport load_gap_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open gap report '" + path.string() + "'");
  try {
    return parse_gap_report(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("gap report '" + path.string() + "': " + e.what());
  }
}

void check_gap_report(const GapReport& report, const std::vector<DomainPlan>& plans) {
  for (const auto& p : plans)
    if (!report.contains(std::string(to_string(p.domain))))
      throw ConfigError("gap report has no verdict for domain '" + std::string(to_string(p.domain)) + "'");
}

SupplementResult supplement_weak_domains(const GapReport& report,
                                         const std::map<Domain, std::vector<InstructionRecord>>& pools,
                                         std::vector<DomainPlan>& plans,
                                         const std::map<Domain, std::vector<InstructionRecord>>& current,
                                         const std::map<Domain, std::vector<std::string>>& targets,
                                         const SelectionConfig& config, std::uint64_t seed,
                                         SelectionManifest& manifest) {
  check_gap_report(report, plans);
  SupplementResult out;
  static const std::vector<InstructionRecord> kEmptyPool;
  static const std::vector<std::string> kNoTargets;
  for (auto& plan : plans) {
    const std::string domain(to_string(plan.domain));
    if (report.at(domain).verdict != Verdict::gap) continue;
    ++plan.relaxation_level;

    const auto pool_it = pools.find(plan.domain);
    const auto& pool = pool_it == pools.end() ? kEmptyPool : pool_it->second;
    const auto target_it = targets.find(plan.domain);
    const auto& target = target_it == targets.end() ? kNoTargets : target_it->second;

    std::unordered_set<std::string> have;
    if (auto it = current.find(plan.domain); it != current.end())
      for (const auto& r : it->second) have.insert(r.id);

    SelectionManifest scratch;
    auto sel = select_domain(plan, pool, target, config, seed, scratch);
    out.warnings.insert(out.warnings.end(), sel.warnings.begin(), sel.warnings.end());

    std::unordered_set<std::string> picked;
    auto& added = out.added[plan.domain];
    for (auto& r : sel.selected) {
      picked.insert(r.id);
      if (have.contains(r.id)) continue;
      r.meta["weak_domain_supplement"] = plan.relaxation_level;
      added.push_back(std::move(r));
    }
    const std::string stage = "supplement:" + domain + ":L" + std::to_string(plan.relaxation_level);
    for (const auto& r : pool) {
      if (have.contains(r.id)) manifest.keep(r.id, stage, "previously_selected");
      else if (picked.contains(r.id)) manifest.keep(r.id, stage, "weak_domain_supplement");
      else manifest.drop(r.id, stage, "not_selected");
    }
    if (added.empty())
      out.warnings.push_back(domain + ": relaxation level " + std::to_string(plan.relaxation_level) +
                             " admitted no new records (pool exhausted)");
  }
  return out;
}

std::vector<InstructionRecord> assemble_foundational(std::vector<OriginSet> selections,
                                                     std::vector<InstructionRecord> seed_set, std::uint64_t seed,
                                                     SelectionManifest& manifest) {
  selections.push_back({"replay_seed", std::move(seed_set)});
  std::unordered_map<std::string, std::string> owner;
  std::vector<std::string> collisions;
  for (const auto& set : selections)
    for (const auto& r : set.records) {
      auto [it, fresh] = owner.emplace(r.id, set.origin);
      if (!fresh) collisions.push_back(r.id + " (" + it->second + ", " + set.origin + ")");
    }
  if (!collisions.empty()) {
    std::string msg = "id collision in foundational assembly:";
    for (std::size_t i = 0; i < collisions.size() && i < 20; ++i) msg += " " + collisions[i];
    if (collisions.size() > 20) msg += " ... (" + std::to_string(collisions.size()) + " total)";
    throw InvalidArgument(msg);
  }

  std::vector<std::pair<std::uint64_t, InstructionRecord>> keyed;
  for (auto& set : selections)
    for (auto& r : set.records) {
      r.meta["origin"] = set.origin;
      keyed.emplace_back(keyed_hash(seed, 0x6173, stable_hash(r.id)), std::move(r));
    }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second.id < b.second.id;
  });
  std::vector<InstructionRecord> out;
  out.reserve(keyed.size());
  for (auto& [k, r] : keyed) {
    manifest.keep(r.id, "assemble_foundational", r.meta["origin"].get<std::string>());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace curate
