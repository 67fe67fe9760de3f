#include "curate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/manifest.hpp"
#include "curate/subset_sampler.hpp"

namespace curate {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

const std::vector<PoolStatistic>& reference_pool_statistics() {
  static const std::vector<PoolStatistic> stats{{Domain::code, 7.1, 1.5},
                                                {Domain::math, 11.8, 1.4},
                                                {Domain::knowledge, 88.5, 3.3},
                                                {Domain::chat, 9.0, 2.8}};
  return stats;
}

std::vector<DomainQuota> default_domain_quotas() {
  std::vector<DomainQuota> out;
  for (const auto& s : reference_pool_statistics()) {
    DomainQuota q;
    q.domain = s.domain;
    q.quota_ratio = s.used / s.collected;
    if (s.domain == Domain::code || s.domain == Domain::math) {
      q.strategy = Strategy::dsir;
      q.targets = std::string(to_string(s.domain)) + ".txt";
    }
    q.phase = s.domain == Domain::chat ? 2 : 1;
    out.push_back(std::move(q));
  }
  return out;
}

json DomainQuota::to_json() const {
  return {{"domain", to_string(domain)},
          {"strategy", to_string(strategy)},
          {"quota_ratio", quota_ratio},
          {"quota", quota ? json(*quota) : json(nullptr)},
          {"targets", targets},
          {"phase", phase}};
}

DomainQuota DomainQuota::from_json(const json& j) {
  DomainQuota q;
  try {
    q.domain = parse_domain(j.at("domain").get<std::string>());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("domains: ") + e.what());
  }
  const auto strategy = j.value("strategy", std::string("source_rules"));
  if (strategy == "dsir")
    q.strategy = Strategy::dsir;
  else if (strategy == "source_rules")
    q.strategy = Strategy::source_rules;
  else
    throw ConfigError("domains: unknown strategy '" + strategy + "'");
  q.quota_ratio = j.value("quota_ratio", q.quota_ratio);
  if (j.contains("quota") && !j.at("quota").is_null()) q.quota = j.at("quota").get<std::size_t>();
  q.targets = j.value("targets", q.targets);
  q.phase = j.value("phase", q.phase);
  return q;
}

std::vector<DomainPlan> plan_domains(std::span<const DomainQuota> quotas, const std::map<Domain, std::size_t>& pool_sizes,
                                     const fs::path& targets_dir) {
  std::vector<DomainPlan> plans;
  for (const auto& q : quotas) {
    const auto it = pool_sizes.find(q.domain);
    const std::size_t n = it == pool_sizes.end() ? 0 : it->second;
    if (n == 0) continue;
    DomainPlan p;
    p.domain = q.domain;
    p.strategy = q.strategy;
    p.quota = q.quota ? *q.quota
                      : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(q.quota_ratio * double(n))));
    if (q.strategy == Strategy::dsir) p.target_prompt_path = targets_dir / q.targets;
    plans.push_back(std::move(p));
  }
  return plans;
}

void RunConfig::validate() const {
  if (paths.pool.empty()) throw ConfigError("paths.pool is required");
  if (domains.empty()) throw ConfigError("domains must not be empty");
  std::set<Domain> seen;
  for (const auto& d : domains) {
    const std::string name(to_string(d.domain));
    if (!seen.insert(d.domain).second) throw ConfigError("domains: '" + name + "' listed twice");
    if (!d.quota && !(std::isfinite(d.quota_ratio) && d.quota_ratio > 0.0))
      throw ConfigError("domains: '" + name + "' needs a positive quota_ratio");
    if (d.quota && *d.quota == 0) throw ConfigError("domains: '" + name + "' has zero quota");
    if (d.strategy == Strategy::dsir && d.targets.empty())
      throw ConfigError("domains: dsir domain '" + name + "' needs a targets file");
    if (d.phase != 1 && d.phase != 2) throw ConfigError("domains: phase must be 1 or 2");
  }
  for (std::size_t k = 1; k < ladder_sizes.size(); ++k)
    if (ladder_sizes[k] <= ladder_sizes[k - 1]) throw ConfigError("ladder_sizes must be strictly ascending");
  if (workers == 0) throw ConfigError("workers must be positive");
  gateway.validate();
  evolve.validate();
  seed_filter.validate();
  similarity.validate();
}

json RunConfig::to_json() const {
  json d = json::array();
  for (const auto& q : domains) d.push_back(q.to_json());
  return {{"seed", seed},
          {"workers", workers},
          {"paths",
           {{"pool", paths.pool},
            {"targets", paths.targets},
            {"benchmarks", paths.benchmarks},
            {"gap_report", paths.gap_report},
            {"output", paths.output}}},
          {"gateway", gateway.to_json()},
          {"selection", selection.to_json()},
          {"domains", std::move(d)},
          {"labels", labels.to_json()},
          {"seed_filter", seed_filter.to_json()},
          {"evolve", evolve.to_json()},
          {"similarity", similarity.to_json()},
          {"one_stage", one_stage},
          {"ladder_sizes", ladder_sizes}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> known{"seed",        "workers", "paths",  "gateway",    "selection",
                                           "domains",     "labels",  "seed_filter", "evolve", "similarity",
                                           "one_stage",   "ladder_sizes"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.pool = p.value("pool", c.paths.pool);
      c.paths.targets = p.value("targets", c.paths.targets);
      c.paths.benchmarks = p.value("benchmarks", c.paths.benchmarks);
      c.paths.gap_report = p.value("gap_report", c.paths.gap_report);
      c.paths.output = p.value("output", c.paths.output);
    }
    if (j.contains("gateway")) c.gateway = GatewayConfig::from_json(j.at("gateway"));
    if (j.contains("selection")) c.selection = SelectionConfig::from_json(j.at("selection"));
    if (j.contains("domains")) {
      c.domains.clear();
      for (const auto& d : j.at("domains")) c.domains.push_back(DomainQuota::from_json(d));
    }
    if (j.contains("labels")) c.labels = LabelConfig::from_json(j.at("labels"));
    if (j.contains("seed_filter")) c.seed_filter = SeedFilterConfig::from_json(j.at("seed_filter"));
    if (j.contains("evolve")) c.evolve = EvolveConfig::from_json(j.at("evolve"), base_dir);
    if (j.contains("similarity")) c.similarity = SimilarityConfig::from_json(j.at("similarity"));
    c.one_stage = j.value("one_stage", c.one_stage);
    c.ladder_sizes = j.value("ladder_sizes", c.ladder_sizes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json RunConfig::canonical() const {
  auto j = to_json();
  j.erase("workers");
  j["paths"].erase("output");
  for (const char* volatile_key : {"call_budget", "max_inflight", "timeout_seconds", "retry", "endpoint"})
    j["gateway"].erase(volatile_key);
  // Round trip so every number takes its shortest form.
  return json::parse(j.dump());
}

std::uint64_t RunConfig::hash() const { return json_hash(canonical()); }

fs::path RunConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

// ---------------------------------------------------------------------------
// Stages

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::select: return "select";
    case Stage::label: return "label";
    case Stage::seed: return "seed";
    case Stage::assemble: return "assemble";
    case Stage::evolve: return "evolve";
    case Stage::dedup: return "dedup";
    case Stage::decontam: return "decontam";
    case Stage::package: return "package";
  }
  return "unknown";
}

Stage parse_stage(std::string_view s) {
  for (auto st : kAllStages)
    if (to_string(st) == s) return st;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::stopped: return "stopped";
    case RunStatus::config_error: return "config_error";
    case RunStatus::stage_failure: return "stage_failure";
    case RunStatus::budget_exhausted: return "budget_exhausted";
  }
  return "unknown";
}

int exit_code(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::ok:
    case RunStatus::stopped: return 0;
    case RunStatus::config_error: return 2;
    case RunStatus::stage_failure: return 3;
    case RunStatus::budget_exhausted: return 4;
  }
  return 3;
}

namespace {

constexpr std::array<const char*, 4> kLayout{"datasets", "manifests", "reports", "checkpoints"};
constexpr std::array<const char*, 2> kOutputs{"foundational", "conversational"};

struct Context {
  Context(const RunConfig& c, ModelGateway& g) : cfg{c}, gw{g} {}

  const RunConfig& cfg;
  ModelGateway& gw;
  fs::path root;
  std::uint64_t config_hash = 0;
  std::string run_id;
  std::size_t workers = 1;
  std::map<std::string, std::vector<InstructionRecord>> data;
  std::vector<std::string> produced;  // keys written by the current stage
  std::vector<std::string> warnings;  // of the current stage

  [[nodiscard]] SelectionManifest new_manifest() const { return {run_id, config_hash}; }
  [[nodiscard]] fs::path path(const std::string& rel) const { return root / rel; }

  void produce(const std::string& key, std::vector<InstructionRecord> records) {
    data[key] = std::move(records);
    if (std::find(produced.begin(), produced.end(), key) == produced.end()) produced.push_back(key);
  }
  void warn(std::vector<std::string> w) { warnings.insert(warnings.end(), w.begin(), w.end()); }
  const std::vector<InstructionRecord>& get(const std::string& key) const {
    static const std::vector<InstructionRecord> empty;
    const auto it = data.find(key);
    return it == data.end() ? empty : it->second;
  }
};

std::string selected_key(Domain d) { return "selected." + std::string(to_string(d)); }

void write_json_file(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

std::string relative_name(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.generic_string();
  const auto rel = p.lexically_relative(base);
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

void stage_ingest(Context& ctx) {
  const auto pool_path = ctx.cfg.resolve(ctx.cfg.paths.pool);
  std::vector<fs::path> files;
  if (fs::is_directory(pool_path)) {
    for (const auto& e : fs::directory_iterator(pool_path))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(pool_path)) {
    files.push_back(pool_path);
  } else {
    throw ConfigError("pool not found: " + pool_path.string());
  }

  RejectLog raw_rejects;
  std::vector<InstructionRecord> pool;
  for (const auto& f : files) {
    auto part = read_dataset(f, &raw_rejects);
    pool.insert(pool.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  RejectLog rejects;
  for (auto e : raw_rejects.entries()) {
    e.file = relative_name(fs::path(e.file), ctx.cfg.base_dir);
    rejects.add(std::move(e));
  }
  rejects.write(ctx.path("reports/rejects.jsonl"));
  if (rejects.size() > 0) ctx.warnings.push_back(std::to_string(rejects.size()) + " pool lines rejected");

  auto manifest = ctx.new_manifest();
  std::set<std::string> seen;
  std::vector<InstructionRecord> unique;
  std::size_t duplicates = 0;
  for (auto& r : pool) {
    if (!seen.insert(r.id).second) {
      manifest.drop(r.id, "ingest", "duplicate_id");
      ++duplicates;
      continue;
    }
    manifest.keep(r.id, "ingest", "ingested", {{"domain", to_string(r.domain)}, {"source", r.source}});
    unique.push_back(std::move(r));
  }
  if (duplicates > 0) ctx.warnings.push_back(std::to_string(duplicates) + " records with a repeated id dropped");
  manifest.write(ctx.path("manifests/ingest.jsonl"));
  ctx.produce("pool", std::move(unique));
}

void stage_select(Context& ctx) {
  const auto& pool = ctx.get("pool");
  std::map<Domain, std::vector<InstructionRecord>> pools;
  for (const auto& r : pool) pools[r.domain].push_back(r);
  std::map<Domain, std::size_t> sizes;
  for (const auto& [d, recs] : pools) sizes[d] = recs.size();

  const auto targets_dir = ctx.cfg.paths.targets.empty() ? ctx.cfg.base_dir : ctx.cfg.resolve(ctx.cfg.paths.targets);
  auto plans = plan_domains(ctx.cfg.domains, sizes, targets_dir);
  std::map<Domain, std::vector<std::string>> targets;
  for (const auto& p : plans) {
    if (p.strategy != Strategy::dsir) continue;
    if (!fs::exists(*p.target_prompt_path))
      throw ConfigError("target prompts not found: " + p.target_prompt_path->string());
    targets[p.domain] = load_target_prompts(*p.target_prompt_path);
  }

  auto sc = ctx.cfg.selection;
  sc.workers = ctx.workers;
  auto manifest = ctx.new_manifest();

  std::set<Domain> planned;
  for (const auto& q : ctx.cfg.domains) planned.insert(q.domain);
  for (const auto& r : pool)
    if (!planned.contains(r.domain)) manifest.drop(r.id, "select", "domain_not_planned");

  std::map<Domain, std::vector<InstructionRecord>> current;
  for (const auto& p : plans) {
    auto res = select_domain(p, pools[p.domain], targets[p.domain], sc, ctx.cfg.seed, manifest);
    ctx.warn(std::move(res.warnings));
    current[p.domain] = std::move(res.selected);
  }
  if (!ctx.cfg.paths.gap_report.empty()) {
    const auto report = load_gap_report(ctx.cfg.resolve(ctx.cfg.paths.gap_report));
    check_gap_report(report, plans);
    auto sup = supplement_weak_domains(report, pools, plans, current, targets, sc, ctx.cfg.seed, manifest);
    ctx.warn(std::move(sup.warnings));
    for (auto& [d, added] : sup.added)
      current[d].insert(current[d].end(), std::make_move_iterator(added.begin()), std::make_move_iterator(added.end()));
  }

  json summary = json::array();
  for (const auto& p : plans) {
    int phase = 1;
    for (const auto& q : ctx.cfg.domains)
      if (q.domain == p.domain) phase = q.phase;
    summary.push_back({{"domain", to_string(p.domain)},
                       {"strategy", to_string(p.strategy)},
                       {"phase", phase},
                       {"pool", sizes[p.domain]},
                       {"quota", p.quota},
                       {"relaxation_level", p.relaxation_level},
                       {"selected", current[p.domain].size()}});
  }
  write_json_file(ctx.path("reports/selection.json"), summary);
  manifest.write(ctx.path("manifests/select.jsonl"));
  for (const auto& p : plans) ctx.produce(selected_key(p.domain), std::move(current[p.domain]));
}

std::vector<InstructionRecord> phase_records(const Context& ctx, int phase) {
  std::vector<InstructionRecord> out;
  for (const auto& q : ctx.cfg.domains) {
    if (q.phase != phase) continue;
    const auto& recs = ctx.get(selected_key(q.domain));
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

void stage_label(Context& ctx) {
  auto inputs = phase_records(ctx, 2);
  auto manifest = ctx.new_manifest();
  if (inputs.empty()) {
    ctx.warnings.push_back("no phase-2 records to label");
    LabelTaxonomy{}.save(ctx.path("reports/taxonomy.json"));
    manifest.write(ctx.path("manifests/label.jsonl"));
    ctx.produce("labeled", {});
    return;
  }
  auto lc = ctx.cfg.labels;
  if (lc.override_file && lc.override_file->is_relative()) lc.override_file = ctx.cfg.resolve(lc.override_file->string());
  auto res = build_label_system(std::move(inputs), ctx.gw, lc, ctx.cfg.seed, manifest, ctx.workers, "label");
  ctx.warn(std::move(res.warnings));
  res.taxonomy.save(ctx.path("reports/taxonomy.json"));
  manifest.write(ctx.path("manifests/label.jsonl"));
  ctx.produce("labeled", std::move(res.records));
}

void stage_seed(Context& ctx) {
  auto records = ctx.get("labeled");
  auto manifest = ctx.new_manifest();
  SeedSelection sel;
  if (!records.empty()) {
    attach_scores(records, ctx.gw, ctx.workers, true);
    const auto freq = compute_label_frequencies(records, nullptr, ctx.workers);
    sel = select_seed_set(records, freq, ctx.cfg.seed_filter, ctx.cfg.seed, manifest, "seed_filter");
    ctx.warn(sel.warnings);
  }
  write_json_file(ctx.path("reports/seed_selection.json"), {{"candidates", records.size()},
                                                            {"retained_long_tail", sel.retained_long_tail},
                                                            {"missing_score", sel.missing_score},
                                                            {"after_filters", sel.after_filters},
                                                            {"target", sel.target},
                                                            {"seeds", sel.seeds.size()}});
  manifest.write(ctx.path("manifests/seed.jsonl"));
  ctx.produce("seeds", std::move(sel.seeds));
}

void stage_assemble(Context& ctx) {
  std::vector<OriginSet> selections;
  for (const auto& q : ctx.cfg.domains)
    if (q.phase == 1) selections.push_back({"select:" + std::string(to_string(q.domain)), ctx.get(selected_key(q.domain))});
  auto manifest = ctx.new_manifest();
  auto foundational = assemble_foundational(std::move(selections), ctx.get("seeds"), ctx.cfg.seed, manifest);
  manifest.write(ctx.path("manifests/assemble.jsonl"));
  ctx.produce("foundational", std::move(foundational));
}

void stage_evolve(Context& ctx) {
  const auto& seeds = ctx.get("seeds");
  auto res = run_evolution(seeds, ctx.cfg.evolve, ctx.gw, ctx.cfg.seed, ctx.workers, ctx.path("checkpoints/evolve.state"));
  if (res.budget_exhausted)
    throw GatewayError(GatewayErrorCode::budget_exhausted, "evolution stopped after " +
                                                               std::to_string(res.rounds.size()) + " complete rounds");
  const auto log_dir = ctx.path("reports/evolution");
  fs::remove_all(log_dir);
  write_round_logs(res.rounds, log_dir);

  auto manifest = ctx.new_manifest();
  for (const auto& round : res.rounds)
    for (const auto& e : round.entries) {
      json scores{{"input_id", e.input_id}, {"strategy", to_string(e.strategy)}, {"round", round.round_index}};
      if (e.candidate_id.empty()) {
        manifest.drop(e.input_id, "evolve", "rewrite_failed", std::move(scores));
      } else if (e.verdict == RewriteVerdict::accepted) {
        manifest.keep(e.candidate_id, "evolve", "accepted", std::move(scores));
      } else {
        manifest.drop(e.candidate_id, "evolve", std::string(to_string(e.verdict)), std::move(scores));
      }
    }
  if (ctx.cfg.evolve.max_rounds == 0)
    for (const auto& s : res.dataset) manifest.keep(s.id, "evolve", "no_evolution");
  manifest.write(ctx.path("manifests/evolve.jsonl"));
  ctx.produce("conversational", std::move(res.dataset));
}

void stage_dedup(Context& ctx) {
  auto manifest = ctx.new_manifest();
  json summary = json::object();
  for (const char* name : kOutputs) {
    auto records = ctx.get(name);
    DedupResult res;
    if (records.empty()) {
      res.kept = {};
    } else {
      const auto index = build_similarity_index(records, ctx.cfg.similarity, &ctx.gw, ctx.workers);
      res = dedup_dataset(records, index, &manifest, std::string("dedup:") + name);
    }
    write_dedup_report(res, ctx.cfg.similarity, ctx.path(std::string("reports/dedup_") + name + ".jsonl"));
    summary[name] = {{"input", records.size()}, {"removed", res.removed.size()}, {"kept", res.kept.size()}};
    ctx.produce(name, std::move(res.kept));
  }
  write_json_file(ctx.path("reports/dedup_summary.json"), summary);
  manifest.write(ctx.path("manifests/dedup.jsonl"));
}

void stage_decontam(Context& ctx) {
  std::map<std::string, std::vector<std::string>> benchmarks;
  if (ctx.cfg.paths.benchmarks.empty())
    ctx.warnings.push_back("no benchmark directory configured; decontamination skipped");
  else
    benchmarks = load_benchmarks(ctx.cfg.resolve(ctx.cfg.paths.benchmarks));

  auto manifest = ctx.new_manifest();
  json summary = json::object();
  for (const char* name : kOutputs) {
    const auto& records = ctx.get(name);
    const std::string stage = std::string("decontam:") + name;
    DecontamResult res;
    if (benchmarks.empty() || records.empty()) {
      res.kept = records;
      for (const auto& r : records) manifest.keep(r.id, stage, "no_benchmarks");
    } else {
      const auto index = build_similarity_index(records, ctx.cfg.similarity, &ctx.gw, ctx.workers);
      res = decontaminate_against_benchmarks(records, index, benchmarks, &ctx.gw, &manifest, stage, ctx.workers);
      ctx.warn(std::move(res.warnings));
    }
    write_contamination_report(res.report, ctx.path(std::string("reports/contamination_") + name + ".jsonl"));
    summary[name] = {{"input", records.size()}, {"removed", res.removed.size()}, {"kept", res.kept.size()}};
    write_dataset(res.kept, ctx.path(std::string("datasets/") + name + ".jsonl"));
    ctx.produce(name, std::move(res.kept));
  }
  write_json_file(ctx.path("reports/decontam_summary.json"), summary);
  manifest.write(ctx.path("manifests/decontam.jsonl"));
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return json::parse(in);
}

fs::path marker_path(const fs::path& root, Stage s) {
  return root / "checkpoints" / (std::string(to_string(s)) + ".done.json");
}

void stage_package(Context& ctx) {
  const auto descriptors =
      emit_training_manifests(ctx.path("datasets/foundational.jsonl"), ctx.path("datasets/conversational.jsonl"),
                              ctx.config_hash, ctx.cfg.one_stage, ctx.path("manifests"));
  for (const char* name : kOutputs) report_stats(ctx.get(name), ctx.path(std::string("reports/stats/") + name));

  if (!ctx.cfg.ladder_sizes.empty()) {
    std::vector<InstructionRecord> pool;
    for (auto r : ctx.get("conversational")) {
      if (!r.labels || r.labels->second_level.empty()) continue;
      if (!r.scores || !r.scores->reward) r.mutable_scores().reward = ctx.gw.score_reward(r);
      pool.push_back(std::move(r));
    }
    std::vector<std::size_t> sizes;
    for (auto s : ctx.cfg.ladder_sizes) {
      if (s <= pool.size())
        sizes.push_back(s);
      else
        ctx.warnings.push_back("ladder size " + std::to_string(s) + " exceeds the " + std::to_string(pool.size()) +
                               " rewarded, labeled conversational records; skipped");
    }
    if (!sizes.empty()) emit_size_ladder(pool, sizes, ctx.cfg.seed, ctx.path("reports/ladder"));
  }

  // Warnings of every earlier stage, in stage order.
  json warnings = json::object();
  json stages = json::array();
  for (auto s : kAllStages) {
    if (s == Stage::package) break;
    const auto marker = read_json(marker_path(ctx.root, s));
    warnings[std::string(to_string(s))] = marker.at("warnings");
    stages.push_back(to_string(s));
  }
  warnings["package"] = ctx.warnings;
  stages.push_back("package");
  write_json_file(ctx.path("reports/warnings.json"), warnings);

  json desc = json::array();
  for (const auto& d : descriptors) desc.push_back(d.to_json());
  write_json_file(ctx.path("manifests/run.json"), {{"run_id", ctx.run_id},
                                                    {"config_hash", hex64(ctx.config_hash)},
                                                    {"stages", stages},
                                                    {"counts",
                                                     {{"pool", ctx.get("pool").size()},
                                                      {"seeds", ctx.get("seeds").size()},
                                                      {"foundational", ctx.get("foundational").size()},
                                                      {"conversational", ctx.get("conversational").size()}}},
                                                    {"training", desc}});
  write_json_file(ctx.path("reports/config.json"), ctx.cfg.canonical());
}

void run_stage(Stage s, Context& ctx) {
  switch (s) {
    case Stage::ingest: return stage_ingest(ctx);
    case Stage::select: return stage_select(ctx);
    case Stage::label: return stage_label(ctx);
    case Stage::seed: return stage_seed(ctx);
    case Stage::assemble: return stage_assemble(ctx);
    case Stage::evolve: return stage_evolve(ctx);
    case Stage::dedup: return stage_dedup(ctx);
    case Stage::decontam: return stage_decontam(ctx);
    case Stage::package: return stage_package(ctx);
  }
}

void save_checkpoint(Stage s, const Context& ctx) {
  const auto dir = ctx.root / "checkpoints" / std::string(to_string(s));
  fs::create_directories(dir);
  json outputs = json::object();
  for (const auto& key : ctx.produced) {
    const auto& records = ctx.data.at(key);
    write_dataset(records, dir / (key + ".jsonl"));
    outputs[key] = records.size();
  }
  write_json_file(marker_path(ctx.root, s), {{"stage", to_string(s)},
                                             {"config_hash", hex64(ctx.config_hash)},
                                             {"calls_made", ctx.gw.calls_made()},
                                             {"outputs", outputs},
                                             {"warnings", ctx.warnings}});
}

/// Loads a finished stage; false when it has no usable checkpoint.
bool load_checkpoint(Stage s, Context& ctx) {
  const auto marker = marker_path(ctx.root, s);
  if (!fs::exists(marker)) return false;
  const auto j = read_json(marker);
  if (j.at("config_hash").get<std::string>() != hex64(ctx.config_hash))
    throw ConfigError("checkpoint for stage '" + std::string(to_string(s)) + "' was made with a different config");
  const auto dir = ctx.root / "checkpoints" / std::string(to_string(s));
  for (const auto& [key, count] : j.at("outputs").items()) {
    auto records = read_dataset(dir / (key + ".jsonl"));
    if (records.size() != count.get<std::size_t>())
      throw IoError("checkpoint " + (dir / (key + ".jsonl")).string() + " is truncated");
    ctx.data[key] = std::move(records);
  }
  ctx.gw.set_calls_made(std::max(ctx.gw.calls_made(), j.at("calls_made").get<std::size_t>()));
  return true;
}

void write_failure(const fs::path& root, Stage s, RunStatus status, const std::string& error,
                   const std::vector<Stage>& finished) {
  json done = json::array();
  for (auto f : finished) done.push_back(to_string(f));
  write_json_file(root / "reports" / "failure.json", {{"stage", to_string(s)},
                                                      {"status", to_string(status)},
                                                      {"exit_code", exit_code(status)},
                                                      {"error", error},
                                                      {"completed_stages", done},
                                                      {"resume", "rerun with --resume " + root.string()}});
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const RunOptions& options) {
  auto gw_cfg = config.gateway;
  gw_cfg.apply_env();
  if (gw_cfg.call_log && gw_cfg.call_log->is_relative()) gw_cfg.call_log = config.resolve(gw_cfg.call_log->string());
  if (gw_cfg.score_sidecar && gw_cfg.score_sidecar->is_relative())
    gw_cfg.score_sidecar = config.resolve(gw_cfg.score_sidecar->string());
  gw_cfg.validate();
  ModelGateway gateway(std::move(gw_cfg));
  return run_pipeline(config, gateway, options);
}

PipelineResult run_pipeline(const RunConfig& config, ModelGateway& gateway, const RunOptions& options) {
  config.validate();
  PipelineResult result;
  Context ctx(config, gateway);
  ctx.root = config.resolve(config.paths.output);
  ctx.config_hash = config.hash();
  ctx.run_id = "run-" + hex64(ctx.config_hash);
  ctx.workers = config.workers;
  result.output_dir = ctx.root;

  if (!options.resume)
    for (const char* sub : kLayout) fs::remove_all(ctx.root / sub);
  for (const char* sub : kLayout) fs::create_directories(ctx.root / sub);
  fs::remove(ctx.root / "reports" / "failure.json");
  write_json_file(ctx.root / "checkpoints" / "run_config.json",
                  {{"config", config.to_json()}, {"base_dir", config.base_dir.string()}});

  std::vector<Stage> finished;
  for (auto s : kAllStages) {
    ctx.produced.clear();
    ctx.warnings.clear();
    try {
      if (options.resume && load_checkpoint(s, ctx)) {
        result.reused.push_back(s);
      } else {
        run_stage(s, ctx);
        save_checkpoint(s, ctx);
        result.executed.push_back(s);
      }
    } catch (const ConfigError& e) {
      result.status = RunStatus::config_error;
      result.error = e.what();
    } catch (const GatewayError& e) {
      result.status = e.code() == GatewayErrorCode::budget_exhausted ? RunStatus::budget_exhausted
                                                                     : RunStatus::stage_failure;
      result.error = e.what();
    } catch (const std::exception& e) {
      result.status = RunStatus::stage_failure;
      result.error = e.what();
    }
    if (result.status != RunStatus::ok) {
      result.failed_stage = s;
      write_failure(ctx.root, s, result.status, result.error, finished);
      return result;
    }
    finished.push_back(s);
    if (options.stop_after && *options.stop_after == s && s != Stage::package) {
      result.status = RunStatus::stopped;
      return result;
    }
  }
  for (const char* name : {"pool", "seeds", "foundational", "conversational"}) result.counts[name] = ctx.get(name).size();
  for (auto s : kAllStages) {
    const auto marker = read_json(marker_path(ctx.root, s));
    for (const auto& w : marker.at("warnings")) result.warnings.push_back(std::string(to_string(s)) + ": " + w.get<std::string>());
  }
  return result;
}

RunConfig load_saved_run_config(const fs::path& run_dir) {
  const auto path = run_dir / "checkpoints" / "run_config.json";
  if (!fs::exists(path)) throw ConfigError("no saved run config under " + run_dir.string());
  const auto j = read_json(path);
  auto c = RunConfig::from_json(j.at("config"), j.at("base_dir").get<std::string>());
  c.paths.output = fs::absolute(run_dir).string();
  return c;
}

std::uint64_t output_tree_hash(const fs::path& run_dir) {
  std::vector<fs::path> files;
  for (const char* sub : {"datasets", "manifests", "reports"}) {
    const auto dir = run_dir / sub;
    if (!fs::exists(dir)) continue;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = stable_hash("tree");
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    h = keyed_hash(h, stable_hash(f.lexically_relative(run_dir).generic_string()), stable_hash(bytes));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Packaging and statistics

json TrainingDescriptor::to_json() const {
  json files = json::array();
  for (const auto& d : datasets) files.push_back(d.generic_string());
  return {{"stage", stage}, {"name", name}, {"datasets", files}, {"count", count}, {"config_hash", hex64(config_hash)}};
}

namespace {

std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

std::vector<TrainingDescriptor> emit_training_manifests(const fs::path& foundational, const fs::path& conversational,
                                                        std::uint64_t config_hash, bool one_stage,
                                                        const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto rel = [&](const fs::path& p) { return p.lexically_relative(out_dir); };
  std::vector<TrainingDescriptor> out;
  if (one_stage) {
    out.push_back({1, "merged", {rel(foundational), rel(conversational)},
                   count_lines(foundational) + count_lines(conversational), config_hash});
  } else {
    out.push_back({1, "foundational", {rel(foundational)}, count_lines(foundational), config_hash});
    out.push_back({2, "conversational", {rel(conversational)}, count_lines(conversational), config_hash});
  }
  for (const auto& stale : {"stage1_merged.json", "stage1_foundational.json", "stage2_conversational.json"})
    fs::remove(out_dir / stale);
  for (const auto& d : out)
    write_json_file(out_dir / ("stage" + std::to_string(d.stage) + "_" + d.name + ".json"), d.to_json());
  return out;
}

json StatsBundle::to_json() const {
  return {{"records", records},
          {"labeled", labeled},
          {"turns", turns.to_json()},
          {"label_frequency", label_frequency},
          {"first_level", first_level}};
}

StatsBundle compute_stats(std::span<const InstructionRecord> records) {
  StatsBundle b;
  b.records = records.size();
  b.turns = turn_stats(records);
  b.label_frequency = compute_label_frequencies(records);
  b.first_level = first_level_counts(records);
  for (const auto& r : records)
    if (r.labels && !r.labels->second_level.empty()) ++b.labeled;
  return b;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string counts_csv(const std::string& header, const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> rows(counts.begin(), counts.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::ostringstream out;
  out << header << ",count\n";
  for (const auto& [k, v] : rows) out << csv_field(k) << ',' << v << '\n';
  return out.str();
}

}  // namespace

StatsBundle report_stats(std::span<const InstructionRecord> records, const fs::path& out_dir) {
  const auto b = compute_stats(records);
  fs::create_directories(out_dir);
  write_json_file(out_dir / "stats.json", b.to_json());
  std::ostringstream turns;
  turns.precision(17);
  turns << "bin,count,fraction\n";
  for (std::size_t k = 0; k < TurnHistogram::kBins; ++k)
    turns << csv_field(std::string(TurnHistogram::kBinNames[k])) << ',' << b.turns.counts[k] << ',' << b.turns.fractions[k] << '\n';
  write_file_atomic(out_dir / "turns.csv", turns.str());
  write_file_atomic(out_dir / "labels.csv", counts_csv("label", b.label_frequency));
  write_file_atomic(out_dir / "first_level.csv", counts_csv("first_level", b.first_level));
  return b;
}

}  // namespace curate
