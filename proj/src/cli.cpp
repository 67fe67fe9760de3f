#include "curate/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>

#include "curate/corpus.hpp"
#include "curate/dedup_decontam.hpp"
#include "curate/domain_select.hpp"
#include "curate/errors.hpp"
#include "curate/evolve_diagnose.hpp"
#include "curate/hashing.hpp"
#include "curate/label_system.hpp"
#include "curate/manifest.hpp"
#include "curate/model_gateway.hpp"
#include "curate/pipeline.hpp"
#include "curate/seed_filter.hpp"
#include "curate/subset_sampler.hpp"

namespace curate {

namespace {

namespace fs = std::filesystem;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string resume;
  bool mock = false;
};

struct IoFlags {
  std::string input;
  std::string output;
};

RunConfig load_config(const GlobalFlags& g) {
  RunConfig c;
  if (!g.config.empty()) {
    c = RunConfig::load(g.config);
  } else if (!g.resume.empty() && fs::exists(fs::path(g.resume) / "checkpoints" / "run_config.json")) {
    c = load_saved_run_config(g.resume);
  } else {
    c.base_dir = fs::current_path();
  }
  if (g.seed) c.seed = *g.seed;
  if (g.workers) {
    if (*g.workers == 0) throw ConfigError("--workers must be positive");
    c.workers = *g.workers;
  }
  if (g.mock) c.gateway.mode = GatewayMode::mock;
  return c;
}

std::unique_ptr<ModelGateway> make_gateway(const RunConfig& c) {
  auto gc = c.gateway;
  gc.apply_env();
  if (gc.call_log && gc.call_log->is_relative()) gc.call_log = c.resolve(gc.call_log->string());
  if (gc.score_sidecar && gc.score_sidecar->is_relative()) gc.score_sidecar = c.resolve(gc.score_sidecar->string());
  gc.validate();
  return std::make_unique<ModelGateway>(std::move(gc));
}

fs::path sibling(const std::string& output, const std::string& suffix) {
  fs::path p(output);
  return p.parent_path() / (p.stem().string() + suffix);
}

void write_outputs(const std::vector<InstructionRecord>& records, const SelectionManifest& manifest,
                   const std::string& output) {
  write_dataset(records, output);
  manifest.write(sibling(output, ".manifest.jsonl"));
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

int cmd_ingest(const GlobalFlags&, const IoFlags& io, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> files;
  if (fs::is_directory(io.input)) {
    for (const auto& e : fs::directory_iterator(io.input))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(io.input);
  }
  RejectLog rejects;
  std::vector<InstructionRecord> records;
  for (const auto& f : files) {
    auto part = read_dataset(f, &rejects);
    records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  write_dataset(records, io.output);
  rejects.write(sibling(io.output, ".rejects.jsonl"));
  const auto h = turn_stats(records);
  out << "ingested " << records.size() << " records, " << rejects.size() << " rejected\n";
  out << "turns: " << h.to_json().dump() << '\n';
  if (rejects.size() > 0) err << "warning: see " << sibling(io.output, ".rejects.jsonl").string() << '\n';
  return 0;
}

int cmd_select(const GlobalFlags& g, const IoFlags& io, const std::string& seeds_path, std::ostream& out,
               std::ostream& err) {
  const auto cfg = load_config(g);
  const auto pool = read_dataset(io.input);
  std::map<Domain, std::vector<InstructionRecord>> pools;
  for (const auto& r : pool) pools[r.domain].push_back(r);
  std::map<Domain, std::size_t> sizes;
  for (const auto& [d, recs] : pools) sizes[d] = recs.size();
  const auto targets_dir = cfg.paths.targets.empty() ? cfg.base_dir : cfg.resolve(cfg.paths.targets);
  auto sc = cfg.selection;
  sc.workers = cfg.workers;
  SelectionManifest manifest("select-" + hex64(cfg.hash()), cfg.hash());
  fs::create_directories(io.output);
  std::vector<OriginSet> phase1;
  for (const auto& plan : plan_domains(cfg.domains, sizes, targets_dir)) {
    std::vector<std::string> targets;
    if (plan.strategy == Strategy::dsir) {
      if (!fs::exists(*plan.target_prompt_path))
        throw ConfigError("target prompts not found: " + plan.target_prompt_path->string());
      targets = load_target_prompts(*plan.target_prompt_path);
    }
    auto res = select_domain(plan, pools[plan.domain], targets, sc, cfg.seed, manifest);
    print_warnings(res.warnings, err);
    const std::string name(to_string(plan.domain));
    write_dataset(res.selected, fs::path(io.output) / (name + ".jsonl"));
    out << name << ": " << res.selected.size() << " of " << sizes[plan.domain] << " selected\n";
    for (const auto& q : cfg.domains)
      if (q.domain == plan.domain && q.phase == 1) phase1.push_back({"select:" + name, std::move(res.selected)});
  }
  std::vector<InstructionRecord> seeds;
  if (!seeds_path.empty()) seeds = read_dataset(seeds_path);
  const auto foundational = assemble_foundational(std::move(phase1), std::move(seeds), cfg.seed, manifest);
  write_dataset(foundational, fs::path(io.output) / "foundational.jsonl");
  manifest.write(fs::path(io.output) / "select.manifest.jsonl");
  out << "foundational: " << foundational.size() << " records\n";
  return 0;
}

int cmd_label(const GlobalFlags& g, const IoFlags& io, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(g);
  auto gw = make_gateway(cfg);
  SelectionManifest manifest("label-" + hex64(cfg.hash()), cfg.hash());
  auto lc = cfg.labels;
  if (lc.override_file && lc.override_file->is_relative()) lc.override_file = cfg.resolve(lc.override_file->string());
  auto res = build_label_system(read_dataset(io.input), *gw, lc, cfg.seed, manifest, cfg.workers);
  print_warnings(res.warnings, err);
  write_outputs(res.records, manifest, io.output);
  res.taxonomy.save(sibling(io.output, ".taxonomy.json"));
  out << "labeled " << res.records.size() << " records (" << res.untaggable << " untaggable), "
      << res.taxonomy.second_level.size() << " second-level and " << res.taxonomy.first_level.size()
      << " first-level labels\n";
  return 0;
}

int cmd_seed(const GlobalFlags& g, const IoFlags& io, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(g);
  auto gw = make_gateway(cfg);
  auto records = read_dataset(io.input);
  attach_scores(records, *gw, cfg.workers, true);
  const auto freq = compute_label_frequencies(records, nullptr, cfg.workers);
  SelectionManifest manifest("seed-" + hex64(cfg.hash()), cfg.hash());
  const auto sel = select_seed_set(records, freq, cfg.seed_filter, cfg.seed, manifest);
  print_warnings(sel.warnings, err);
  write_outputs(sel.seeds, manifest, io.output);
  out << "selected " << sel.seeds.size() << " seeds from " << records.size() << " records ("
      << sel.retained_long_tail << " long-tail)\n";
  return 0;
}

int cmd_evolve(const GlobalFlags& g, const IoFlags& io, const std::string& logs, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(g);
  auto gw = make_gateway(cfg);
  const auto seeds = read_dataset(io.input);
  const auto res = run_evolution(seeds, cfg.evolve, *gw, cfg.seed, cfg.workers, g.resume);
  if (!logs.empty()) write_round_logs(res.rounds, logs);
  if (res.budget_exhausted) {
    err << "error: call budget exhausted after " << res.rounds.size() << " rounds";
    if (!g.resume.empty()) err << "; rerun with --resume " << g.resume << " to continue";
    err << '\n';
    return exit_code(RunStatus::budget_exhausted);
  }
  write_dataset(res.dataset, io.output);
  out << "evolved " << seeds.size() << " seeds into " << res.dataset.size() << " records over " << res.rounds.size()
      << " rounds\n";
  return 0;
}

int cmd_diagnose(const GlobalFlags& g, const IoFlags& io, std::size_t round, std::ostream& out, std::ostream&) {
  const auto cfg = load_config(g);
  auto gw = make_gateway(cfg);
  const auto records = read_dataset(io.input);
  const auto res = diagnose_weak_abilities(records, cfg.evolve.candidate_models, cfg.evolve.samples_per_ability,
                                           cfg.evolve.score_threshold, *gw, cfg.seed, round, cfg.evolve, cfg.workers);
  std::vector<json> rows;
  for (const auto& item : res.items) rows.push_back(item.to_json());
  write_jsonl(rows, io.output);
  out << "diagnosed " << res.items.size() << " records, " << res.weak_ids.size() << " weak\n";
  return 0;
}

int cmd_dedup(const GlobalFlags& g, const IoFlags& io, std::ostream& out, std::ostream&) {
  const auto cfg = load_config(g);
  auto gw = make_gateway(cfg);
  const auto records = read_dataset(io.input);
  SelectionManifest manifest("dedup-" + hex64(cfg.hash()), cfg.hash());
  DedupResult res;
  if (!records.empty()) {
    const auto index = build_similarity_index(records, cfg.similarity, gw.get(), cfg.workers);
    res = dedup_dataset(records, index, &manifest);
  }
  write_outputs(res.kept, manifest, io.output);
  write_dedup_report(res, cfg.similarity, sibling(io.output, ".dedup_report.jsonl"));
  out << "removed " << res.removed.size() << " near-duplicates (" << cfg.similarity.criterion() << "), kept "
      << res.kept.size() << '\n';
  return 0;
}

int cmd_decontam(const GlobalFlags& g, const IoFlags& io, std::string benchmarks, std::ostream& out,
                 std::ostream& err) {
  const auto cfg = load_config(g);
  if (benchmarks.empty()) benchmarks = cfg.paths.benchmarks.empty() ? "" : cfg.resolve(cfg.paths.benchmarks).string();
  if (benchmarks.empty()) throw ConfigError("decontam needs --benchmarks or paths.benchmarks");
  auto gw = make_gateway(cfg);
  const auto records = read_dataset(io.input);
  const auto bench = load_benchmarks(benchmarks);
  SelectionManifest manifest("decontam-" + hex64(cfg.hash()), cfg.hash());
  DecontamResult res;
  if (!records.empty()) {
    const auto index = build_similarity_index(records, cfg.similarity, gw.get(), cfg.workers);
    res = decontaminate_against_benchmarks(records, index, bench, gw.get(), &manifest, "decontam", cfg.workers);
  }
  print_warnings(res.warnings, err);
  write_outputs(res.kept, manifest, io.output);
  write_contamination_report(res.report, sibling(io.output, ".contamination.jsonl"));
  out << "removed " << res.removed.size() << " contaminated records against " << bench.size() << " benchmarks\n";
  return 0;
}

int cmd_ladder(const GlobalFlags& g, const IoFlags& io, const std::vector<std::size_t>& sizes, std::ostream& out,
               std::ostream&) {
  const auto cfg = load_config(g);
  auto records = read_dataset(io.input);
  std::unique_ptr<ModelGateway> gw;
  for (auto& r : records) {
    if (r.scores && r.scores->reward) continue;
    if (!gw) gw = make_gateway(cfg);
    r.mutable_scores().reward = gw->score_reward(r);
  }
  auto sorted = sizes;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const auto ladder = emit_size_ladder(records, sorted, cfg.seed, io.output);
  for (const auto& rung : ladder.rungs)
    out << rung.size << " records over " << rung.per_label.size() << " labels -> " << rung.file.string() << '\n';
  return 0;
}

int cmd_stats(const IoFlags& io, std::ostream& out) {
  const auto records = read_dataset(io.input);
  const auto b = report_stats(records, io.output);
  out << b.to_json().dump(2) << '\n';
  return 0;
}

int cmd_run(const GlobalFlags& g, const std::string& output, const std::string& pool, std::optional<std::string> stop,
            bool one_stage, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(g);
  if (!pool.empty()) cfg.paths.pool = fs::absolute(pool).string();
  if (!g.resume.empty())
    cfg.paths.output = fs::absolute(g.resume).string();
  else if (!output.empty())
    cfg.paths.output = fs::absolute(output).string();
  if (one_stage) cfg.one_stage = true;
  RunOptions opts;
  opts.resume = !g.resume.empty();
  if (stop) opts.stop_after = parse_stage(*stop);
  const auto r = run_pipeline(cfg, opts);
  for (auto s : r.reused) out << "reused  " << to_string(s) << '\n';
  for (auto s : r.executed) out << "ran     " << to_string(s) << '\n';
  if (r.status != RunStatus::ok && r.status != RunStatus::stopped) {
    err << "error: stage " << to_string(*r.failed_stage) << " failed (" << to_string(r.status) << "): " << r.error
        << "\nfailure report: " << (r.output_dir / "reports" / "failure.json").string() << '\n';
    return exit_code(r.status);
  }
  print_warnings(r.warnings, err);
  if (r.status == RunStatus::stopped) {
    out << "stopped; resume with --resume " << r.output_dir.string() << '\n';
    return 0;
  }
  for (const auto& [k, v] : r.counts) out << k << ": " << v << '\n';
  out << "output: " << r.output_dir.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instruction dataset curation pipeline", "curate"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  app.add_option("--config", g.config, "Run config (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Global seed");
  auto* workers_opt = app.add_option("--workers", workers, "Worker bound");
  app.add_option("--resume", g.resume, "Resume from this run or checkpoint directory");
  app.add_flag("--mock", g.mock, "Use the deterministic mock model backend");

  IoFlags io;
  const auto io_cmd = [&](const std::string& name, const std::string& desc, bool output_is_dir = false) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("-i,--input", io.input, "Input dataset")->required();
    sub->add_option("-o,--output", io.output, output_is_dir ? "Output directory" : "Output dataset")->required();
    return sub;
  };

  auto* ingest = io_cmd("ingest", "Validate and normalize raw JSONL, writing a reject log");
  std::string seeds_path;
  auto* select = io_cmd("select", "Per-domain selection and foundational assembly", true);
  select->add_option("--seeds", seeds_path, "Seed set to replay into the foundational dataset");
  auto* label = io_cmd("label", "Tag, cluster and build the two-layer label taxonomy");
  auto* seed_cmd = io_cmd("seed", "Score records and select the seed set");
  std::string logs;
  auto* evolve = io_cmd("evolve", "Evolve seeds over diagnosis rounds");
  evolve->add_option("--logs", logs, "Directory for per-round logs");
  std::size_t round = 0;
  auto* diagnose = io_cmd("diagnose", "Score candidate models on sampled records and list weak ones");
  diagnose->add_option("--round", round, "Round index used for sampling");
  auto* dedup = io_cmd("dedup", "Remove near-duplicate prompts");
  std::string benchmarks;
  auto* decontam = io_cmd("decontam", "Remove records close to benchmark prompts");
  decontam->add_option("--benchmarks", benchmarks, "Directory of <benchmark>.txt files");
  std::vector<std::size_t> sizes;
  auto* ladder = io_cmd("sample-ladder", "Reward-prioritized nested subsets", true);
  ladder->add_option("--sizes", sizes, "Subset sizes")->required()->delimiter(',');
  auto* stats = io_cmd("stats", "Turn histogram and label tables", true);

  std::string run_output, run_pool;
  std::optional<std::string> stop_after;
  bool one_stage = false;
  auto* run = app.add_subcommand("run", "Full two-phase pipeline");
  run->add_option("-o,--output", run_output, "Run directory");
  run->add_option("--pool", run_pool, "Raw pool file or directory");
  run->add_option("--stop-after", stop_after, "Stop after this stage");
  run->add_flag("--one-stage", one_stage, "Emit a single merged training descriptor");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(RunStatus::config_error);
  }
  if (seed_opt->count() > 0) g.seed = seed;
  if (workers_opt->count() > 0) g.workers = workers;

  try {
    if (ingest->parsed()) return cmd_ingest(g, io, out, err);
    if (select->parsed()) return cmd_select(g, io, seeds_path, out, err);
    if (label->parsed()) return cmd_label(g, io, out, err);
    if (seed_cmd->parsed()) return cmd_seed(g, io, out, err);
    if (evolve->parsed()) return cmd_evolve(g, io, logs, out, err);
    if (diagnose->parsed()) return cmd_diagnose(g, io, round, out, err);
    if (dedup->parsed()) return cmd_dedup(g, io, out, err);
    if (decontam->parsed()) return cmd_decontam(g, io, benchmarks, out, err);
    if (ladder->parsed()) return cmd_ladder(g, io, sizes, out, err);
    if (stats->parsed()) return cmd_stats(io, out);
    if (run->parsed()) return cmd_run(g, run_output, run_pool, stop_after, one_stage, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code(RunStatus::config_error);
  } catch (const GatewayError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code() == GatewayErrorCode::budget_exhausted ? RunStatus::budget_exhausted
                                                                    : RunStatus::stage_failure);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(RunStatus::stage_failure);
  }
  return exit_code(RunStatus::config_error);
}

}  // namespace curate
