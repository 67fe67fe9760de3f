#include "curate/evolve_diagnose.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"
#include "curate/parallel.hpp"
#include "curate/prompts.hpp"

namespace curate {

namespace {

constexpr std::array<std::string_view, 4> kStrategyNames{"add_constraints", "deepening", "concretizing",
                                                         "increase_reasoning"};
constexpr std::array<std::string_view, 4> kVerdictNames{"accepted", "semantically_unchanged", "harmful", "malformed"};

bool is_budget_error(const GatewayError& e) { return e.code() == GatewayErrorCode::budget_exhausted; }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read template file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(EvolveStrategy s) noexcept { return kStrategyNames[static_cast<std::size_t>(s)]; }

EvolveStrategy parse_evolve_strategy(std::string_view s) {
  for (std::size_t i = 0; i < kStrategyNames.size(); ++i)
    if (kStrategyNames[i] == s) return static_cast<EvolveStrategy>(i);
  throw ConfigError("unknown evolution strategy '" + std::string(s) + "'");
}

std::string_view to_string(RewriteVerdict v) noexcept { return kVerdictNames[static_cast<std::size_t>(v)]; }

RewriteVerdict parse_rewrite_verdict(std::string_view s) {
  for (std::size_t i = 0; i < kVerdictNames.size(); ++i)
    if (kVerdictNames[i] == s) return static_cast<RewriteVerdict>(i);
  throw SchemaError("unknown rewrite verdict '" + std::string(s) + "'");
}

std::string default_strategy_template(EvolveStrategy s) {
  std::string_view method;
  switch (s) {
    case EvolveStrategy::add_constraints:
      method = "Method: add one further constraint or requirement to the given prompt.";
      break;
    case EvolveStrategy::deepening:
      method = "Method: where the given prompt asks about a specific issue, ask about it in more depth and breadth.";
      break;
    case EvolveStrategy::concretizing:
      method = "Method: replace general concepts in the given prompt with more specific ones.";
      break;
    case EvolveStrategy::increase_reasoning:
      method = "Method: if the given prompt can be answered with a few simple steps, rewrite it so that it "
               "explicitly asks for multi-step reasoning.";
      break;
  }
  return prompts::fill(prompts::default_rewrite_template(), {{"method", std::string(method)}});
}

// ---- config ----

std::string EvolveConfig::template_for(EvolveStrategy s) const {
  if (const auto it = templates.find(s); it != templates.end()) return it->second;
  return default_strategy_template(s);
}

void EvolveConfig::validate() const {
  for (auto s : kAllStrategies)
    if (template_for(s).find("{instruction}") == std::string::npos)
      throw ConfigError("evolve: template for " + std::string(to_string(s)) + " lacks an {instruction} slot");
  if (!judge_template.empty() &&
      (judge_template.find("{original}") == std::string::npos || judge_template.find("{rewritten}") == std::string::npos))
    throw ConfigError("evolve: judge template needs {original} and {rewritten} slots");
  if (!referee_template.empty() && (referee_template.find("{instruction}") == std::string::npos ||
                                    referee_template.find("{response}") == std::string::npos))
    throw ConfigError("evolve: referee template needs {instruction} and {response} slots");
  if (diagnose && candidate_models.empty()) throw ConfigError("evolve: diagnosis needs at least one candidate model");
  if (!std::isfinite(score_threshold)) throw ConfigError("evolve: score_threshold must be finite");
}

json EvolveConfig::to_json() const {
  json t = json::object();
  for (auto s : kAllStrategies) t[std::string(to_string(s))] = template_for(s);
  return {{"max_rounds", max_rounds},
          {"fan_out_all", fan_out_all},
          {"templates", std::move(t)},
          {"judge_template", judge_template.empty() ? std::string(prompts::default_judge_template()) : judge_template},
          {"referee_template",
           referee_template.empty() ? std::string(prompts::default_referee_template()) : referee_template},
          {"candidate_models", candidate_models},
          {"samples_per_ability", samples_per_ability},
          {"score_threshold", score_threshold},
          {"diagnose", diagnose}};
}

EvolveConfig EvolveConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  EvolveConfig c;
  try {
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.fan_out_all = j.value("fan_out_all", c.fan_out_all);
    if (j.contains("templates"))
      for (const auto& [name, text] : j.at("templates").items()) {
        const auto s = parse_evolve_strategy(name);
        if (text.get<std::string>() != default_strategy_template(s)) c.templates[s] = text.get<std::string>();
      }
    if (j.contains("template_files"))
      for (const auto& [name, file] : j.at("template_files").items()) {
        std::filesystem::path p = file.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.templates[parse_evolve_strategy(name)] = read_text_file(p);
      }
    c.judge_template = j.value("judge_template", c.judge_template);
    if (c.judge_template == prompts::default_judge_template()) c.judge_template.clear();
    c.referee_template = j.value("referee_template", c.referee_template);
    if (c.referee_template == prompts::default_referee_template()) c.referee_template.clear();
    c.candidate_models = j.value("candidate_models", c.candidate_models);
    c.samples_per_ability = j.value("samples_per_ability", c.samples_per_ability);
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.diagnose = j.value("diagnose", c.diagnose);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("evolve: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- evolve / verify ----

namespace {

std::size_t last_human_index(const InstructionRecord& record) {
  for (std::size_t i = record.conversations.size(); i-- > 0;)
    if (record.conversations[i].role == Role::human) return i;
  return record.conversations.size();
}

const std::string& last_human_text(const InstructionRecord& record) {
  const auto i = last_human_index(record);
  if (i == record.conversations.size() || prompts::trim(record.conversations[i].content).empty())
    throw InvalidArgument("record '" + record.id + "' has no non-empty human turn to evolve");
  return record.conversations[i].content;
}

// Empty result with an error message on gateway failure.
std::string rewrite_instruction(const std::string& instruction, EvolveStrategy strategy, ModelGateway& gateway,
                                const EvolveConfig& config, std::string& error) {
  const auto prompt = prompts::fill(config.template_for(strategy), {{"instruction", instruction}});
  try {
    auto text = prompts::trim(gateway.complete_chat({{"user", prompt}}, ModelRole::rewriter));
    if (text.empty()) error = "rewriter returned an empty prompt";
    return text;
  } catch (const GatewayError& e) {
    if (is_budget_error(e)) throw;
    error = e.what();
    return {};
  }
}

InstructionRecord make_child(const InstructionRecord& parent, const std::string& rewritten, EvolveStrategy strategy,
                             std::size_t round) {
  InstructionRecord child = parent;
  const auto h = last_human_index(parent);
  child.conversations.resize(h + 1);
  child.conversations[h].content = rewritten;
  child.id = parent.id + ".r" + std::to_string(round) + "." + std::string(to_string(strategy));
  child.scores.reset();
  child.meta["parent_id"] = parent.id;
  child.meta["seed_id"] = parent.meta.contains("seed_id") ? parent.meta.at("seed_id").get<std::string>() : parent.id;
  child.meta["strategy"] = std::string(to_string(strategy));
  child.meta["evolution_round"] = round;
  return child;
}

// Appends the responder's answer; false (with error) on gateway failure.
bool respond(InstructionRecord& child, ModelGateway& gateway, std::string& error) {
  try {
    auto answer = gateway.complete_chat(to_chat_messages(child), ModelRole::responder);
    if (prompts::trim(answer).empty()) {
      error = "responder returned an empty answer";
      return false;
    }
    child.conversations.push_back({Role::assistant, std::move(answer)});
    return true;
  } catch (const GatewayError& e) {
    if (is_budget_error(e)) throw;
    error = e.what();
    return false;
  }
}

}  // namespace

EvolveAttempt evolve_once(const InstructionRecord& record, EvolveStrategy strategy, std::size_t round,
                          ModelGateway& gateway, const EvolveConfig& config) {
  const auto& instruction = last_human_text(record);
  EvolveAttempt attempt;
  attempt.rewritten = rewrite_instruction(instruction, strategy, gateway, config, attempt.error);
  if (!attempt.error.empty()) return attempt;
  auto child = make_child(record, attempt.rewritten, strategy, round);
  if (respond(child, gateway, attempt.error)) attempt.candidate = std::move(child);
  return attempt;
}

RewriteVerdict parse_judge_reply(std::string_view reply) {
  std::string norm;
  norm.reserve(reply.size());
  for (char c : reply)
    norm += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                        : '_';
  const bool safe = norm.find(prompts::kChangedSafe) != std::string::npos ||
                    norm.find("CHANGED_AND_SAFE") != std::string::npos;
  const bool unchanged = norm.find(prompts::kUnchanged) != std::string::npos;
  const bool harmful = norm.find(prompts::kHarmful) != std::string::npos;
  if (safe + unchanged + harmful != 1) return RewriteVerdict::malformed;
  if (safe) return RewriteVerdict::accepted;
  return unchanged ? RewriteVerdict::semantically_unchanged : RewriteVerdict::harmful;
}

RewriteVerdict verify_rewrite(const std::string& original, const std::string& candidate, ModelGateway& gateway,
                              const EvolveConfig& config) {
  if (prompts::trim(original) == prompts::trim(candidate)) return RewriteVerdict::semantically_unchanged;
  const std::string_view tpl =
      config.judge_template.empty() ? prompts::default_judge_template() : std::string_view(config.judge_template);
  const auto prompt = prompts::fill(tpl, {{"original", original}, {"rewritten", candidate}});
  try {
    return parse_judge_reply(gateway.complete_chat({{"user", prompt}}, ModelRole::judge));
  } catch (const GatewayError& e) {
    if (is_budget_error(e)) throw;
    return RewriteVerdict::malformed;
  }
}

// ---- diagnosis ----

std::optional<int> parse_referee_score(std::string_view reply) {
  const auto read_int = [&](std::size_t from) -> std::optional<long> {
    while (from < reply.size() && !std::isdigit(static_cast<unsigned char>(reply[from]))) ++from;
    if (from >= reply.size()) return std::nullopt;
    long v = 0;
    for (; from < reply.size() && std::isdigit(static_cast<unsigned char>(reply[from])) && v < 1000; ++from)
      v = v * 10 + (reply[from] - '0');
    return v;
  };
  std::string lower(reply);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto at = lower.find("score");
  const auto v = read_int(at == std::string::npos ? 0 : at + 5);
  if (!v || *v < 1 || *v > 10) return std::nullopt;
  return static_cast<int>(*v);
}

json DiagnosisItem::to_json() const {
  return {{"id", id}, {"abilities", abilities}, {"scores", scores},
          {"weak", weak}, {"skipped", skipped},   {"error", error}};
}

DiagnosisItem DiagnosisItem::from_json(const json& j) {
  DiagnosisItem d;
  d.id = j.at("id").get<std::string>();
  d.abilities = j.at("abilities").get<std::vector<std::string>>();
  d.scores = j.at("scores").get<std::map<std::string, int>>();
  d.weak = j.at("weak").get<bool>();
  d.skipped = j.at("skipped").get<bool>();
  d.error = j.value("error", std::string{});
  return d;
}

namespace {

using ItemCallback = std::function<void(const DiagnosisItem&)>;

DiagnosisResult diagnose_impl(std::span<const InstructionRecord> records, const std::vector<std::string>& models,
                              std::size_t samples_per_ability, double threshold, ModelGateway& gateway,
                              std::uint64_t seed, std::size_t round, const EvolveConfig& config, std::size_t workers,
                              const std::map<std::string, DiagnosisItem>& done, const ItemCallback& on_item) {
  // ability -> (draw, index); the smallest draws are sampled.
  std::map<std::string, std::vector<std::pair<std::uint64_t, std::size_t>>> by_ability;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].labels) continue;
    const auto& first = records[i].labels->first_level;
    for (const auto& a : std::set<std::string>(first.begin(), first.end()))
      by_ability[a].push_back({keyed_hash(seed, 0x6469616700ULL + round, stable_hash(a), stable_hash(records[i].id)), i});
  }
  std::map<std::size_t, std::vector<std::string>> sampled;
  for (auto& [ability, draws] : by_ability) {
    std::sort(draws.begin(), draws.end());
    for (std::size_t t = 0; t < std::min(samples_per_ability, draws.size()); ++t)
      sampled[draws[t].second].push_back(ability);
  }

  std::vector<std::size_t> order;
  for (const auto& [i, _] : sampled) order.push_back(i);
  std::vector<DiagnosisItem> items(order.size());
  const std::string_view tpl =
      config.referee_template.empty() ? prompts::default_referee_template() : std::string_view(config.referee_template);

  parallel_for(order.size(), workers, [&](std::size_t k) {
    const auto& record = records[order[k]];
    if (const auto it = done.find(record.id); it != done.end()) {
      items[k] = it->second;
      return;
    }
    DiagnosisItem item;
    item.id = record.id;
    item.abilities = sampled.at(order[k]);
    // The models answer the conversation up to its last instruction.
    auto prefix = to_chat_messages(record);
    while (!prefix.empty() && prefix.back().role == "assistant") prefix.pop_back();
    const auto instruction = record.last_human() ? record.last_human()->content : std::string{};
    for (const auto& model : models) {
      try {
        const auto answer = gateway.complete_chat(prefix, ModelRole::responder, model);
        const auto prompt = prompts::fill(tpl, {{"instruction", instruction}, {"response", answer}});
        const auto reply = gateway.complete_chat({{"user", prompt}}, ModelRole::referee);
        const auto score = parse_referee_score(reply);
        if (!score) {
          item.error = "unparseable referee reply for " + model + ": " + reply.substr(0, 120);
          break;
        }
        item.scores[model] = *score;
      } catch (const GatewayError& e) {
        if (is_budget_error(e)) throw;
        item.error = model + ": " + e.what();
        break;
      }
    }
    item.skipped = !item.error.empty();
    if (item.skipped) item.scores.clear();
    item.weak = !item.skipped && std::any_of(item.scores.begin(), item.scores.end(),
                                             [&](const auto& kv) { return kv.second < threshold; });
    if (on_item) on_item(item);
    items[k] = std::move(item);
  });

  DiagnosisResult result;
  for (auto& item : items) {
    if (item.weak) result.weak_ids.push_back(item.id);
    result.items.push_back(std::move(item));
  }
  return result;
}

}  // namespace

DiagnosisResult diagnose_weak_abilities(std::span<const InstructionRecord> records,
                                        const std::vector<std::string>& candidate_models,
                                        std::size_t samples_per_ability, double score_threshold,
                                        ModelGateway& gateway, std::uint64_t seed, std::size_t round,
                                        const EvolveConfig& config, std::size_t workers) {
  return diagnose_impl(records, candidate_models, samples_per_ability, score_threshold, gateway, seed, round, config,
                       workers, {}, {});
}

// ---- rounds ----

json EvolutionEntry::to_json() const {
  return {{"input_id", input_id},   {"strategy", std::string(to_string(strategy))},
          {"candidate_id", candidate_id}, {"rewritten", rewritten},
          {"verdict", std::string(to_string(verdict))}, {"error", error}};
}

EvolutionEntry EvolutionEntry::from_json(const json& j) {
  EvolutionEntry e;
  e.input_id = j.at("input_id").get<std::string>();
  e.strategy = parse_evolve_strategy(j.at("strategy").get<std::string>());
  e.candidate_id = j.at("candidate_id").get<std::string>();
  e.rewritten = j.at("rewritten").get<std::string>();
  e.verdict = parse_rewrite_verdict(j.at("verdict").get<std::string>());
  e.error = j.value("error", std::string{});
  return e;
}

json EvolutionRound::to_json() const {
  json entries_j = json::array(), diag_j = json::array();
  for (const auto& e : entries) entries_j.push_back(e.to_json());
  for (const auto& d : diagnosis) diag_j.push_back(d.to_json());
  return {{"round_index", round_index}, {"inputs", inputs},      {"entries", std::move(entries_j)},
          {"carryover", carryover},     {"stats", stats},        {"diagnosis", std::move(diag_j)}};
}

EvolutionRound EvolutionRound::from_json(const json& j) {
  EvolutionRound r;
  r.round_index = j.at("round_index").get<std::size_t>();
  r.inputs = j.at("inputs").get<std::vector<std::string>>();
  for (const auto& e : j.at("entries")) r.entries.push_back(EvolutionEntry::from_json(e));
  r.carryover = j.at("carryover").get<std::vector<std::string>>();
  r.stats = j.at("stats").get<std::map<std::string, std::size_t>>();
  for (const auto& d : j.at("diagnosis")) r.diagnosis.push_back(DiagnosisItem::from_json(d));
  return r;
}

std::string EvolutionRound::to_jsonl() const {
  std::string out = json{{"type", "round"},
                         {"round_index", round_index},
                         {"inputs", inputs},
                         {"carryover", carryover},
                         {"stats", stats}}
                        .dump();
  out += '\n';
  for (const auto& e : entries) {
    auto j = e.to_json();
    j["type"] = "entry";
    out += j.dump() + "\n";
  }
  for (const auto& d : diagnosis) {
    auto j = d.to_json();
    j["type"] = "diagnosis";
    out += j.dump() + "\n";
  }
  return out;
}

EvolveStrategy assigned_strategy(std::uint64_t seed, std::size_t round, std::size_t index) noexcept {
  const auto offset = keyed_hash(seed, 0x65766f6cULL, round) % kAllStrategies.size();
  return kAllStrategies[(offset + index) % kAllStrategies.size()];
}

namespace {

struct InputOutcome {
  std::vector<EvolutionEntry> entries;
  std::vector<InstructionRecord> accepted;
};

json outcome_to_json(std::size_t index, const std::string& id, const InputOutcome& o) {
  json entries = json::array(), accepted = json::array();
  for (const auto& e : o.entries) entries.push_back(e.to_json());
  for (const auto& r : o.accepted) accepted.push_back(to_json(r));
  return {{"index", index}, {"input_id", id}, {"entries", std::move(entries)}, {"accepted", std::move(accepted)}};
}

InputOutcome evolve_input(const InstructionRecord& input, std::size_t index, std::size_t round,
                          const EvolveConfig& config, ModelGateway& gateway, std::uint64_t seed) {
  InputOutcome out;
  std::vector<EvolveStrategy> strategies;
  if (config.fan_out_all) strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
  else strategies.push_back(assigned_strategy(seed, round, index));

  for (auto strategy : strategies) {
    EvolutionEntry entry;
    entry.input_id = input.id;
    entry.strategy = strategy;
    entry.candidate_id = input.id + ".r" + std::to_string(round) + "." + std::string(to_string(strategy));
    const std::string* original = nullptr;
    try {
      original = &last_human_text(input);
    } catch (const InvalidArgument& e) {
      entry.error = e.what();
    }
    if (original) {
      entry.rewritten = rewrite_instruction(*original, strategy, gateway, config, entry.error);
      if (entry.error.empty()) {
        entry.verdict = verify_rewrite(*original, entry.rewritten, gateway, config);
        if (entry.verdict == RewriteVerdict::accepted) {
          auto child = make_child(input, entry.rewritten, strategy, round);
          if (respond(child, gateway, entry.error)) out.accepted.push_back(std::move(child));
          else entry.verdict = RewriteVerdict::malformed;
        }
      }
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

std::filesystem::path round_file(const std::filesystem::path& dir, std::size_t round, std::string_view suffix) {
  return dir / ("round_" + std::to_string(round) + std::string(suffix));
}

// Reads complete JSON lines; a torn final line from an interrupted write is ignored.
std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::vector<json> out;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
    }
  }
  return out;
}

class LineAppender {
 public:
  explicit LineAppender(const std::filesystem::path& path) {
    if (path.empty()) return;
    std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot append to checkpoint '" + path.string() + "'");
  }
  void append(const json& j) {
    if (!out_.is_open()) return;
    std::lock_guard lock(mutex_);
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

}  // namespace

RoundOutcome run_evolution_round(std::span<const InstructionRecord> inputs, const std::set<std::string>& carried,
                                 std::size_t round, const EvolveConfig& config, ModelGateway& gateway,
                                 std::uint64_t seed, std::size_t workers,
                                 const std::filesystem::path& checkpoint_dir) {
  if (round >= config.max_rounds)
    throw InvalidArgument("round " + std::to_string(round) + " is beyond max_rounds " +
                          std::to_string(config.max_rounds));
  const bool checkpointing = !checkpoint_dir.empty();

  std::vector<std::optional<InputOutcome>> outcomes(inputs.size());
  if (checkpointing) {
    for (const auto& j : read_json_lines(round_file(checkpoint_dir, round, ".partial.jsonl"))) {
      const auto index = j.at("index").get<std::size_t>();
      if (index >= inputs.size() || inputs[index].id != j.at("input_id").get<std::string>())
        throw ConfigError("evolution checkpoint does not match the round inputs");
      InputOutcome o;
      for (const auto& e : j.at("entries")) o.entries.push_back(EvolutionEntry::from_json(e));
      for (const auto& r : j.at("accepted")) o.accepted.push_back(from_json(r));
      outcomes[index] = std::move(o);
    }
  }
  {
    LineAppender partial(checkpointing ? round_file(checkpoint_dir, round, ".partial.jsonl") : "");
    parallel_for(inputs.size(), workers, [&](std::size_t i) {
      if (outcomes[i]) return;
      auto o = evolve_input(inputs[i], i, round, config, gateway, seed);
      partial.append(outcome_to_json(i, inputs[i].id, o));
      outcomes[i] = std::move(o);
    });
  }

  RoundOutcome result;
  result.log.round_index = round;
  for (const auto& kv : kVerdictNames) result.log.stats[std::string(kv)] = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    result.log.inputs.push_back(inputs[i].id);
    for (auto& e : outcomes[i]->entries) {
      ++result.log.stats[std::string(to_string(e.verdict))];
      result.log.entries.push_back(std::move(e));
    }
    for (auto& r : outcomes[i]->accepted) result.accepted.push_back(std::move(r));
  }

  std::set<std::string> weak;
  if (config.diagnose && !result.accepted.empty()) {
    std::map<std::string, DiagnosisItem> done;
    if (checkpointing)
      for (const auto& j : read_json_lines(round_file(checkpoint_dir, round, ".diagnosis.jsonl"))) {
        auto item = DiagnosisItem::from_json(j);
        done.emplace(item.id, std::move(item));
      }
    LineAppender diag(checkpointing ? round_file(checkpoint_dir, round, ".diagnosis.jsonl") : "");
    auto d = diagnose_impl(result.accepted, config.candidate_models, config.samples_per_ability,
                           config.score_threshold, gateway, seed, round, config, workers, done,
                           [&](const DiagnosisItem& item) { diag.append(item.to_json()); });
    weak.insert(d.weak_ids.begin(), d.weak_ids.end());
    result.log.diagnosis = std::move(d.items);
  }

  // Weak accepted rewrites go round again; carried items that found no
  // accepted rewrite stay in the queue.
  std::size_t accepted_pos = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto n_accepted = outcomes[i]->accepted.size();
    if (n_accepted == 0 && carried.contains(inputs[i].id)) result.next_inputs.push_back(inputs[i]);
    for (std::size_t k = 0; k < n_accepted; ++k) {
      const auto& r = result.accepted[accepted_pos + k];
      if (weak.contains(r.id)) result.next_inputs.push_back(r);
    }
    accepted_pos += n_accepted;
  }
  for (const auto& r : result.next_inputs) result.log.carryover.push_back(r.id);

  result.log.stats["inputs"] = inputs.size();
  result.log.stats["accepted_records"] = result.accepted.size();
  result.log.stats["rejected"] = result.log.entries.size() - result.log.stats["accepted"];
  result.log.stats["weak"] = weak.size();
  result.log.stats["carryover"] = result.next_inputs.size();
  return result;
}

namespace {

void save_budget(const std::filesystem::path& dir, const ModelGateway& gateway) {
  write_file_atomic(dir / "budget.json", json{{"calls_made", gateway.calls_made()}}.dump() + "\n");
}

json records_json(std::span<const InstructionRecord> records) {
  json out = json::array();
  for (const auto& r : records) out.push_back(to_json(r));
  return out;
}

std::vector<InstructionRecord> records_from(const json& j) {
  std::vector<InstructionRecord> out;
  for (const auto& r : j) out.push_back(from_json(r));
  return out;
}

}  // namespace

EvolutionResult run_evolution(std::span<const InstructionRecord> seeds, const EvolveConfig& config,
                              ModelGateway& gateway, std::uint64_t seed, std::size_t workers,
                              const std::filesystem::path& checkpoint_dir) {
  config.validate();
  EvolutionResult result;
  if (config.max_rounds == 0) {
    result.dataset.assign(seeds.begin(), seeds.end());
    return result;
  }
  const bool checkpointing = !checkpoint_dir.empty();
  if (checkpointing) {
    std::filesystem::create_directories(checkpoint_dir);
    const auto budget = checkpoint_dir / "budget.json";
    if (std::filesystem::exists(budget)) {
      std::ifstream in(budget);
      const auto saved = json::parse(in).at("calls_made").get<std::size_t>();
      if (saved > gateway.calls_made()) gateway.set_calls_made(saved);
    }
  }

  std::vector<InstructionRecord> inputs(seeds.begin(), seeds.end());
  std::set<std::string> carried;
  for (std::size_t round = 0; round < config.max_rounds && !inputs.empty(); ++round) {
    RoundOutcome outcome;
    const auto done_file = round_file(checkpoint_dir, round, ".json");
    if (checkpointing && std::filesystem::exists(done_file)) {
      std::ifstream in(done_file, std::ios::binary);
      const auto j = json::parse(in);
      outcome.log = EvolutionRound::from_json(j.at("log"));
      outcome.accepted = records_from(j.at("accepted"));
      outcome.next_inputs = records_from(j.at("next_inputs"));
    } else {
      try {
        outcome = run_evolution_round(inputs, carried, round, config, gateway, seed, workers, checkpoint_dir);
      } catch (const GatewayError& e) {
        if (!is_budget_error(e)) throw;
        if (checkpointing) save_budget(checkpoint_dir, gateway);
        result.complete = false;
        result.budget_exhausted = true;
        return result;
      }
      if (checkpointing) {
        write_file_atomic(done_file, json{{"log", outcome.log.to_json()},
                                          {"accepted", records_json(outcome.accepted)},
                                          {"next_inputs", records_json(outcome.next_inputs)}}
                                             .dump() +
                                         "\n");
        std::filesystem::remove(round_file(checkpoint_dir, round, ".partial.jsonl"));
        std::filesystem::remove(round_file(checkpoint_dir, round, ".diagnosis.jsonl"));
        save_budget(checkpoint_dir, gateway);
      }
    }
    for (auto& r : outcome.accepted) result.dataset.push_back(std::move(r));
    carried.clear();
    for (const auto& r : outcome.next_inputs) carried.insert(r.id);
    inputs = std::move(outcome.next_inputs);
    result.rounds.push_back(std::move(outcome.log));
  }
  return result;
}

void write_round_logs(std::span<const EvolutionRound> rounds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : rounds) write_file_atomic(dir / ("round_" + std::to_string(r.round_index) + ".jsonl"), r.to_jsonl());
}

}  // namespace curate
