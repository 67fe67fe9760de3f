#include "curate/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <system_error>
#include <unordered_set>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"

namespace curate {

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::system: return "system";
    case Role::human: return "human";
    case Role::assistant: return "assistant";
  }
  return "human";
}

std::string_view to_string(Domain domain) noexcept {
  switch (domain) {
    case Domain::code: return "code";
    case Domain::math: return "math";
    case Domain::knowledge: return "knowledge";
    case Domain::chat: return "chat";
  }
  return "chat";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "human") return Role::human;
  if (s == "assistant") return Role::assistant;
  throw SchemaError("unknown role '" + std::string(s) + "'");
}

Domain parse_domain(std::string_view s) {
  if (s == "code") return Domain::code;
  if (s == "math") return Domain::math;
  if (s == "knowledge") return Domain::knowledge;
  if (s == "chat") return Domain::chat;
  throw SchemaError("unknown domain '" + std::string(s) + "'");
}

std::size_t InstructionRecord::turn_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(conversations.begin(), conversations.end(),
                                                [](const Turn& t) { return t.role == Role::assistant; }));
}

const Turn* InstructionRecord::first_human() const noexcept {
  for (const auto& t : conversations)
    if (t.role == Role::human) return &t;
  return nullptr;
}

const Turn* InstructionRecord::last_human() const noexcept {
  for (auto it = conversations.rbegin(); it != conversations.rend(); ++it)
    if (it->role == Role::human) return &*it;
  return nullptr;
}

std::string InstructionRecord::human_text() const {
  std::string out;
  for (const auto& t : conversations) {
    if (t.role != Role::human) continue;
    if (!out.empty()) out += '\n';
    out += t.content;
  }
  return out;
}

ScoreSet& InstructionRecord::mutable_scores() {
  if (!scores) scores.emplace();
  return *scores;
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  });
}

void check_score(const std::optional<double>& v, const char* name, bool nonnegative) {
  if (!v) return;
  if (!std::isfinite(*v)) throw SchemaError(std::string("score '") + name + "' is not finite");
  if (nonnegative && *v < 0) throw SchemaError(std::string("score '") + name + "' is negative");
}

}  // namespace

void validate(const InstructionRecord& r) {
  if (r.id.empty()) throw SchemaError("empty id");
  if (r.conversations.empty()) throw SchemaError("empty conversations");
  std::size_t i = 0;
  if (r.conversations.front().role == Role::system) i = 1;
  if (i == r.conversations.size()) throw SchemaError("conversation has only a system turn");
  for (std::size_t k = 0; k < r.conversations.size(); ++k) {
    const auto& t = r.conversations[k];
    if (blank(t.content)) throw SchemaError("turn " + std::to_string(k) + " has empty content");
    if (k < i) continue;
    const Role expected = ((k - i) % 2 == 0) ? Role::human : Role::assistant;
    if (t.role != expected)
      throw SchemaError("turn " + std::to_string(k) + " has role '" + std::string(to_string(t.role)) +
                        "', expected '" + std::string(to_string(expected)) + "'");
  }
  if (r.conversations.back().role != Role::assistant) throw SchemaError("final turn is not assistant");
  if (r.scores) {
    check_score(r.scores->answer_loss, "answer_loss", true);
    check_score(r.scores->post_tune_loss, "post_tune_loss", true);
    check_score(r.scores->reward, "reward", false);
    check_score(r.scores->log_importance_weight, "log_importance_weight", false);
  }
  if (!r.meta.is_object()) throw SchemaError("meta is not an object");
}

json to_json(const InstructionRecord& r) {
  json j;
  j["id"] = r.id;
  j["source"] = r.source;
  j["domain"] = to_string(r.domain);
  json conv = json::array();
  for (const auto& t : r.conversations) conv.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  j["conversations"] = std::move(conv);
  if (r.labels) j["labels"] = {{"second_level", r.labels->second_level}, {"first_level", r.labels->first_level}};
  if (r.scores) {
    json s = json::object();
    if (r.scores->answer_loss) s["answer_loss"] = *r.scores->answer_loss;
    if (r.scores->post_tune_loss) s["post_tune_loss"] = *r.scores->post_tune_loss;
    if (r.scores->reward) s["reward"] = *r.scores->reward;
    if (r.scores->log_importance_weight) s["log_importance_weight"] = *r.scores->log_importance_weight;
    j["scores"] = std::move(s);
  }
  if (!r.meta.empty()) j["meta"] = r.meta;
  return j;
}

namespace {

std::string require_string(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(line_no, std::string("missing required key '") + key + "'");
  if (!it->is_string()) throw SchemaError(line_no, std::string("key '") + key + "' is not a string");
  return it->get<std::string>();
}

std::optional<double> optional_number(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw SchemaError(line_no, std::string("score '") + key + "' is not a number");
  return it->get<double>();
}

std::vector<std::string> string_list(const json& j, const char* key, std::size_t line_no) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end()) return out;
  if (!it->is_array()) throw SchemaError(line_no, std::string("labels.") + key + " is not an array");
  for (const auto& v : *it) {
    if (!v.is_string()) throw SchemaError(line_no, std::string("labels.") + key + " has a non-string entry");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

InstructionRecord from_json(const json& j, std::size_t line_no) {
  if (!j.is_object()) throw SchemaError(line_no, "record is not a JSON object");
  InstructionRecord r;
  r.id = require_string(j, "id", line_no);
  r.source = require_string(j, "source", line_no);
  try {
    r.domain = parse_domain(require_string(j, "domain", line_no));
  } catch (const SchemaError& e) {
    if (e.line_no() != 0) throw;
    throw SchemaError(line_no, e.what());
  }
  auto conv = j.find("conversations");
  if (conv == j.end()) throw SchemaError(line_no, "missing required key 'conversations'");
  if (!conv->is_array()) throw SchemaError(line_no, "conversations is not an array");
  for (const auto& t : *conv) {
    if (!t.is_object()) throw SchemaError(line_no, "turn is not an object");
    Turn turn;
    try {
      turn.role = parse_role(require_string(t, "role", line_no));
    } catch (const SchemaError& e) {
      if (e.line_no() != 0) throw;
      throw SchemaError(line_no, e.what());
    }
    turn.content = require_string(t, "content", line_no);
    r.conversations.push_back(std::move(turn));
  }
  if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw SchemaError(line_no, "labels is not an object");
    r.labels = LabelSet{string_list(*it, "second_level", line_no), string_list(*it, "first_level", line_no)};
  }
  if (auto it = j.find("scores"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw SchemaError(line_no, "scores is not an object");
    ScoreSet s;
    s.answer_loss = optional_number(*it, "answer_loss", line_no);
    s.post_tune_loss = optional_number(*it, "post_tune_loss", line_no);
    s.reward = optional_number(*it, "reward", line_no);
    s.log_importance_weight = optional_number(*it, "log_importance_weight", line_no);
    r.scores = s;
  }
  if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw SchemaError(line_no, "meta is not an object");
    r.meta = *it;
  }
  static constexpr std::array<std::string_view, 7> kKnown{"id",     "source", "domain", "conversations",
                                                          "labels", "scores", "meta"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKnown.begin(), kKnown.end(), it.key()) != kKnown.end()) continue;
    if (!r.meta.contains(it.key())) r.meta[it.key()] = it.value();
  }
  try {
    validate(r);
  } catch (const SchemaError& e) {
    throw SchemaError(line_no, e.what());
  }
  return r;
}

InstructionRecord parse_record(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  return from_json(j, line_no);
}

std::string serialize_record(const InstructionRecord& record) {
  return to_json(record).dump(-1, ' ', false, json::error_handler_t::strict);
}

void RejectLog::write(const std::filesystem::path& path) const {
  std::vector<json> rows;
  rows.reserve(entries_.size());
  for (const auto& e : entries_) rows.push_back({{"file", e.file}, {"line_no", e.line_no}, {"reason", e.reason}});
  write_jsonl(rows, path);
}

DatasetReader::DatasetReader(std::filesystem::path path, RejectLog* rejects)
    : path_{std::move(path)}, in_{path_, std::ios::binary}, rejects_{rejects} {
  if (!in_) throw IoError("cannot open dataset '" + path_.string() + "'");
}

bool DatasetReader::next(InstructionRecord& out) {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    if (blank(line_)) continue;
    try {
      out = parse_record(line_, line_no_);
      ++records_;
      return true;
    } catch (const Error& e) {
      if (!rejects_) throw;
      rejects_->add({path_.string(), line_no_, e.what()});
    }
  }
  if (in_.bad())
    throw IoError("read failure on '" + path_.string() + "' after " + std::to_string(line_no_) + " lines (" +
                  std::to_string(records_) + " records)");
  return false;
}

void stream_dataset(const std::filesystem::path& path, const std::function<void(InstructionRecord&&)>& sink,
                    RejectLog* rejects) {
  DatasetReader reader(path, rejects);
  InstructionRecord r;
  while (reader.next(r)) sink(std::move(r));
}

std::vector<InstructionRecord> read_dataset(const std::filesystem::path& path, RejectLog* rejects) {
  std::vector<InstructionRecord> out;
  stream_dataset(path, [&](InstructionRecord&& r) { out.push_back(std::move(r)); }, rejects);
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failure on '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

void write_dataset(std::span<const InstructionRecord> records, const std::filesystem::path& path) {
  std::unordered_set<std::string_view> ids;
  std::string buf;
  for (const auto& r : records) {
    validate(r);
    if (!ids.insert(r.id).second) throw SchemaError("duplicate id '" + r.id + "' in output dataset");
    buf += serialize_record(r);
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::uint64_t json_hash(const json& j) {
  return stable_hash(j.dump(-1, ' ', false, json::error_handler_t::replace));
}

void write_jsonl(std::span<const json> rows, const std::filesystem::path& path) {
  std::string buf;
  for (const auto& row : rows) {
    buf += row.dump(-1, ' ', false, json::error_handler_t::replace);
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::size_t TurnHistogram::bin_of(std::size_t turns) noexcept {
  if (turns <= 1) return 0;
  if (turns <= 5) return 1;
  if (turns <= 10) return 2;
  return 3;
}

void TurnHistogram::add(std::size_t turns) noexcept {
  ++counts[bin_of(turns)];
  ++total;
}

void TurnHistogram::finalize() noexcept {
  fractions_undefined = total == 0;
  for (std::size_t b = 0; b < kBins; ++b)
    fractions[b] = total == 0 ? 0.0 : static_cast<double>(counts[b]) / static_cast<double>(total);
}

TurnHistogram TurnHistogram::from_counts(const std::array<std::uint64_t, kBins>& c) {
  TurnHistogram h;
  h.counts = c;
  for (auto v : c) h.total += v;
  h.finalize();
  return h;
}

json TurnHistogram::to_json() const {
  json bins = json::array();
  for (std::size_t b = 0; b < kBins; ++b)
    bins.push_back({{"bin", kBinNames[b]}, {"count", counts[b]}, {"fraction", fractions[b]}});
  return {{"total", total}, {"bins", bins}, {"fractions_undefined", fractions_undefined}};
}

TurnHistogram turn_stats(std::span<const InstructionRecord> records) {
  TurnHistogram h;
  for (const auto& r : records) h.add(r.turn_count());
  h.finalize();
  return h;
}

}  // namespace curate
