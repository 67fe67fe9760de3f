#include "curate/manifest.hpp"

#include <fstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"

namespace curate {

json ManifestRow::to_json() const {
  json j{{"id", id}, {"stage", stage}, {"decision", decision == Decision::keep ? "keep" : "drop"},
         {"reason_code", reason_code}};
  if (!scores.empty()) j["scores"] = scores;
  return j;
}

ManifestRow ManifestRow::from_json(const json& j) {
  ManifestRow r;
  r.id = j.at("id").get<std::string>();
  r.stage = j.at("stage").get<std::string>();
  r.decision = j.at("decision") == "keep" ? Decision::keep : Decision::drop;
  r.reason_code = j.at("reason_code").get<std::string>();
  r.scores = j.value("scores", json::object());
  return r;
}

void SelectionManifest::keep(const std::string& id, const std::string& stage, const std::string& reason,
                             json scores) {
  rows_.push_back({id, stage, Decision::keep, reason, std::move(scores)});
}

void SelectionManifest::drop(const std::string& id, const std::string& stage, const std::string& reason,
                             json scores) {
  rows_.push_back({id, stage, Decision::drop, reason, std::move(scores)});
}

void SelectionManifest::add(ManifestRow row) { rows_.push_back(std::move(row)); }

void SelectionManifest::append(const SelectionManifest& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::map<std::string, StageSummary> SelectionManifest::summaries() const {
  std::map<std::string, StageSummary> out;
  for (const auto& r : rows_) {
    auto& s = out[r.stage];
    (r.decision == Decision::keep ? s.kept : s.dropped)++;
    ++s.reasons[r.reason_code];
  }
  return out;
}

std::vector<ManifestRow> SelectionManifest::rows_for(const std::string& stage) const {
  std::vector<ManifestRow> out;
  for (const auto& r : rows_)
    if (r.stage == stage) out.push_back(r);
  return out;
}

void SelectionManifest::write(const std::filesystem::path& path) const {
  std::vector<json> lines;
  lines.reserve(rows_.size() + 1);
  json summary = json::object();
  for (const auto& [stage, s] : summaries())
    summary[stage] = {{"kept", s.kept}, {"dropped", s.dropped}, {"reasons", s.reasons}};
  lines.push_back({{"run_id", run_id_}, {"config_hash", hex64(config_hash_)}, {"stages", summary}});
  for (const auto& r : rows_) lines.push_back(r.to_json());
  write_jsonl(lines, path);
}

SelectionManifest SelectionManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty manifest '" + path.string() + "'");
  const auto header = json::parse(line);
  SelectionManifest m(header.at("run_id").get<std::string>(),
                      std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.rows_.push_back(ManifestRow::from_json(json::parse(line)));
  }
  return m;
}

std::uint64_t SelectionManifest::hash() const {
  Fnv1a h(config_hash_);
  h.bytes(run_id_);
  for (const auto& r : rows_) h.byte(0x1e).bytes(r.to_json().dump());
  return h.digest();
}

}  // namespace curate
