#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "curate/corpus.hpp"

namespace curate {

enum class Decision { keep, drop };

struct ManifestRow {
  std::string id;
  std::string stage;
  Decision decision = Decision::keep;
  std::string reason_code;
  json scores = json::object();

  [[nodiscard]] json to_json() const;
  static ManifestRow from_json(const json& j);
};

struct StageSummary {
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> reasons;
};

/// Audit trail of keep/drop decisions. Rows appear in decision order, which
/// every stage makes deterministic.
class SelectionManifest {
 public:
  SelectionManifest() = default;
  SelectionManifest(std::string run_id, std::uint64_t config_hash)
      : run_id_{std::move(run_id)}, config_hash_{config_hash} {}

  void keep(const std::string& id, const std::string& stage, const std::string& reason, json scores = json::object());
  void drop(const std::string& id, const std::string& stage, const std::string& reason, json scores = json::object());
  void add(ManifestRow row);
  void append(const SelectionManifest& other);

  [[nodiscard]] const std::vector<ManifestRow>& rows() const noexcept { return rows_; }
  [[nodiscard]] std::map<std::string, StageSummary> summaries() const;
  [[nodiscard]] std::vector<ManifestRow> rows_for(const std::string& stage) const;

  [[nodiscard]] const std::string& run_id() const noexcept { return run_id_; }
  [[nodiscard]] std::uint64_t config_hash() const noexcept { return config_hash_; }

  /// Header line followed by one line per row.
  void write(const std::filesystem::path& path) const;
  static SelectionManifest read(const std::filesystem::path& path);

  [[nodiscard]] std::uint64_t hash() const;

 private:
  std::string run_id_;
  std::uint64_t config_hash_ = 0;
  std::vector<ManifestRow> rows_;
};

}  // namespace curate
