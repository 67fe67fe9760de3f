#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace curate {

using json = nlohmann::json;

enum class Role { system, human, assistant };
enum class Domain { code, math, knowledge, chat };

std::string_view to_string(Role role) noexcept;
std::string_view to_string(Domain domain) noexcept;
Role parse_role(std::string_view s);      // throws SchemaError
Domain parse_domain(std::string_view s);  // throws SchemaError

struct Turn {
  Role role = Role::human;
  std::string content;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct LabelSet {
  std::vector<std::string> second_level;
  std::vector<std::string> first_level;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

struct ScoreSet {
  std::optional<double> answer_loss;
  std::optional<double> post_tune_loss;
  std::optional<double> reward;
  std::optional<double> log_importance_weight;

  friend bool operator==(const ScoreSet&, const ScoreSet&) = default;
};

/// One multi-turn instruction/response sample.
///
/// Conversations start with an optional system turn, then strictly alternate
/// human/assistant and end on an assistant turn. Fields outside the schema
/// are kept in `meta` so nothing is lost on re-serialization.
struct InstructionRecord {
  std::string id;
  std::string source;
  Domain domain = Domain::chat;
  std::vector<Turn> conversations;
  std::optional<LabelSet> labels;
  std::optional<ScoreSet> scores;
  json meta = json::object();

  /// Number of human/assistant exchanges; a leading system turn is not counted.
  [[nodiscard]] std::size_t turn_count() const noexcept;
  [[nodiscard]] const Turn* first_human() const noexcept;
  [[nodiscard]] const Turn* last_human() const noexcept;
  /// All human turns joined by a newline.
  [[nodiscard]] std::string human_text() const;

  ScoreSet& mutable_scores();

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

/// Throws SchemaError (line 0) when an invariant does not hold.
void validate(const InstructionRecord& record);

json to_json(const InstructionRecord& record);
InstructionRecord from_json(const json& j, std::size_t line_no = 0);

/// Parses and validates one JSONL line. Throws ParseError or SchemaError,
/// both carrying `line_no`.
InstructionRecord parse_record(std::string_view line, std::size_t line_no = 0);

/// Canonical single-line serialization (sorted keys, no trailing newline).
std::string serialize_record(const InstructionRecord& record);

struct RejectEntry {
  std::string file;
  std::size_t line_no = 0;
  std::string reason;
};

/// Sidecar log of input lines that failed to parse or validate.
class RejectLog {
 public:
  void add(RejectEntry entry) { entries_.push_back(std::move(entry)); }
  [[nodiscard]] const std::vector<RejectEntry>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<RejectEntry> entries_;
};

/// Single-pass, order-preserving reader over a JSONL dataset file.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path path, RejectLog* rejects = nullptr);

  /// Advances to the next valid record. Bad lines are logged to the reject
  /// log (or rethrown when there is none) and skipped.
  bool next(InstructionRecord& out);

  [[nodiscard]] std::size_t lines_read() const noexcept { return line_no_; }
  [[nodiscard]] std::size_t records_read() const noexcept { return records_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  RejectLog* rejects_;
  std::size_t line_no_ = 0;
  std::size_t records_ = 0;
  std::string line_;
};

void stream_dataset(const std::filesystem::path& path,
                    const std::function<void(InstructionRecord&&)>& sink,
                    RejectLog* rejects = nullptr);

std::vector<InstructionRecord> read_dataset(const std::filesystem::path& path,
                                            RejectLog* rejects = nullptr);

/// Writes records as JSONL through a temporary file that is renamed into
/// place on success; on failure no file is left at `path`.
void write_dataset(std::span<const InstructionRecord> records, const std::filesystem::path& path);

/// Writes arbitrary JSON rows (one per line) with the same atomic protocol.
void write_jsonl(std::span<const json> rows, const std::filesystem::path& path);

/// Stable hash of the canonical (sorted-key, compact) dump of `j`.
std::uint64_t json_hash(const json& j);

/// Writes `contents` atomically.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Turn-count histogram over the bins {1}, (1,5], (5,10], (10,inf).
struct TurnHistogram {
  static constexpr std::size_t kBins = 4;
  static constexpr std::array<std::string_view, kBins> kBinNames{"1", "(1,5]", "(5,10]",
                                                                 "(10,inf)"};

  std::array<std::uint64_t, kBins> counts{};
  std::array<double, kBins> fractions{};
  std::uint64_t total = 0;
  /// True when the dataset was empty and fractions are reported as zeros.
  bool fractions_undefined = true;

  static std::size_t bin_of(std::size_t turns) noexcept;
  static TurnHistogram from_counts(const std::array<std::uint64_t, kBins>& counts);

  void add(std::size_t turns) noexcept;
  void finalize() noexcept;

  [[nodiscard]] json to_json() const;
};

TurnHistogram turn_stats(std::span<const InstructionRecord> records);

}  // namespace curate
