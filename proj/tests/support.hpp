#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "curate/corpus.hpp"
#include "curate/hashing.hpp"

namespace curate::testing {

/// Self-deleting scratch directory.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("curate_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Record with `exchanges` human/assistant pairs.
inline InstructionRecord make_record(std::string id, std::string prompt, std::size_t exchanges = 1,
                                     Domain domain = Domain::chat, std::string source = "fixture") {
  InstructionRecord r;
  r.id = std::move(id);
  r.source = std::move(source);
  r.domain = domain;
  for (std::size_t i = 0; i < exchanges; ++i) {
    r.conversations.push_back({Role::human, i == 0 ? prompt : prompt + " follow-up " + std::to_string(i)});
    r.conversations.push_back({Role::assistant, "answer " + std::to_string(i) + " to " + r.id});
  }
  return r;
}

inline InstructionRecord with_labels(InstructionRecord r, std::vector<std::string> second,
                                     std::vector<std::string> first = {}) {
  r.labels = LabelSet{std::move(second), std::move(first)};
  return r;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Word pools for synthetic two-topic corpora.
inline const std::vector<std::string>& arithmetic_words() {
  static const std::vector<std::string> w{
      "add",     "sum",      "number",  "minus",    "plus",     "equation", "solve",   "integer",
      "divide",  "multiply", "total",   "fraction", "percent",  "apples",   "costs",   "dollars",
      "times",   "remainder", "product", "digits",  "square",   "root",     "average", "ratio",
      "compute", "value",    "twice",   "half",     "left",     "each",     "many",    "how"};
  return w;
}

inline const std::vector<std::string>& chat_words() {
  static const std::vector<std::string> w{
      "hello",   "weather",  "movie",   "favorite", "music",   "travel",  "friend",  "story",
      "recipe",  "garden",   "holiday", "feeling",  "morning", "coffee",  "weekend", "book",
      "song",    "beach",    "city",    "dinner",   "talk",    "advice",  "hobby",   "pet",
      "dream",   "color",    "summer",  "party",    "gift",    "letter",  "poem",    "joke"};
  return w;
}

inline const std::vector<std::string>& code_words() {
  static const std::vector<std::string> w{
      "def",    "function", "return",  "list",     "string",  "python", "implement", "array",
      "loop",   "integer",  "write",   "given",    "input",   "output", "sorted",    "elements",
      "index",  "recursion", "class",  "variable", "boolean", "dict",   "parse",     "algorithm",
      "lambda", "test",     "assert",  "helper",   "iterate", "append", "length",    "characters"};
  return w;
}

inline std::string random_sentence(Rng& rng, const std::vector<std::string>& words, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) s += ' ';
    s += words[rng.below(words.size())];
  }
  return s;
}

}  // namespace curate::testing
