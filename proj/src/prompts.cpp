#include "curate/prompts.hpp"

namespace curate::prompts {

std::string_view default_tagging_template() {
  return "You label instructions with the capabilities needed to answer them.\n"
         "Reply with 1 to 8 short capability tags separated by commas and nothing else.\n"
         "#Instruction#:\n{instruction}";
}

std::string_view default_grouping_template() {
  return "Group the capability labels below into {count} broader categories.\n"
         "Reply with one line per label in the form `label => category`.\n"
         "#Labels#:\n{labels}";
}

std::string_view default_rewrite_template() {
  return "I want you to act as a Prompt Rewriter.\n"
         "Rewrite the given prompt into a more complex version that a person can still understand and answer.\n"
         "Do not omit any non-text parts such as tables or code. The rewritten prompt may add at most 10 to 20 "
         "words.\n"
         "{method}\n"
         "#Given Prompt#:\n{instruction}\n"
         "#Rewritten Prompt#:\n";
}

std::string_view default_judge_template() {
  return "Compare the original instruction with its rewrite.\n"
         "Reply with exactly one word: CHANGED_SAFE if the rewrite asks for something different and contains no "
         "harmful content, UNCHANGED if it means the same as the original, HARMFUL if it introduces harmful "
         "content.\n"
         "#Original#:\n{original}\n"
         "#Rewritten#:\n{rewritten}";
}

std::string_view default_referee_template() {
  return "Rate how well the response answers the instruction on a scale from 1 to 10.\n"
         "Reply in the form `Score: N`.\n"
         "#Instruction#:\n{instruction}\n"
         "#Response#:\n{response}";
}

std::string fill(std::string_view tpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tpl.size() + 64);
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = slots.find(std::string(tpl.substr(i + 1, close - i - 1)));
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tpl[i++];
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<std::string> extract_section(std::string_view text, std::string_view start, std::string_view end) {
  const auto b = text.find(start);
  if (b == std::string_view::npos) return std::nullopt;
  const auto from = b + start.size();
  auto to = end.empty() ? std::string_view::npos : text.find(end, from);
  if (to == std::string_view::npos) to = text.size();
  return trim(text.substr(from, to - from));
}

}  // namespace curate::prompts
