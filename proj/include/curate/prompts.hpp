#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace curate::prompts {

// Section markers shared by the prompt templates and the mock backend.
inline constexpr std::string_view kInstructionMarker = "#Instruction#:";
inline constexpr std::string_view kLabelsMarker = "#Labels#:";
inline constexpr std::string_view kGivenMarker = "#Given Prompt#:";
inline constexpr std::string_view kRewrittenMarker = "#Rewritten Prompt#:";
inline constexpr std::string_view kOriginalMarker = "#Original#:";
inline constexpr std::string_view kCandidateMarker = "#Rewritten#:";
inline constexpr std::string_view kResponseMarker = "#Response#:";

// Judge verdict keywords.
inline constexpr std::string_view kChangedSafe = "CHANGED_SAFE";
inline constexpr std::string_view kUnchanged = "UNCHANGED";
inline constexpr std::string_view kHarmful = "HARMFUL";

/// Slots: {instruction}.
std::string_view default_tagging_template();
/// Slots: {count}, {labels} (one "- label" per line).
std::string_view default_grouping_template();
/// Slots: {method}, {instruction}.
std::string_view default_rewrite_template();
/// Slots: {original}, {rewritten}.
std::string_view default_judge_template();
/// Slots: {instruction}, {response}.
std::string_view default_referee_template();

/// Replaces every "{name}" in `tpl`. Unknown slots are left alone.
std::string fill(std::string_view tpl, const std::map<std::string, std::string>& slots);

/// Trimmed text between `start` and `end` (or the end of `text` when `end`
/// is empty or absent). nullopt when `start` does not occur.
std::optional<std::string> extract_section(std::string_view text, std::string_view start, std::string_view end = {});

std::string trim(std::string_view s);

}  // namespace curate::prompts
