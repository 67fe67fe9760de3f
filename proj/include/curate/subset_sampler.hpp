#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/label_system.hpp"

namespace curate {

/// A record selected through one label while a higher-reward record of
/// another of its labels stayed unselected.
struct SampleException {
  std::string label;
  std::string selected_id;
  std::string selected_via;
  std::string unselected_id;
};

struct SampleResult {
  std::vector<std::size_t> order;  // input indices in selection order
  std::vector<std::string> via;    // label that picked each selected record
  std::map<std::string, std::size_t> per_label;
  std::vector<SampleException> exceptions;
};

/// Round-robin over second-level labels in a seeded order; on each pass every
/// label takes its highest-reward record not yet selected (ties by stream
/// order). Stops after n records. Throws InvalidArgument when n exceeds the
/// dataset or a record lacks labels or a reward. Labels are resolved through
/// `taxonomy` when given.
SampleResult reward_prioritized_sample(std::span<const InstructionRecord> records, std::size_t n, std::uint64_t seed,
                                       const LabelTaxonomy* taxonomy = nullptr);

/// The seeded label visiting order.
std::vector<std::string> label_visit_order(const std::vector<std::string>& labels, std::uint64_t seed);

struct LadderRung {
  std::size_t size = 0;
  std::filesystem::path file;
  std::map<std::string, std::size_t> per_label;
  std::size_t exceptions = 0;
};

struct LadderResult {
  std::vector<LadderRung> rungs;
  std::vector<std::vector<std::string>> subsets;  // ids per rung, selection order
};

/// Writes subset_<size>.jsonl per size, ladder_manifest.json and
/// ladder_stats.csv into `out_dir`. Every subset is a prefix of one selection
/// sequence, so the subsets are nested. Sizes must be strictly ascending.
LadderResult emit_size_ladder(std::span<const InstructionRecord> records, const std::vector<std::size_t>& sizes,
                              std::uint64_t seed, const std::filesystem::path& out_dir,
                              const LabelTaxonomy* taxonomy = nullptr);

}  // namespace curate
