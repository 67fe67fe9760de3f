#include "curate/subset_sampler.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "curate/errors.hpp"
#include "curate/hashing.hpp"

namespace curate {

namespace {

struct Prepared {
  std::vector<std::string> labels;               // visit order
  std::vector<std::vector<std::size_t>> queues;  // per label, best first
  std::vector<double> rewards;
};

Prepared prepare(std::span<const InstructionRecord> records, std::uint64_t seed, const LabelTaxonomy* taxonomy) {
  Prepared p;
  std::vector<std::vector<std::string>> names(records.size());
  std::set<std::string> all;
  p.rewards.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.scores || !r.scores->reward) throw InvalidArgument("sampling: record '" + r.id + "' has no reward");
    p.rewards[i] = *r.scores->reward;
    if (r.labels)
      for (const auto& l : r.labels->second_level) {
        auto resolved = taxonomy ? taxonomy->resolve(l).value_or(l) : l;
        if (std::find(names[i].begin(), names[i].end(), resolved) == names[i].end()) names[i].push_back(resolved);
      }
    if (names[i].empty()) throw InvalidArgument("sampling: record '" + r.id + "' has no second-level label");
    all.insert(names[i].begin(), names[i].end());
  }
  p.labels = label_visit_order({all.begin(), all.end()}, seed);
  std::map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < p.labels.size(); ++k) pos[p.labels[k]] = k;
  p.queues.resize(p.labels.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const auto& l : names[i]) p.queues[pos.at(l)].push_back(i);
  for (auto& q : p.queues)
    std::stable_sort(q.begin(), q.end(), [&](std::size_t a, std::size_t b) { return p.rewards[a] > p.rewards[b]; });
  return p;
}

// Full selection sequence with the label that picked each record.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> select_sequence(const Prepared& p, std::size_t n) {
  std::vector<std::size_t> order, via;
  std::vector<bool> taken(p.rewards.size(), false);
  std::vector<std::size_t> cursor(p.queues.size(), 0);
  while (order.size() < n) {
    bool progressed = false;
    for (std::size_t k = 0; k < p.queues.size() && order.size() < n; ++k) {
      auto& c = cursor[k];
      while (c < p.queues[k].size() && taken[p.queues[k][c]]) ++c;
      if (c == p.queues[k].size()) continue;
      taken[p.queues[k][c]] = true;
      order.push_back(p.queues[k][c]);
      via.push_back(k);
      progressed = true;
    }
    if (!progressed) break;
  }
  return {order, via};
}

std::vector<SampleException> find_exceptions(std::span<const InstructionRecord> records, const Prepared& p,
                                             std::span<const std::size_t> order, std::span<const std::size_t> via) {
  std::vector<int> picked_by(records.size(), -1);
  for (std::size_t t = 0; t < order.size(); ++t) picked_by[order[t]] = static_cast<int>(via[t]);
  std::vector<SampleException> out;
  for (std::size_t k = 0; k < p.queues.size(); ++k) {
    const auto& q = p.queues[k];
    // Selected records ranked below this label's best unselected record.
    std::size_t first_unselected = q.size();
    for (std::size_t c = 0; c < q.size(); ++c)
      if (picked_by[q[c]] < 0) {
        first_unselected = c;
        break;
      }
    for (std::size_t c = first_unselected + 1; c < q.size(); ++c)
      if (picked_by[q[c]] >= 0 && p.rewards[q[c]] < p.rewards[q[first_unselected]])
        out.push_back({p.labels[k], records[q[c]].id, p.labels[static_cast<std::size_t>(picked_by[q[c]])],
                       records[q[first_unselected]].id});
  }
  return out;
}

SampleResult build_result(std::span<const InstructionRecord> records, const Prepared& p,
                          std::span<const std::size_t> order, std::span<const std::size_t> via) {
  SampleResult r;
  r.order.assign(order.begin(), order.end());
  for (auto k : via) {
    r.via.push_back(p.labels[k]);
    ++r.per_label[p.labels[k]];
  }
  r.exceptions = find_exceptions(records, p, order, via);
  return r;
}

}  // namespace

std::vector<std::string> label_visit_order(const std::vector<std::string>& labels, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  for (const auto& l : labels) keyed.emplace_back(keyed_hash(seed, 0x6c6164ULL, stable_hash(l)), l);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> out;
  for (auto& [_, l] : keyed) out.push_back(std::move(l));
  return out;
}

SampleResult reward_prioritized_sample(std::span<const InstructionRecord> records, std::size_t n, std::uint64_t seed,
                                       const LabelTaxonomy* taxonomy) {
  if (n > records.size())
    throw InvalidArgument("sampling: requested " + std::to_string(n) + " records from a dataset of " +
                          std::to_string(records.size()));
  const auto p = prepare(records, seed, taxonomy);
  const auto [order, via] = select_sequence(p, n);
  return build_result(records, p, order, via);
}

LadderResult emit_size_ladder(std::span<const InstructionRecord> records, const std::vector<std::size_t>& sizes,
                              std::uint64_t seed, const std::filesystem::path& out_dir,
                              const LabelTaxonomy* taxonomy) {
  if (sizes.empty()) throw InvalidArgument("ladder: no sizes given");
  for (std::size_t k = 1; k < sizes.size(); ++k)
    if (sizes[k] <= sizes[k - 1]) throw InvalidArgument("ladder: sizes must be strictly ascending");
  if (sizes.back() > records.size())
    throw InvalidArgument("ladder: size " + std::to_string(sizes.back()) + " exceeds the dataset of " +
                          std::to_string(records.size()));
  const auto p = prepare(records, seed, taxonomy);
  const auto [order, via] = select_sequence(p, sizes.back());

  std::filesystem::create_directories(out_dir);
  LadderResult result;
  json manifest_rungs = json::array();
  std::ostringstream csv;
  csv << "size,labels_covered,mean_reward,min_reward,exceptions\n";
  for (auto size : sizes) {
    const std::span<const std::size_t> o(order.data(), size), v(via.data(), size);
    const auto r = build_result(records, p, o, v);
    LadderRung rung;
    rung.size = size;
    rung.file = out_dir / ("subset_" + std::to_string(size) + ".jsonl");
    rung.per_label = r.per_label;
    rung.exceptions = r.exceptions.size();

    std::vector<InstructionRecord> subset;
    std::vector<std::string> ids;
    double sum = 0.0, low = size ? p.rewards[o[0]] : 0.0;
    for (auto i : o) {
      subset.push_back(records[i]);
      ids.push_back(records[i].id);
      sum += p.rewards[i];
      low = std::min(low, p.rewards[i]);
    }
    write_dataset(subset, rung.file);
    json exceptions = json::array();
    for (const auto& e : r.exceptions)
      exceptions.push_back({{"label", e.label},
                            {"selected_id", e.selected_id},
                            {"selected_via", e.selected_via},
                            {"unselected_id", e.unselected_id}});
    manifest_rungs.push_back({{"size", size},
                              {"file", rung.file.filename().string()},
                              {"per_label", rung.per_label},
                              {"exceptions", std::move(exceptions)}});
    csv << size << ',' << r.per_label.size() << ',' << (size ? sum / double(size) : 0.0) << ',' << low << ','
        << r.exceptions.size() << '\n';
    result.rungs.push_back(std::move(rung));
    result.subsets.push_back(std::move(ids));
  }
  write_file_atomic(out_dir / "ladder_manifest.json",
                    json{{"seed", seed}, {"label_order", p.labels}, {"rungs", std::move(manifest_rungs)}}.dump(2) +
                        "\n");
  write_file_atomic(out_dir / "ladder_stats.csv", csv.str());
  return result;
}

}  // namespace curate
