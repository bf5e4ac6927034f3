#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "vismem/classify.hpp"

namespace vismem {

/// How a neighbor of a misclassified self-query earns a wrong vote.
enum class Attribution {
  WrongLabel,      // neighbor label differs from the query's true label
  PredictedLabel,  // neighbor label equals the (wrong) predicted label
};

struct PruneConfig {
  std::size_t k_retrieve = 100;
  VoteConfig vote{VoteScheme::Rank, 100, 2.0, 0.07, 1.0};
  Attribution attribution = Attribution::WrongLabel;
  double c = 1.0;
  double d = 1.75;
  std::uint32_t threshold = 128;
  unsigned threads = 0;
};

struct ReliabilityReport {
  std::uint64_t generation = 0;
  std::size_t k_retrieve = 100;
  VoteConfig vote;
  Attribution attribution = Attribution::WrongLabel;
  std::vector<EntryId> ids;                // memory row order
  std::vector<std::uint32_t> wrong_votes;  // parallel to ids
  std::size_t misclassified = 0;

  std::uint32_t votes_of(EntryId id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return wrong_votes[i];
    throw Error(ErrorCode::UnknownId, "id " + std::to_string(id));
  }
};

/// d / (c + v) for v > 0; 1 for entries that never voted wrong.
inline double reliability_factor(std::uint32_t wrong_votes, double c = 1.0, double d = 1.75) {
  if (wrong_votes == 0) return 1.0;
  return std::min(1.0, d / (c + static_cast<double>(wrong_votes)));
}

/// Queries every entry against the memory it lives in (self-match removed),
/// classifies, and charges a wrong vote to each harmful neighbor of every
/// misclassified query. One retrieval per entry.
inline ReliabilityReport estimate_reliability(const VisualMemory& memory, const PruneConfig& cfg = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (cfg.k_retrieve == 0) throw Error(ErrorCode::InvalidArgument, "k_retrieve must be >= 1");
  if (cfg.k_retrieve + 1 > memory.size())
    throw Error(ErrorCode::InvalidArgument, "k_retrieve + 1 exceeds memory size");
  VoteConfig vote = cfg.vote;
  vote.k = std::min(vote.k, cfg.k_retrieve);
  vote.validate();

  const std::size_t n = memory.size();
  const std::size_t workers = worker_count(n, cfg.threads);
  std::vector<std::vector<std::uint32_t>> partial(workers, std::vector<std::uint32_t>(n, 0));
  std::vector<std::size_t> wrong(workers, 0);
  parallel_chunks(n, cfg.threads, [&](std::size_t begin, std::size_t end, std::size_t w) {
    for (std::size_t r = begin; r < end; ++r) {
      const EntryId self = memory.id_at(r);
      NeighborSet set = exact_search(memory, memory.row(r), cfg.k_retrieve + 1);
      auto it = std::find_if(set.items.begin(), set.items.end(), [self](const Neighbor& nb) { return nb.id == self; });
      if (it != set.items.end())
        set.items.erase(it);
      else
        set.items.pop_back();
      for (std::size_t i = 0; i < set.items.size(); ++i) set.items[i].rank = static_cast<std::uint32_t>(i);
      const LabelId truth = memory.label_at(r);
      const Prediction p = classify(set, vote);
      if (p.label == truth) continue;
      ++wrong[w];
      for (const auto& nb : set.items) {
        const bool harmful = cfg.attribution == Attribution::WrongLabel ? nb.label != truth : nb.label == p.label;
        if (harmful) ++partial[w][*memory.row_of(nb.id)];
      }
    }
  });
  ReliabilityReport report;
  report.generation = memory.generation();
  report.k_retrieve = cfg.k_retrieve;
  report.vote = vote;
  report.attribution = cfg.attribution;
  report.ids.assign(memory.ids().begin(), memory.ids().end());
  report.wrong_votes.assign(n, 0);
  for (std::size_t w = 0; w < workers; ++w) {
    report.misclassified += wrong[w];
    for (std::size_t r = 0; r < n; ++r) report.wrong_votes[r] += partial[w][r];
  }
  return report;
}

namespace detail {
inline void check_report(const VisualMemory& memory, const ReliabilityReport& report) {
  if (report.generation != memory.generation() || report.ids.size() != memory.size())
    throw Error(ErrorCode::StaleReport, "report computed at generation " + std::to_string(report.generation) +
                                            ", memory is at " + std::to_string(memory.generation()));
  for (std::size_t r = 0; r < memory.size(); ++r)
    if (report.ids[r] != memory.id_at(r)) throw Error(ErrorCode::StaleReport, "report rows do not match memory");
}
}  // namespace detail

/// Removes every entry with v >= threshold (full unlearning semantics).
inline VisualMemory hard_prune(const VisualMemory& memory, const ReliabilityReport& report,
                               std::uint32_t threshold = 128) {
  if (threshold == 0) throw Error(ErrorCode::InvalidThreshold, "threshold 0 would empty the memory");
  detail::check_report(memory, report);
  std::vector<EntryId> doomed;
  for (std::size_t r = 0; r < report.ids.size(); ++r)
    if (report.wrong_votes[r] >= threshold) doomed.push_back(report.ids[r]);
  VisualMemory out = memory;
  out.remove(doomed);
  return out;
}

/// Stores v and gamma = reliability_factor(v, c, d) on every entry.
inline VisualMemory soft_prune(const VisualMemory& memory, const ReliabilityReport& report, double c = 1.0,
                               double d = 1.75) {
  if (!(c > 0.0) || !(d > 0.0)) throw Error(ErrorCode::InvalidArgument, "c and d must be positive");
  detail::check_report(memory, report);
  VisualMemory out = memory;
  for (std::size_t r = 0; r < report.ids.size(); ++r)
    out.set_reliability(r, report.wrong_votes[r], reliability_factor(report.wrong_votes[r], c, d));
  return out;
}

struct PruningCell {
  std::string variant;  // none | hard | soft
  VoteScheme scheme;
  double best_accuracy = 0.0;
  std::size_t best_k = 0;
};

/// {none, hard, soft} x scheme, each cell the best accuracy over k in
/// [1, min(100, memory size)].
inline std::vector<PruningCell> compare_pruning(const VisualMemory& memory, const QuerySet& queries,
                                                const std::vector<VoteScheme>& schemes, const PruneConfig& cfg = {}) {
  const auto report = estimate_reliability(memory, cfg);
  const VisualMemory hard = hard_prune(memory, report, cfg.threshold);
  const VisualMemory soft = soft_prune(memory, report, cfg.c, cfg.d);
  struct Variant {
    const char* name;
    const VisualMemory* mem;
    bool gamma;
  };
  const Variant variants[] = {{"none", &memory, false}, {"hard", &hard, false}, {"soft", &soft, true}};
  std::vector<PruningCell> cells;
  for (const auto& v : variants) {
    if (v.mem->empty()) throw Error(ErrorCode::EmptyMemory, std::string(v.name) + " memory is empty");
    const std::size_t k_max = std::min<std::size_t>(100, v.mem->size());
    SearchOptions so;
    so.threads = cfg.threads;
    const auto sets = retrieve(*v.mem, queries, k_max, false, so);
    const auto truth = truth_labels(*v.mem, queries);
    const auto rel = v.gamma ? reliability_of(*v.mem) : ReliabilityLookup{};
    for (VoteScheme s : schemes) {
      VoteConfig vc = cfg.vote;
      vc.scheme = s;
      vc.k = k_max;
      const auto rep = accuracy_by_k(sets, truth, vc, k_max, rel, cfg.threads);
      cells.push_back({v.name, s, rep.best(), rep.best_k()});
    }
  }
  return cells;
}

/// reliability.jsonl: a {"params": {...}} header line, then one {id, v}
/// record per entry in memory row order.
inline void save_report(const ReliabilityReport& report, const fs::path& path) {
  auto out = detail::open_for_write(path, false);
  json params = {{"generation", report.generation},
                 {"k_retrieve", report.k_retrieve},
                 {"scheme", std::string(to_string(report.vote.scheme))},
                 {"k", report.vote.k},
                 {"alpha", report.vote.alpha},
                 {"tau", report.vote.tau},
                 {"xi", report.vote.xi},
                 {"attribution", report.attribution == Attribution::WrongLabel ? "wrong_label" : "predicted_label"},
                 {"misclassified", report.misclassified}};
  out << json{{"params", params}}.dump() << '\n';
  for (std::size_t i = 0; i < report.ids.size(); ++i)
    out << json{{"id", report.ids[i]}, {"v", report.wrong_votes[i]}}.dump() << '\n';
  if (!out) throw Error(ErrorCode::IOError, "write failed: " + path.string());
}

inline ReliabilityReport load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IOError, "cannot open " + path.string());
  ReliabilityReport report;
  std::string line;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!header) {
        if (!j.contains("params")) throw Error(ErrorCode::FormatError, "reliability report lacks params header");
        const auto& p = j["params"];
        report.generation = p.at("generation").get<std::uint64_t>();
        report.k_retrieve = p.at("k_retrieve").get<std::size_t>();
        report.vote.scheme = parse_scheme(p.at("scheme").get<std::string>());
        report.vote.k = p.at("k").get<std::size_t>();
        report.vote.alpha = p.at("alpha").get<double>();
        report.vote.tau = p.at("tau").get<double>();
        report.vote.xi = p.at("xi").get<double>();
        report.attribution =
            p.at("attribution").get<std::string>() == "predicted_label" ? Attribution::PredictedLabel
                                                                        : Attribution::WrongLabel;
        report.misclassified = p.value("misclassified", std::size_t{0});
        header = true;
        continue;
      }
      report.ids.push_back(j.at("id").get<EntryId>());
      report.wrong_votes.push_back(j.at("v").get<std::uint32_t>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  if (!header) throw Error(ErrorCode::FormatError, "reliability report is empty");
  return report;
}

}  // namespace vismem
