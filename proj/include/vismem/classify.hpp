#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vismem/parallel.hpp"
#include "vismem/search.hpp"
#include "vismem/store.hpp"

namespace vismem {

enum class VoteScheme { Plurality, Distance, Softmax, Rank };

inline constexpr std::string_view to_string(VoteScheme s) {
  switch (s) {
    case VoteScheme::Plurality: return "plurality";
    case VoteScheme::Distance: return "distance";
    case VoteScheme::Softmax: return "softmax";
    case VoteScheme::Rank: return "rank";
  }
  return "unknown";
}

inline VoteScheme parse_scheme(std::string_view name) {
  if (name == "plurality") return VoteScheme::Plurality;
  if (name == "distance") return VoteScheme::Distance;
  if (name == "softmax") return VoteScheme::Softmax;
  if (name == "rank") return VoteScheme::Rank;
  throw Error(ErrorCode::InvalidArgument, "unknown voting scheme '" + std::string(name) + "'");
}

inline constexpr VoteScheme kAllSchemes[] = {VoteScheme::Plurality, VoteScheme::Distance, VoteScheme::Softmax,
                                             VoteScheme::Rank};

struct VoteConfig {
  VoteScheme scheme = VoteScheme::Rank;
  std::size_t k = 100;
  double alpha = 2.0;  // rank offset
  double tau = 0.07;   // softmax temperature over cosine similarity
  double xi = 1.0;     // distance-voting exponent

  void validate() const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be > 0");
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
    if (!(xi >= 0.0)) throw Error(ErrorCode::InvalidArgument, "xi must be >= 0");
  }
};

/// id -> reliability factor; absent means every neighbor counts fully.
using ReliabilityLookup = std::function<double(EntryId)>;

inline ReliabilityLookup reliability_of(const VisualMemory& memory) {
  return [&memory](EntryId id) { return memory.gamma_of(id); };
}

struct Prediction {
  LabelId label = 0;
  std::vector<std::pair<LabelId, double>> scores;  // ascending label id
  std::uint32_t confidence = 0;                    // plurality count in first min(k, 100)

  double score_of(LabelId l) const {
    for (const auto& [id, s] : scores)
      if (id == l) return s;
    return 0.0;
  }
};

/// Weight of the neighbor at zero-based rank i. `distances` are the
/// distances of all aggregated neighbors, needed for Softmax normalization.
inline double weight(VoteScheme scheme, std::size_t rank, double distance, std::span<const double> distances,
                     const VoteConfig& cfg) {
  switch (scheme) {
    case VoteScheme::Plurality:
      return 1.0;
    case VoteScheme::Distance:
      return std::pow(std::exp(-distance), cfg.xi);
    case VoteScheme::Softmax: {
      // exp(s_i / tau) / sum_j exp(s_j / tau) with s = 1 - d, shifted by the
      // best similarity for range safety.
      double best = 1.0 - distance;
      for (double d : distances) best = std::max(best, 1.0 - d);
      double denom = 0.0;
      for (double d : distances) denom += std::exp(((1.0 - d) - best) / cfg.tau);
      return std::exp(((1.0 - distance) - best) / cfg.tau) / denom;
    }
    case VoteScheme::Rank:
      return 1.0 / (cfg.alpha + static_cast<double>(rank));
  }
  return 0.0;
}

/// Weights for the first k neighbors, in rank order.
inline std::vector<double> weights(const NeighborSet& neighbors, const VoteConfig& cfg, std::size_t k) {
  k = std::min(k, neighbors.size());
  std::vector<double> dist(k);
  for (std::size_t i = 0; i < k; ++i) dist[i] = neighbors[i].distance;
  std::vector<double> w(k);
  if (cfg.scheme == VoteScheme::Softmax && k > 0) {
    const double best = 1.0 - *std::min_element(dist.begin(), dist.end());
    double denom = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      w[i] = std::exp(((1.0 - dist[i]) - best) / cfg.tau);
      denom += w[i];
    }
    for (auto& x : w) x /= denom;
    return w;
  }
  for (std::size_t i = 0; i < k; ++i) w[i] = weight(cfg.scheme, i, dist[i], dist, cfg);
  return w;
}

namespace detail {

inline std::uint32_t plurality_count(const NeighborSet& neighbors, std::size_t limit) {
  limit = std::min(limit, neighbors.size());
  std::vector<std::pair<LabelId, std::uint32_t>> counts;
  std::uint32_t best = 0;
  for (std::size_t i = 0; i < limit; ++i) {
    const LabelId l = neighbors[i].label;
    auto it = std::find_if(counts.begin(), counts.end(), [l](const auto& c) { return c.first == l; });
    if (it == counts.end()) {
      counts.emplace_back(l, 1);
      best = std::max<std::uint32_t>(best, 1);
    } else {
      best = std::max(best, ++it->second);
    }
  }
  return best;
}

}  // namespace detail

/// Aggregates the first cfg.k neighbors (clamped to the set size):
/// score(l) = sum of weight_i * gamma_i over neighbors labeled l. The label
/// with the highest score wins; equal scores go to the smaller label id.
inline Prediction classify(const NeighborSet& neighbors, const VoteConfig& cfg,
                           const ReliabilityLookup& reliability = {}) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyNeighborSet, "nothing to aggregate");
  cfg.validate();
  const std::size_t k = std::min(cfg.k, neighbors.size());
  const auto w = weights(neighbors, cfg, k);
  Prediction p;
  for (std::size_t i = 0; i < k; ++i) {
    double wi = w[i];
    if (reliability) wi *= reliability(neighbors[i].id);
    const LabelId l = neighbors[i].label;
    auto it = std::lower_bound(p.scores.begin(), p.scores.end(), l,
                               [](const auto& s, LabelId id) { return s.first < id; });
    if (it != p.scores.end() && it->first == l)
      it->second += wi;
    else
      p.scores.insert(it, {l, wi});
  }
  double best = -1.0;
  for (const auto& [l, s] : p.scores)
    if (s > best) {
      best = s;
      p.label = l;
    }
  p.confidence = detail::plurality_count(neighbors, std::min<std::size_t>(k, 100));
  return p;
}

/// A labeled query set. Vectors are normalized on load.
struct QuerySet {
  std::vector<EntryId> ids;
  std::vector<EmbeddingVector> vectors;
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> taxonomy_paths;

  std::size_t size() const noexcept { return ids.size(); }

  static QuerySet from_pack(const Pack& pack) {
    QuerySet q;
    for (std::size_t i = 0; i < pack.count(); ++i) {
      q.ids.push_back(pack.records[i].id);
      q.vectors.push_back(normalize(pack.row(i)));
      q.labels.push_back(pack.records[i].label_name);
      q.taxonomy_paths.push_back(pack.records[i].taxonomy_path);
    }
    return q;
  }

  static QuerySet from_memory(const VisualMemory& m) {
    QuerySet q;
    for (std::size_t r = 0; r < m.size(); ++r) {
      q.ids.push_back(m.id_at(r));
      q.vectors.push_back(EmbeddingVector::from_unit(m.row(r)));
      q.labels.push_back(m.label_name(m.label_at(r)));
      q.taxonomy_paths.push_back(m.taxonomy_path_at(r));
    }
    return q;
  }
};

/// Which search path serves queries during evaluation.
struct SearchOptions {
  const AnnIndex* index = nullptr;  // null -> exact scan
  std::optional<std::uint32_t> probes;
  unsigned threads = 0;
};

/// Retrieves k neighbors per query. With exclude_self, one extra neighbor is
/// fetched and any neighbor whose id equals the query id is dropped.
inline std::vector<NeighborSet> retrieve(const VisualMemory& memory, const QuerySet& queries, std::size_t k,
                                         bool exclude_self, const SearchOptions& search = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  const std::size_t fetch = std::min(memory.size(), k + (exclude_self ? 1 : 0));
  std::vector<NeighborSet> sets;
  if (search.index) {
    sets.resize(queries.size());
    parallel_for(queries.size(), search.threads, [&](std::size_t q) {
      sets[q] = ann_search(*search.index, memory, queries.vectors[q], fetch, search.probes);
    });
  } else {
    BatchOptions opts;
    opts.threads = search.threads;
    sets = exact_search_batch(memory, queries.vectors, fetch, opts);
  }
  for (std::size_t q = 0; q < sets.size(); ++q) {
    auto& s = sets[q];
    s.query_id = queries.ids[q];
    if (exclude_self) {
      std::erase_if(s.items, [&](const Neighbor& n) { return n.id == queries.ids[q]; });
      if (s.items.size() > k) s.items.resize(k);
      for (std::size_t i = 0; i < s.items.size(); ++i) s.items[i].rank = static_cast<std::uint32_t>(i);
    }
  }
  return sets;
}

/// Memory label id of each query's true label, or -1 when the memory has
/// never seen that label (such queries can never be classified correctly).
inline std::vector<LabelId> truth_labels(const VisualMemory& memory, const QuerySet& queries) {
  std::vector<LabelId> truth(queries.size(), -1);
  for (std::size_t q = 0; q < queries.size(); ++q)
    if (auto l = memory.find_label(queries.labels[q])) truth[q] = *l;
  return truth;
}

struct AccuracyReport {
  VoteConfig config;
  std::vector<double> accuracy;  // accuracy[k-1] is top-1 accuracy at k
  std::size_t queries = 0;

  double at(std::size_t k) const { return accuracy.at(k - 1); }
  double best() const { return accuracy.empty() ? 0.0 : *std::max_element(accuracy.begin(), accuracy.end()); }
  std::size_t best_k() const {
    return accuracy.empty() ? 0
                            : static_cast<std::size_t>(std::max_element(accuracy.begin(), accuracy.end()) -
                                                       accuracy.begin()) + 1;
  }
};

/// Top-1 accuracy for every k in [1, k_max] from precomputed neighbor sets.
/// Each k is an independent classify() call, so the numbers match
/// single-shot classification exactly.
inline AccuracyReport accuracy_by_k(const std::vector<NeighborSet>& sets, const std::vector<LabelId>& truth,
                                    const VoteConfig& cfg, std::size_t k_max,
                                    const ReliabilityLookup& reliability = {}, unsigned threads = 0) {
  cfg.validate();
  if (k_max == 0) throw Error(ErrorCode::InvalidArgument, "k_max must be >= 1");
  const std::size_t workers = worker_count(sets.size(), threads);
  std::vector<std::vector<std::size_t>> partial(workers, std::vector<std::size_t>(k_max, 0));
  parallel_chunks(sets.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t w) {
    VoteConfig local = cfg;
    for (std::size_t q = begin; q < end; ++q) {
      if (sets[q].empty()) continue;
      for (std::size_t k = 1; k <= k_max; ++k) {
        local.k = k;
        if (classify(sets[q], local, reliability).label == truth[q]) ++partial[w][k - 1];
      }
    }
  });
  AccuracyReport report;
  report.config = cfg;
  report.queries = sets.size();
  report.accuracy.assign(k_max, 0.0);
  for (std::size_t k = 0; k < k_max; ++k) {
    std::size_t hits = 0;
    for (const auto& p : partial) hits += p[k];
    report.accuracy[k] = sets.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(sets.size());
  }
  return report;
}

struct EvalOptions {
  bool exclude_self = false;
  bool use_reliability = false;  // weight neighbors by stored gamma
  SearchOptions search;
};

/// Accuracy for every k in [1, cfg.k]: one retrieval of cfg.k neighbors per
/// query, re-aggregated per k.
inline AccuracyReport evaluate(const VisualMemory& memory, const QuerySet& queries, const VoteConfig& cfg,
                               const EvalOptions& opts = {}) {
  cfg.validate();
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (cfg.k > memory.size())
    throw Error(ErrorCode::InvalidArgument, "k_max " + std::to_string(cfg.k) + " exceeds memory size " +
                                                std::to_string(memory.size()));
  const auto sets = retrieve(memory, queries, cfg.k, opts.exclude_self, opts.search);
  return accuracy_by_k(sets, truth_labels(memory, queries), cfg, cfg.k,
                       opts.use_reliability ? reliability_of(memory) : ReliabilityLookup{}, opts.search.threads);
}

struct SweepRow {
  double value = 0.0;
  double best_accuracy = 0.0;
  std::size_t best_k = 0;
};

/// Sets the scheme's own hyperparameter (alpha, tau or xi). Plurality has
/// none; the value is ignored.
inline VoteConfig with_hyperparameter(VoteConfig cfg, double value) {
  switch (cfg.scheme) {
    case VoteScheme::Rank: cfg.alpha = value; break;
    case VoteScheme::Softmax: cfg.tau = value; break;
    case VoteScheme::Distance: cfg.xi = value; break;
    case VoteScheme::Plurality: break;
  }
  return cfg;
}

/// For each hyperparameter value, the best top-1 accuracy over k in
/// [1, min(100, memory size)]. Neighbors are retrieved once.
inline std::vector<SweepRow> sweep(const VisualMemory& memory, const QuerySet& queries, VoteScheme scheme,
                                   const std::vector<double>& grid, const EvalOptions& opts = {}) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "hyperparameter grid is empty");
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  const std::size_t k_max = std::min<std::size_t>(100, memory.size());
  const auto sets = retrieve(memory, queries, k_max, opts.exclude_self, opts.search);
  const auto truth = truth_labels(memory, queries);
  const auto rel = opts.use_reliability ? reliability_of(memory) : ReliabilityLookup{};
  std::vector<SweepRow> rows;
  for (double v : grid) {
    VoteConfig cfg;
    cfg.scheme = scheme;
    cfg.k = k_max;
    cfg = with_hyperparameter(cfg, v);
    const auto report = accuracy_by_k(sets, truth, cfg, k_max, rel, opts.search.threads);
    rows.push_back({v, report.best(), report.best_k()});
  }
  return rows;
}

}  // namespace vismem
