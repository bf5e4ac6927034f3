#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vismem/classify.hpp"
#include "vismem/store.hpp"

namespace vismem {

using NodeId = std::uint32_t;

/// Rooted label tree. Node 0 is ROOT; children keep declaration order.
class TaxonomyTree {
 public:
  struct Node {
    NodeId id = 0;
    std::string name;
    NodeId parent = 0;
    std::uint32_t depth = 0;  // ROOT is 0
    std::vector<NodeId> children;
  };

  TaxonomyTree() { nodes_.push_back({0, "ROOT", 0, 0, {}}); }

  /// Trie of `/`-joined ROOT->leaf paths (ROOT itself not written). All
  /// leaves must sit at the same depth.
  static TaxonomyTree from_paths(const std::vector<std::vector<std::string>>& paths) {
    TaxonomyTree t;
    for (const auto& p : paths) {
      if (p.empty()) continue;
      t.add_path(p);
    }
    t.check_uniform_depth();
    return t;
  }

  static TaxonomyTree from_lines(std::istream& in) {
    std::vector<std::vector<std::string>> paths;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      paths.push_back(split_path(line));
    }
    return from_paths(paths);
  }

  static TaxonomyTree from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IOError, "cannot open " + path.string());
    return from_lines(in);
  }

  static std::vector<std::string> split_path(const std::string& line) {
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, '/')) {
      if (part.empty()) throw Error(ErrorCode::FormatError, "empty node name in path '" + line + "'");
      parts.push_back(part);
    }
    return parts;
  }

  static std::string join_path(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "/" : "") + parts[i];
    return out;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  NodeId root() const noexcept { return 0; }
  /// Depth of every leaf (number of levels below ROOT).
  std::uint32_t levels() const noexcept { return levels_; }
  bool is_leaf(NodeId id) const { return nodes_.at(id).children.empty(); }

  std::optional<NodeId> child(NodeId parent, const std::string& name) const {
    for (NodeId c : nodes_.at(parent).children)
      if (nodes_[c].name == name) return c;
    return std::nullopt;
  }

  /// Node ids along `names` from ROOT; nullopt if any edge is missing.
  std::optional<std::vector<NodeId>> resolve(const std::vector<std::string>& names) const {
    std::vector<NodeId> out;
    NodeId cur = root();
    for (const auto& n : names) {
      auto c = child(cur, n);
      if (!c) return std::nullopt;
      out.push_back(*c);
      cur = *c;
    }
    return out;
  }

  /// Node ids ROOT-exclusive down to `id`.
  std::vector<NodeId> path_to(NodeId id) const {
    std::vector<NodeId> out;
    while (id != root()) {
      out.push_back(id);
      id = nodes_.at(id).parent;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::vector<std::string> names_of(const std::vector<NodeId>& path) const {
    std::vector<std::string> out;
    for (NodeId id : path) out.push_back(nodes_.at(id).name);
    return out;
  }

  std::vector<NodeId> leaves() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
      if (n.id != root() && n.children.empty()) out.push_back(n.id);
    return out;
  }

 private:
  void add_path(const std::vector<std::string>& p) {
    NodeId cur = root();
    for (const auto& name : p) {
      auto c = child(cur, name);
      if (!c) {
        const NodeId id = static_cast<NodeId>(nodes_.size());
        nodes_.push_back({id, name, cur, nodes_[cur].depth + 1, {}});
        nodes_[cur].children.push_back(id);
        c = id;
      }
      cur = *c;
    }
  }

  void check_uniform_depth() {
    levels_ = 0;
    for (const auto& n : nodes_) {
      if (n.id == root() || !n.children.empty()) continue;
      if (levels_ == 0) levels_ = n.depth;
      if (n.depth != levels_)
        throw Error(ErrorCode::FormatError, "leaf '" + n.name + "' at depth " + std::to_string(n.depth) +
                                                ", others at " + std::to_string(levels_));
    }
  }

  std::vector<Node> nodes_;
  std::uint32_t levels_ = 0;
};

enum class KsMethod { Exact, Asymptotic };

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  KsMethod method = KsMethod::Asymptotic;
  double log_p_value = 0.0;  // natural log; finite where p_value underflows
};

/// Sample-size product up to which the exact null distribution is used.
inline constexpr double kKsExactLimit = 4.0e6;
/// Below this p the log-domain tail takes over from the exact value.
inline constexpr double kKsLogSwitch = 1e-6;

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2).
/// Returns 1 when the alternating series fails to converge (small lambda).
inline double kolmogorov_survival(double lambda) {
  const double a2 = -2.0 * lambda * lambda;
  double fac = 2.0, sum = 0.0, previous = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = fac * std::exp(a2 * j * j);
    sum += term;
    if (std::abs(term) <= 1e-3 * previous || std::abs(term) <= 1e-8 * sum) return std::clamp(sum, 0.0, 1.0);
    fac = -fac;
    previous = std::abs(term);
  }
  return 1.0;
}

/// D statistic over two sorted samples.
inline double ks_statistic_sorted(std::span<const double> a, std::span<const double> b) {
  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }
  return d;
}

/// Asymptotic p-value with the small-sample correction
/// lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D, ne = n1 n2 / (n1 + n2).
inline double ks_p_value_asymptotic(double statistic, std::size_t n1, std::size_t n2) {
  const double ne = static_cast<double>(n1) * static_cast<double>(n2) / static_cast<double>(n1 + n2);
  const double root = std::sqrt(ne);
  return kolmogorov_survival((root + 0.12 + 0.11 / root) * statistic);
}

/// Exact P(D >= statistic) under the null for continuous data, by counting
/// lattice paths that stay inside the band |i/m - j/n| < D. O(m n).
inline double ks_p_value_exact(double statistic, std::size_t n1, std::size_t n2) {
  std::size_t m = std::min(n1, n2), n = std::max(n1, n2);
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  // Largest attainable D strictly below `statistic`, padded to half a lattice step.
  const double q = (0.5 + std::floor(statistic * md * nd - 1e-7)) / (md * nd);
  std::vector<double> u(n + 1);
  for (std::size_t j = 0; j <= n; ++j) u[j] = (static_cast<double>(j) / nd > q) ? 0.0 : 1.0;
  for (std::size_t i = 1; i <= m; ++i) {
    const double w = static_cast<double>(i) / static_cast<double>(i + n);
    u[0] = (static_cast<double>(i) / md > q) ? 0.0 : w * u[0];
    for (std::size_t j = 1; j <= n; ++j)
      u[j] = std::abs(static_cast<double>(i) / md - static_cast<double>(j) / nd) > q ? 0.0 : w * u[j] + u[j - 1];
  }
  return std::clamp(1.0 - u[n], 0.0, 1.0);
}

/// Exact null distribution while n1 n2 <= kKsExactLimit, asymptotic beyond.
inline double ks_p_value(double statistic, std::size_t n1, std::size_t n2, KsMethod* method = nullptr) {
  if (statistic <= 0.0) {
    if (method) *method = KsMethod::Exact;
    return 1.0;
  }
  if (static_cast<double>(n1) * static_cast<double>(n2) <= kKsExactLimit) {
    if (method) *method = KsMethod::Exact;
    return ks_p_value_exact(statistic, n1, n2);
  }
  if (method) *method = KsMethod::Asymptotic;
  return ks_p_value_asymptotic(statistic, n1, n2);
}

/// Natural log of the p-value. Exact where the exact p is resolvable in
/// double precision, otherwise the leading terms of the asymptotic series
/// evaluated in log space, which stays finite for D near 1.
inline double ks_log_p_value(double statistic, std::size_t n1, std::size_t n2, KsMethod* method = nullptr) {
  const double p = ks_p_value(statistic, n1, n2, method);
  if (p >= kKsLogSwitch) return std::log(p);
  if (method) *method = KsMethod::Asymptotic;
  const double ne = static_cast<double>(n1) * static_cast<double>(n2) / static_cast<double>(n1 + n2);
  const double root = std::sqrt(ne);
  const double l2 = std::pow((root + 0.12 + 0.11 / root) * statistic, 2);
  return std::log(2.0) - 2.0 * l2 + std::log1p(-std::exp(-6.0 * l2) + std::exp(-16.0 * l2));
}

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySample, "KS test needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  KsResult r;
  r.n1 = a.size();
  r.n2 = b.size();
  r.statistic = ks_statistic_sorted(a, b);
  r.p_value = ks_p_value(r.statistic, r.n1, r.n2, &r.method);
  r.log_p_value = r.p_value >= kKsLogSwitch ? std::log(r.p_value) : ks_log_p_value(r.statistic, r.n1, r.n2);
  return r;
}

/// Permutation p-value P(D_perm >= D_obs) with a seeded shuffle of the pooled
/// sample. Slow; for validating the asymptotic path only.
inline KsResult ks_permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                                    std::size_t permutations, std::uint64_t seed) {
  KsResult r = ks_two_sample(a, b);
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  std::mt19937_64 rng(seed);
  std::vector<double> x(a.size()), y(b.size());
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(pool.begin(), pool.end(), rng);
    std::copy_n(pool.begin(), a.size(), x.begin());
    std::copy(pool.begin() + static_cast<std::ptrdiff_t>(a.size()), pool.end(), y.begin());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    if (ks_statistic_sorted(x, y) >= r.statistic - 1e-12) ++extreme;
  }
  r.p_value = static_cast<double>(extreme) / static_cast<double>(permutations);
  return r;
}

struct HierarchyOptions {
  std::size_t max_pairs = 2000;  // cap on in-node pairwise distances
  std::uint64_t seed = 0;
  bool skip_empty = false;  // drop example-less children instead of failing
};

/// Greedy top-down label prediction over a TaxonomyTree backed by a memory.
/// At each level the child whose in-node distance distribution best matches
/// the query's distances to that child's examples (highest KS p-value) wins.
/// In-node distributions are computed once at construction.
class HierarchyPredictor {
 public:
  HierarchyPredictor(const VisualMemory& memory, const TaxonomyTree& tree, HierarchyOptions opts = {})
      : memory_(memory), tree_(tree), opts_(opts), examples_(tree.size()), in_dist_(tree.size()) {
    for (std::size_t r = 0; r < memory.size(); ++r) {
      const auto& names = memory.taxonomy_path_at(r);
      if (names.empty()) continue;
      auto path = tree.resolve(names);
      if (!path || path->size() != tree.levels())
        throw Error(ErrorCode::UnknownPath, "entry " + std::to_string(memory.id_at(r)) + " path '" +
                                                TaxonomyTree::join_path(names) + "' is not a ROOT->leaf path");
      for (NodeId n : *path) examples_[n].push_back(r);
    }
    for (NodeId n = 1; n < tree.size(); ++n) in_dist_[n] = pairwise_distances(n);
  }

  const std::vector<std::size_t>& examples(NodeId node) const { return examples_.at(node); }

  /// Node ids ROOT-exclusive down to the predicted leaf.
  std::vector<NodeId> predict(std::span<const float> query) const {
    if (query.size() != memory_.dims()) throw Error(ErrorCode::DimMismatch, "query dims differ from memory");
    std::vector<NodeId> path;
    NodeId cur = tree_.root();
    if (tree_.node(cur).children.empty()) throw Error(ErrorCode::NoChildren, "tree has no nodes below ROOT");
    while (!tree_.node(cur).children.empty()) {
      std::vector<NodeId> candidates;
      for (NodeId c : tree_.node(cur).children) {
        if (examples_[c].empty()) {
          if (opts_.skip_empty) continue;
          throw Error(ErrorCode::EmptyCandidate, "node '" + tree_.node(c).name + "' has no examples");
        }
        candidates.push_back(c);
      }
      if (candidates.empty())
        throw Error(ErrorCode::EmptyCandidate, "no child of '" + tree_.node(cur).name + "' has examples");
      NodeId chosen = candidates.front();
      if (candidates.size() > 1) {
        double best = -std::numeric_limits<double>::infinity();
        for (NodeId c : candidates) {
          const double p = log_p_value(query, c);
          if (p > best) {
            best = p;
            chosen = c;
          }
        }
      }
      path.push_back(chosen);
      cur = chosen;
    }
    return path;
  }

  std::vector<NodeId> predict(const EmbeddingVector& query) const { return predict(query.values()); }

  /// KS p-value between query->examples(c) distances and in-node distances.
  double p_value(std::span<const float> query, NodeId c) const { return std::exp(log_p_value(query, c)); }

  /// Log of p_value; candidates are ranked on this so tiny p-values stay ordered.
  double log_p_value(std::span<const float> query, NodeId c) const {
    std::vector<double> cross;
    cross.reserve(examples_[c].size());
    for (std::size_t r : examples_[c]) cross.push_back(cosine_distance(query, memory_.row(r)));
    std::sort(cross.begin(), cross.end());
    const auto& in = in_dist_[c];
    return ks_log_p_value(ks_statistic_sorted(cross, in), cross.size(), in.size());
  }

 private:
  /// Distances between distinct examples of a node, sorted. Capped at
  /// max_pairs seeded random pairs. A node with a single example has no
  /// pairs; its distribution degenerates to the self-distance {0}.
  std::vector<double> pairwise_distances(NodeId node) const {
    const auto& ex = examples_[node];
    std::vector<double> out;
    const std::size_t m = ex.size();
    if (m == 0) return out;
    if (m == 1) return {0.0};
    const std::size_t all_pairs = m * (m - 1) / 2;
    if (all_pairs <= opts_.max_pairs) {
      out.reserve(all_pairs);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) out.push_back(cosine_distance(memory_.row(ex[i]), memory_.row(ex[j])));
    } else {
      std::mt19937_64 rng(opts_.seed ^ (0x9E3779B97F4A7C15ull * (node + 1)));
      std::uniform_int_distribution<std::size_t> pick(0, m - 1);
      out.reserve(opts_.max_pairs);
      while (out.size() < opts_.max_pairs) {
        const std::size_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        out.push_back(cosine_distance(memory_.row(ex[i]), memory_.row(ex[j])));
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  const VisualMemory& memory_;
  const TaxonomyTree& tree_;
  HierarchyOptions opts_;
  std::vector<std::vector<std::size_t>> examples_;
  std::vector<std::vector<double>> in_dist_;
};

inline std::vector<NodeId> hierarchical_predict(const EmbeddingVector& query, const VisualMemory& memory,
                                                const TaxonomyTree& tree, const HierarchyOptions& opts = {}) {
  return HierarchyPredictor(memory, tree, opts).predict(query);
}

struct GranularityStep {
  std::size_t requested = 0;
  std::size_t exemplars = 0;             // actually inserted (pool may be smaller)
  std::vector<double> level_accuracy;    // index l-1 for level l
  std::vector<double> baseline_accuracy;  // majority-node baseline per level
};

struct GranularityOptions {
  std::vector<std::size_t> ladder = {0, 1, 5, 10, 25, 50};
  std::uint64_t seed = 0;
  HierarchyOptions hierarchy;
};

/// Starting from `memory` with every entry of `target_leaf` withheld, inserts
/// a growing seeded prefix of the withheld pool and measures per-level
/// accuracy of hierarchical_predict on holdout queries labeled with the
/// target's path. Ladder steps share one shuffle, so larger steps contain the
/// exemplars of smaller ones.
inline std::vector<GranularityStep> granularity_experiment(const VisualMemory& memory, const TaxonomyTree& tree,
                                                           NodeId target_leaf, const QuerySet& holdout,
                                                           const GranularityOptions& opts = {}) {
  if (!tree.is_leaf(target_leaf) || target_leaf == tree.root())
    throw Error(ErrorCode::InvalidArgument, "target is not a leaf");
  const auto target_path = tree.path_to(target_leaf);
  const auto target_names = tree.names_of(target_path);
  for (std::size_t q = 0; q < holdout.size(); ++q)
    if (holdout.taxonomy_paths[q] != target_names)
      throw Error(ErrorCode::InvalidArgument, "holdout query " + std::to_string(holdout.ids[q]) +
                                                  " is not labeled with the target path");

  std::vector<MemoryEntry> pool;
  std::vector<EntryId> pool_ids;
  for (std::size_t r = 0; r < memory.size(); ++r)
    if (memory.taxonomy_path_at(r) == target_names) {
      pool.push_back(memory.entry(r));
      pool_ids.push_back(memory.id_at(r));
    }
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::mt19937_64 rng(opts.seed);
  std::shuffle(pool.begin(), pool.end(), rng);

  VisualMemory base = memory;
  base.remove(pool_ids);

  HierarchyOptions hopts = opts.hierarchy;
  hopts.skip_empty = true;
  std::vector<GranularityStep> steps;
  for (std::size_t requested : opts.ladder) {
    GranularityStep step;
    step.requested = requested;
    step.exemplars = std::min(requested, pool.size());
    VisualMemory mem = base;
    mem.insert(std::vector<MemoryEntry>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(step.exemplars)));

    const std::uint32_t levels = tree.levels();
    std::vector<std::size_t> hits(levels, 0);
    HierarchyPredictor predictor(mem, tree, hopts);
    for (const auto& q : holdout.vectors) {
      const auto path = predictor.predict(q);
      for (std::uint32_t l = 0; l < levels && l < path.size(); ++l)
        if (path[l] == target_path[l]) ++hits[l];
    }
    // Baseline: always answer the node holding the most memory entries at
    // that level (first in node order on ties).
    std::vector<std::size_t> per_node(tree.size(), 0);
    for (NodeId n = 1; n < tree.size(); ++n) per_node[n] = predictor.examples(n).size();
    step.level_accuracy.resize(levels);
    step.baseline_accuracy.resize(levels);
    for (std::uint32_t l = 0; l < levels; ++l) {
      NodeId majority = 0;
      std::size_t most = 0;
      for (NodeId n = 1; n < tree.size(); ++n)
        if (tree.node(n).depth == l + 1 && per_node[n] > most) {
          most = per_node[n];
          majority = n;
        }
      const double total = static_cast<double>(holdout.size());
      step.level_accuracy[l] = holdout.size() ? static_cast<double>(hits[l]) / total : 0.0;
      step.baseline_accuracy[l] = majority == target_path[l] ? 1.0 : 0.0;
    }
    steps.push_back(std::move(step));
  }
  return steps;
}

}  // namespace vismem
