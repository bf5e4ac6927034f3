#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "vismem/core.hpp"
#include "vismem/parallel.hpp"
#include "vismem/store.hpp"

namespace vismem {

struct Neighbor {
  EntryId id = 0;
  LabelId label = 0;
  double distance = 0.0;
  std::uint32_t rank = 0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Neighbors of one query ordered by (distance, id); rank is the position.
struct NeighborSet {
  std::optional<EntryId> query_id;
  std::vector<Neighbor> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  const Neighbor& operator[](std::size_t i) const { return items[i]; }

  friend bool operator==(const NeighborSet&, const NeighborSet&) = default;
};

namespace detail {

struct Candidate {
  double distance;
  EntryId id;
  std::size_t row;
};

inline bool closer(const Candidate& a, const Candidate& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

/// Keeps the k best candidates seen so far as a max-heap on (distance, id).
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void push(double distance, EntryId id, std::size_t row) {
    Candidate c{distance, id, row};
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (closer(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }

  NeighborSet finish(const VisualMemory& memory) && {
    std::sort_heap(heap_.begin(), heap_.end(), closer);
    NeighborSet out;
    out.items.reserve(heap_.size());
    for (std::size_t i = 0; i < heap_.size(); ++i)
      out.items.push_back({heap_[i].id, memory.label_at(heap_[i].row), heap_[i].distance,
                           static_cast<std::uint32_t>(i)});
    return out;
  }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

inline double row_distance(std::span<const float> query, std::span<const float> row) noexcept {
  const double d = 1.0 - dot(query, row);
  return d < 0.0 ? 0.0 : (d > 2.0 ? 2.0 : d);
}

inline void check_query(const VisualMemory& memory, std::span<const float> query, std::size_t k) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (query.size() != memory.dims())
    throw Error(ErrorCode::DimMismatch, "query has " + std::to_string(query.size()) + " dims, memory has " +
                                            std::to_string(memory.dims()));
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
}

}  // namespace detail

/// Asserts the NeighborSet ordering contract. Compiled in when
/// VISMEM_CHECK_INVARIANTS is defined (test builds).
inline void check_neighbor_order(const NeighborSet& set) {
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    if (set.items[i].rank != i) throw Error(ErrorCode::InvalidArgument, "rank gap in NeighborSet");
    if (i > 0) {
      const auto& a = set.items[i - 1];
      const auto& b = set.items[i];
      if (a.distance > b.distance || (a.distance == b.distance && a.id >= b.id))
        throw Error(ErrorCode::InvalidArgument, "NeighborSet not ordered by (distance, id)");
    }
  }
}

inline void debug_check(const NeighborSet& set) {
#ifdef VISMEM_CHECK_INVARIANTS
  check_neighbor_order(set);
#else
  (void)set;
#endif
}

/// The k entries closest to query by cosine distance, ties to the smaller id.
/// k is clamped to the memory size.
inline NeighborSet exact_search(const VisualMemory& memory, std::span<const float> query, std::size_t k) {
  detail::check_query(memory, query, k);
  k = std::min(k, memory.size());
  detail::TopK top(k);
  for (std::size_t r = 0; r < memory.size(); ++r)
    top.push(detail::row_distance(query, memory.row(r)), memory.id_at(r), r);
  auto out = std::move(top).finish(memory);
  debug_check(out);
  return out;
}

inline NeighborSet exact_search(const VisualMemory& memory, const EmbeddingVector& query, std::size_t k) {
  return exact_search(memory, query.values(), k);
}

struct BatchOptions {
  std::size_t block = 256;  // queries per block
  std::size_t row_block = 1024;
  unsigned threads = 0;
};

/// exact_search for many queries at once. Queries are processed in blocks;
/// within a block every memory tile is scored against all block queries
/// before moving on, so each row tile is loaded once per block. Results are
/// identical to calling exact_search per query.
inline std::vector<NeighborSet> exact_search_batch(const VisualMemory& memory,
                                                   const std::vector<EmbeddingVector>& queries, std::size_t k,
                                                   const BatchOptions& opts = {}) {
  if (queries.empty()) return {};
  for (const auto& q : queries) detail::check_query(memory, q.values(), k);
  k = std::min(k, memory.size());
  const std::size_t block = std::max<std::size_t>(1, opts.block);
  const std::size_t row_block = std::max<std::size_t>(1, opts.row_block);
  const std::size_t nblocks = (queries.size() + block - 1) / block;
  std::vector<NeighborSet> results(queries.size());
  parallel_for(nblocks, opts.threads, [&](std::size_t b) {
    const std::size_t q0 = b * block;
    const std::size_t q1 = std::min(queries.size(), q0 + block);
    std::vector<detail::TopK> tops;
    tops.reserve(q1 - q0);
    for (std::size_t q = q0; q < q1; ++q) tops.emplace_back(k);
    for (std::size_t r0 = 0; r0 < memory.size(); r0 += row_block) {
      const std::size_t r1 = std::min(memory.size(), r0 + row_block);
      for (std::size_t q = q0; q < q1; ++q) {
        auto qv = queries[q].values();
        auto& top = tops[q - q0];
        for (std::size_t r = r0; r < r1; ++r) top.push(detail::row_distance(qv, memory.row(r)), memory.id_at(r), r);
      }
    }
    for (std::size_t q = q0; q < q1; ++q) {
      results[q] = std::move(tops[q - q0]).finish(memory);
      debug_check(results[q]);
    }
  });
  return results;
}

/// Inverted-file index: spherical k-means centroids plus the entry ids that
/// fall in each partition. Bound to the memory generation it was built on.
struct AnnIndex {
  std::uint32_t dims = 0;
  std::uint32_t partitions = 0;
  std::uint32_t iterations = 25;
  std::uint64_t seed = 0;
  std::uint64_t generation = 0;
  std::uint64_t entry_count = 0;
  std::vector<float> centroids;              // partitions * dims, unit rows
  std::vector<std::vector<EntryId>> members;  // per partition, ascending row order

  std::span<const float> centroid(std::size_t p) const { return {centroids.data() + p * dims, dims}; }

  friend bool operator==(const AnnIndex&, const AnnIndex&) = default;
};

struct IndexOptions {
  std::optional<std::uint32_t> partitions;  // default ceil(sqrt(count))
  std::uint64_t seed = 0;
  std::uint32_t iterations = 25;
  // k-means is trained on at most this many points per centroid; every
  // entry is still assigned at the end.
  std::uint32_t train_points_per_centroid = 64;
  unsigned threads = 0;
};

inline std::uint32_t default_partitions(std::size_t count) {
  return static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(count))));
}

inline std::uint32_t default_probes(std::uint32_t partitions) {
  return std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::ceil(0.1 * partitions)));
}

namespace detail {

inline std::uint32_t nearest_centroid(const float* v, const std::vector<float>& centroids, std::size_t p,
                                      std::size_t dims) {
  std::uint32_t best = 0;
  float best_sim = -std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < p; ++c) {
    const float s = fast_dot(v, centroids.data() + c * dims, dims);
    if (s > best_sim) {
      best_sim = s;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

}  // namespace detail

inline AnnIndex build_index(const VisualMemory& memory, const IndexOptions& opts = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "cannot index an empty memory");
  const std::size_t n = memory.size();
  const std::size_t dims = memory.dims();
  std::uint32_t p = opts.partitions.value_or(default_partitions(n));
  if (p == 0) throw Error(ErrorCode::InvalidArgument, "partitions must be >= 1");
  p = static_cast<std::uint32_t>(std::min<std::size_t>(p, n));

  AnnIndex index;
  index.dims = memory.dims();
  index.partitions = p;
  index.iterations = opts.iterations;
  index.seed = opts.seed;
  index.generation = memory.generation();
  index.entry_count = n;

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t train_n =
      std::min<std::size_t>(n, std::max<std::size_t>(p, std::size_t{opts.train_points_per_centroid} * p));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_n));
  std::sort(train.begin(), train.end());

  index.centroids.resize(p * dims);
  for (std::size_t c = 0; c < p; ++c) {
    auto src = memory.row(order[c]);
    std::copy(src.begin(), src.end(), index.centroids.begin() + static_cast<std::ptrdiff_t>(c * dims));
  }

  std::vector<std::uint32_t> assign(train_n);
  for (std::uint32_t it = 0; it < opts.iterations; ++it) {
    parallel_for(train_n, opts.threads, [&](std::size_t i) {
      assign[i] = detail::nearest_centroid(memory.row(train[i]).data(), index.centroids, p, dims);
    });
    std::vector<double> sums(p * dims, 0.0);
    std::vector<std::size_t> counts(p, 0);
    for (std::size_t i = 0; i < train_n; ++i) {
      auto row = memory.row(train[i]);
      double* s = sums.data() + assign[i] * dims;
      for (std::size_t d = 0; d < dims; ++d) s[d] += row[d];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < p; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      const double* s = sums.data() + c * dims;
      double sq = 0.0;
      for (std::size_t d = 0; d < dims; ++d) sq += s[d] * s[d];
      const double norm = std::sqrt(sq);
      if (norm < kZeroNormThreshold) continue;
      for (std::size_t d = 0; d < dims; ++d) index.centroids[c * dims + d] = static_cast<float>(s[d] / norm);
    }
  }

  std::vector<std::uint32_t> final_assign(n);
  parallel_for(n, opts.threads, [&](std::size_t r) {
    final_assign[r] = detail::nearest_centroid(memory.row(r).data(), index.centroids, p, dims);
  });
  index.members.assign(p, {});
  for (std::size_t r = 0; r < n; ++r) index.members[final_assign[r]].push_back(memory.id_at(r));
  return index;
}

/// Probes the `probes` partitions whose centroids are closest to the query
/// (ties to the lower partition number) and exact-scores their members.
inline NeighborSet ann_search(const AnnIndex& index, const VisualMemory& memory, std::span<const float> query,
                              std::size_t k, std::optional<std::uint32_t> probes = std::nullopt) {
  detail::check_query(memory, query, k);
  if (index.generation != memory.generation() || index.entry_count != memory.size() || index.dims != memory.dims())
    throw Error(ErrorCode::StaleIndex, "index built at generation " + std::to_string(index.generation) +
                                           ", memory is at " + std::to_string(memory.generation()));
  const std::uint32_t np = std::clamp<std::uint32_t>(probes.value_or(default_probes(index.partitions)), 1,
                                                     index.partitions);
  std::vector<std::pair<double, std::uint32_t>> order(index.partitions);
  for (std::uint32_t c = 0; c < index.partitions; ++c) order[c] = {1.0 - dot(query, index.centroid(c)), c};
  std::partial_sort(order.begin(), order.begin() + np, order.end());

  k = std::min(k, memory.size());
  detail::TopK top(k);
  for (std::uint32_t i = 0; i < np; ++i) {
    for (EntryId id : index.members[order[i].second]) {
      const std::size_t r = *memory.row_of(id);
      top.push(detail::row_distance(query, memory.row(r)), id, r);
    }
  }
  auto out = std::move(top).finish(memory);
  debug_check(out);
  return out;
}

inline NeighborSet ann_search(const AnnIndex& index, const VisualMemory& memory, const EmbeddingVector& query,
                              std::size_t k, std::optional<std::uint32_t> probes = std::nullopt) {
  return ann_search(index, memory, query.values(), k, probes);
}

/// |ann ∩ exact| / |exact| over ids.
inline double recall(const NeighborSet& approx, const NeighborSet& exact) {
  if (exact.empty()) return 1.0;
  std::size_t hits = 0;
  for (const auto& e : exact.items)
    for (const auto& a : approx.items)
      if (a.id == e.id) {
        ++hits;
        break;
      }
  return static_cast<double>(hits) / static_cast<double>(exact.size());
}

// index.bin: "VIDX" | u32 version | u32 dims | u32 partitions | u32 iterations
//            | u64 seed | u64 generation | u64 entry_count
//            | partitions*dims f32 centroids | per partition: u64 n, n*i64 ids
inline constexpr std::array<char, 4> kIndexMagic = {'V', 'I', 'D', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;

inline void save_index(const AnnIndex& index, const fs::path& path) {
  auto out = detail::open_for_write(path, true);
  out.write(kIndexMagic.data(), 4);
  detail::put_u32(out, kIndexVersion);
  detail::put_u32(out, index.dims);
  detail::put_u32(out, index.partitions);
  detail::put_u32(out, index.iterations);
  detail::put_u64(out, index.seed);
  detail::put_u64(out, index.generation);
  detail::put_u64(out, index.entry_count);
  detail::put_f32_block(out, index.centroids);
  for (const auto& m : index.members) {
    detail::put_u64(out, m.size());
    for (EntryId id : m) detail::put_u64(out, static_cast<std::uint64_t>(id));
  }
  if (!out) throw Error(ErrorCode::IOError, "write failed: " + path.string());
}

inline AnnIndex load_index(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw Error(ErrorCode::FormatError, "index.bin truncated at byte " + std::to_string(pos));
  };
  auto u32 = [&] {
    need(4);
    auto v = detail::get_u32(bytes.data() + pos);
    pos += 4;
    return v;
  };
  auto u64 = [&] {
    need(8);
    auto v = detail::get_u64(bytes.data() + pos);
    pos += 8;
    return v;
  };
  need(4);
  if (!std::equal(kIndexMagic.begin(), kIndexMagic.end(), bytes.begin()))
    throw Error(ErrorCode::FormatError, "index.bin: bad magic");
  pos = 4;
  if (u32() != kIndexVersion) throw Error(ErrorCode::FormatError, "index.bin: unsupported version");
  AnnIndex index;
  index.dims = u32();
  index.partitions = u32();
  index.iterations = u32();
  index.seed = u64();
  index.generation = u64();
  index.entry_count = u64();
  const std::size_t nc = std::size_t{index.partitions} * index.dims;
  need(nc * 4);
  index.centroids.resize(nc);
  detail::get_f32_block(bytes.data() + pos, nc, index.centroids.data());
  pos += nc * 4;
  index.members.resize(index.partitions);
  std::uint64_t total = 0;
  for (auto& m : index.members) {
    const std::uint64_t n = u64();
    need(n * 8);
    m.resize(n);
    for (auto& id : m) id = static_cast<EntryId>(u64());
    total += n;
  }
  if (pos != bytes.size() || total != index.entry_count)
    throw Error(ErrorCode::FormatError, "index.bin: member lists disagree with header");
  return index;
}

}  // namespace vismem
