#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vismem/core.hpp"
#include "vismem/pack.hpp"

namespace vismem {

/// One row of a memory, materialized. Inside VisualMemory rows are stored
/// column-wise; this is the exchange form for insert() and accessors.
struct MemoryEntry {
  EntryId id = 0;
  EmbeddingVector vector;
  std::string label;
  std::vector<std::string> taxonomy_path;
  std::uint32_t wrong_votes = 0;
  double gamma = 1.0;
};

/// Labeled unit vectors plus per-entry reliability. Rows keep insertion
/// order; ids are unique. Every insert/remove bumps generation(), which
/// indexes and reliability reports use to detect staleness.
///
/// Value type. Const access from many threads is safe; a mutation must not
/// overlap any other access (readers-or-one-writer).
class VisualMemory {
 public:
  VisualMemory() = default;
  explicit VisualMemory(std::uint32_t dims) : dims_(dims) {
    if (dims == 0) throw Error(ErrorCode::InvalidArgument, "dims must be positive");
  }

  std::uint32_t dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::uint64_t generation() const noexcept { return generation_; }
  const std::string& created_at() const noexcept { return created_at_; }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dims_, dims_}; }
  std::span<const float> data() const noexcept { return data_; }
  EntryId id_at(std::size_t r) const { return ids_[r]; }
  LabelId label_at(std::size_t r) const { return labels_[r]; }
  std::span<const EntryId> ids() const noexcept { return ids_; }
  std::span<const LabelId> labels() const noexcept { return labels_; }
  std::uint32_t wrong_votes_at(std::size_t r) const { return wrong_votes_[r]; }
  double gamma_at(std::size_t r) const { return gamma_[r]; }
  const std::vector<std::string>& taxonomy_path_at(std::size_t r) const { return paths_[r]; }

  std::optional<std::size_t> row_of(EntryId id) const {
    auto it = row_by_id_.find(id);
    if (it == row_by_id_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(EntryId id) const { return row_by_id_.count(id) != 0; }

  double gamma_of(EntryId id) const {
    auto r = row_of(id);
    if (!r) throw Error(ErrorCode::UnknownId, "id " + std::to_string(id));
    return gamma_[*r];
  }

  // Label table: append-only, ids are dense 0..label_count()-1.
  std::size_t label_count() const noexcept { return label_names_.size(); }
  const std::string& label_name(LabelId id) const { return label_names_.at(static_cast<std::size_t>(id)); }
  Label label(LabelId id) const { return {id, label_name(id)}; }
  std::optional<LabelId> find_label(const std::string& name) const {
    auto it = label_by_name_.find(name);
    if (it == label_by_name_.end()) return std::nullopt;
    return it->second;
  }
  LabelId register_label(const std::string& name) {
    if (auto id = find_label(name)) return *id;
    const auto id = static_cast<LabelId>(label_names_.size());
    label_names_.push_back(name);
    label_by_name_.emplace(name, id);
    return id;
  }

  MemoryEntry entry(std::size_t r) const {
    return {ids_[r], EmbeddingVector::from_unit(row(r)), label_names_[labels_[r]], paths_[r],
            wrong_votes_[r], gamma_[r]};
  }

  /// Adds entries. All-or-nothing: ids and dims are checked before any row
  /// is appended. New labels are registered in first-seen order.
  void insert(const std::vector<MemoryEntry>& entries) {
    if (entries.empty()) return;
    std::unordered_set<EntryId> batch;
    for (const auto& e : entries) {
      if (e.vector.dims() != dims_)
        throw Error(ErrorCode::DimMismatch, "entry " + std::to_string(e.id) + " has " +
                                                std::to_string(e.vector.dims()) + " dims, memory has " +
                                                std::to_string(dims_));
      if (contains(e.id) || !batch.insert(e.id).second)
        throw Error(ErrorCode::DuplicateId, "id " + std::to_string(e.id));
      check_reliability(e.wrong_votes, e.gamma, e.id);
    }
    for (const auto& e : entries) append_row(e.id, e.vector.values(), register_label(e.label), e.taxonomy_path,
                                             e.wrong_votes, e.gamma);
    ++generation_;
  }

  /// Physically erases the given ids. Throws UnknownId (and changes nothing)
  /// if any id is absent. The label table is left intact.
  void remove(const std::vector<EntryId>& ids) {
    if (ids.empty()) return;
    std::unordered_set<EntryId> doomed;
    for (EntryId id : ids) {
      if (!contains(id)) throw Error(ErrorCode::UnknownId, "id " + std::to_string(id));
      doomed.insert(id);
    }
    std::size_t out = 0;
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      if (doomed.count(ids_[r])) continue;
      if (out != r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * dims_), dims_,
                    data_.begin() + static_cast<std::ptrdiff_t>(out * dims_));
        ids_[out] = ids_[r];
        labels_[out] = labels_[r];
        paths_[out] = std::move(paths_[r]);
        wrong_votes_[out] = wrong_votes_[r];
        gamma_[out] = gamma_[r];
      }
      ++out;
    }
    data_.resize(out * dims_);
    ids_.resize(out);
    labels_.resize(out);
    paths_.resize(out);
    wrong_votes_.resize(out);
    gamma_.resize(out);
    reindex();
    ++generation_;
  }

  /// Sets the per-entry wrong-vote count and reliability. Does not change
  /// search results, so the generation is left alone.
  void set_reliability(std::size_t r, std::uint32_t wrong_votes, double gamma) {
    check_reliability(wrong_votes, gamma, ids_.at(r));
    wrong_votes_[r] = wrong_votes;
    gamma_[r] = gamma;
  }

  /// Builds a memory from a raw embedding pack, normalizing every row.
  /// Labels are registered in lexicographic name order, so two packs with
  /// the same label set agree on label ids regardless of row order.
  static VisualMemory build(const Pack& pack) {
    if (pack.count() == 0) throw Error(ErrorCode::FormatError, "pack holds no rows");
    VisualMemory m(pack.dims);
    std::set<std::string> names;
    for (const auto& r : pack.records) names.insert(r.label_name);
    for (const auto& n : names) m.register_label(n);
    m.reserve(pack.count());
    for (std::size_t i = 0; i < pack.count(); ++i) {
      const auto& rec = pack.records[i];
      if (m.contains(rec.id)) throw Error(ErrorCode::DuplicateId, "id " + std::to_string(rec.id));
      EmbeddingVector v;
      try {
        v = normalize(pack.row(i));
      } catch (const Error& e) {
        throw Error(e.code(), "row " + std::to_string(i) + " (id " + std::to_string(rec.id) + "): " + e.what());
      }
      const std::uint32_t wv = rec.wrong_votes.value_or(0);
      const double g = rec.gamma.value_or(1.0);
      check_reliability(wv, g, rec.id);
      m.append_row(rec.id, v.values(), *m.find_label(rec.label_name), rec.taxonomy_path, wv, g);
    }
    m.created_at_ = creation_timestamp();
    return m;
  }

  /// Restores a memory written by save(): label table, generation and
  /// reliability are taken verbatim; rows are only re-normalized if their
  /// norm drifted by more than 1e-5.
  static VisualMemory load(const fs::path& dir) {
    const Pack pack = read_pack(dir);
    VisualMemory m(pack.dims);
    if (auto it = pack.manifest.find("labels"); it != pack.manifest.end() && it->is_array())
      for (const auto& n : *it) m.register_label(n.get<std::string>());
    else {
      std::set<std::string> names;
      for (const auto& r : pack.records) names.insert(r.label_name);
      for (const auto& n : names) m.register_label(n);
    }
    m.reserve(pack.count());
    for (std::size_t i = 0; i < pack.count(); ++i) {
      const auto& rec = pack.records[i];
      if (m.contains(rec.id)) throw Error(ErrorCode::FormatError, "duplicate id " + std::to_string(rec.id));
      const auto label = m.find_label(rec.label_name);
      if (!label) throw Error(ErrorCode::FormatError, "label '" + rec.label_name + "' missing from manifest labels");
      auto raw = pack.row(i);
      const double norm = std::sqrt(dot(raw, raw));
      std::vector<float> stored(raw.begin(), raw.end());
      if (std::abs(norm - 1.0) > 1e-5) {
        auto v = normalize(raw);
        stored.assign(v.values().begin(), v.values().end());
      }
      const std::uint32_t wv = rec.wrong_votes.value_or(0);
      const double g = rec.gamma.value_or(1.0);
      check_reliability(wv, g, rec.id);
      m.append_row(rec.id, stored, *label, rec.taxonomy_path, wv, g);
    }
    if (auto it = pack.manifest.find("generation"); it != pack.manifest.end() && it->is_number_unsigned())
      m.generation_ = it->get<std::uint64_t>();
    if (auto it = pack.manifest.find("created_at"); it != pack.manifest.end() && it->is_string())
      m.created_at_ = it->get<std::string>();
    return m;
  }

  Pack to_pack() const {
    Pack pack;
    pack.dims = dims_;
    pack.rows = data_;
    pack.records.reserve(size());
    for (std::size_t r = 0; r < size(); ++r) {
      PackRecord rec{ids_[r], label_names_[labels_[r]], paths_[r], std::nullopt, std::nullopt};
      if (wrong_votes_[r] != 0 || gamma_[r] != 1.0) {
        rec.wrong_votes = wrong_votes_[r];
        rec.gamma = gamma_[r];
      }
      pack.records.push_back(std::move(rec));
    }
    return pack;
  }

  void save(const fs::path& dir) const {
    json extra = {{"label_count", label_count()},
                  {"labels", label_names_},
                  {"generation", generation_},
                  {"created_at", created_at_.empty() ? creation_timestamp() : created_at_}};
    write_pack(dir, to_pack(), extra);
  }

  /// Keeps min(per_class, class size) entries of every label, chosen by a
  /// seeded partial shuffle over the class's ids sorted ascending. Classes
  /// at or under per_class are kept whole, which makes this idempotent.
  VisualMemory subsample(std::size_t per_class, std::uint64_t seed) const {
    if (per_class == 0) throw Error(ErrorCode::InvalidArgument, "per_class must be >= 1");
    std::vector<std::vector<EntryId>> by_label(label_count());
    for (std::size_t r = 0; r < size(); ++r) by_label[labels_[r]].push_back(ids_[r]);
    std::mt19937_64 rng(seed);
    std::vector<EntryId> drop;
    for (auto& ids : by_label) {
      if (ids.size() <= per_class) continue;
      std::sort(ids.begin(), ids.end());
      for (std::size_t i = 0; i < per_class; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
        std::swap(ids[i], ids[pick(rng)]);
      }
      drop.insert(drop.end(), ids.begin() + static_cast<std::ptrdiff_t>(per_class), ids.end());
    }
    VisualMemory out = *this;
    out.remove(drop);
    return out;
  }

 private:
  static void check_reliability(std::uint32_t wrong_votes, double gamma, EntryId id) {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "gamma outside (0, 1] for id " + std::to_string(id));
    if (wrong_votes == 0 && gamma != 1.0)
      throw Error(ErrorCode::InvalidArgument, "gamma must be 1 when v = 0 (id " + std::to_string(id) + ")");
  }

  void reserve(std::size_t n) {
    data_.reserve(n * dims_);
    ids_.reserve(n);
    labels_.reserve(n);
    paths_.reserve(n);
    wrong_votes_.reserve(n);
    gamma_.reserve(n);
  }

  void append_row(EntryId id, std::span<const float> values, LabelId label, const std::vector<std::string>& path,
                  std::uint32_t wrong_votes, double gamma) {
    row_by_id_.emplace(id, ids_.size());
    data_.insert(data_.end(), values.begin(), values.end());
    ids_.push_back(id);
    labels_.push_back(label);
    paths_.push_back(path);
    wrong_votes_.push_back(wrong_votes);
    gamma_.push_back(gamma);
  }

  void reindex() {
    row_by_id_.clear();
    row_by_id_.reserve(ids_.size());
    for (std::size_t r = 0; r < ids_.size(); ++r) row_by_id_.emplace(ids_[r], r);
  }

  std::uint32_t dims_ = 0;
  std::uint64_t generation_ = 0;
  std::string created_at_;
  std::vector<float> data_;
  std::vector<EntryId> ids_;
  std::vector<LabelId> labels_;
  std::vector<std::vector<std::string>> paths_;
  std::vector<std::uint32_t> wrong_votes_;
  std::vector<double> gamma_;
  std::unordered_map<EntryId, std::size_t> row_by_id_;
  std::vector<std::string> label_names_;
  std::unordered_map<std::string, LabelId> label_by_name_;
};

/// Entries of a pack as normalized MemoryEntry values, ready for insert().
inline std::vector<MemoryEntry> entries_from_pack(const Pack& pack) {
  std::vector<MemoryEntry> out;
  out.reserve(pack.count());
  for (std::size_t i = 0; i < pack.count(); ++i) {
    const auto& rec = pack.records[i];
    out.push_back({rec.id, normalize(pack.row(i)), rec.label_name, rec.taxonomy_path, rec.wrong_votes.value_or(0),
                   rec.gamma.value_or(1.0)});
  }
  return out;
}

}  // namespace vismem
