#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vismem/pack.hpp"

namespace vismem {

/// Synthetic stand-in for encoder features: Gaussian clusters on the unit
/// sphere, one per class.
struct FixtureSpec {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t dims = 64;
  double spread = 0.05;        // per-component std of the in-class noise
  double noise = 0.0;          // fraction of memory labels reassigned
  std::size_t depth = 0;       // taxonomy levels; 0 = flat labels
  std::size_t fanout = 0;      // children per taxonomy node
  double level_scale = 0.5;    // child-center offset shrink per level
  std::size_t queries_per_class = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (per_class == 0 || dims == 0) throw Error(ErrorCode::InvalidSpec, "per_class and dims must be >= 1");
    if (!(noise >= 0.0 && noise < 1.0)) throw Error(ErrorCode::InvalidSpec, "noise must lie in [0, 1)");
    if (!(spread >= 0.0)) throw Error(ErrorCode::InvalidSpec, "spread must be >= 0");
    if ((depth == 0) != (fanout == 0)) throw Error(ErrorCode::InvalidSpec, "depth and fanout go together");
    if (depth == 0 && classes == 0) throw Error(ErrorCode::InvalidSpec, "classes must be >= 1");
    if (depth > 0 && classes != 0 && classes != leaf_count())
      throw Error(ErrorCode::InvalidSpec, "classes must equal fanout^depth (" + std::to_string(leaf_count()) +
                                              ") when a taxonomy is requested");
    if (noise > 0.0 && class_count() < 2) throw Error(ErrorCode::InvalidSpec, "label noise needs >= 2 classes");
  }

  std::size_t leaf_count() const {
    std::size_t n = 1;
    for (std::size_t l = 0; l < depth; ++l) n *= fanout;
    return n;
  }
  std::size_t class_count() const { return depth > 0 ? leaf_count() : classes; }
};

struct Fixture {
  Pack memory;
  Pack queries;
  std::vector<EntryId> noised;            // memory ids whose label was reassigned
  std::vector<std::string> taxonomy;      // one `/`-joined path per leaf
  std::vector<std::vector<float>> centers;  // unit class centers
};

namespace detail {

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dims) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dims);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = gauss(rng);
      sq += x * x;
    }
  } while (sq < 1e-12);
  const double norm = std::sqrt(sq);
  std::vector<float> out(dims);
  for (std::size_t i = 0; i < dims; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline std::vector<float> jitter(const std::vector<float>& center, double spread, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, spread > 0.0 ? spread : 1.0);
  std::vector<double> v(center.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = center[i] + (spread > 0.0 ? gauss(rng) : 0.0);
    sq += v[i] * v[i];
  }
  const double norm = std::sqrt(sq);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline std::string node_name(std::size_t level, std::size_t index) {
  return "L" + std::to_string(level) + "_" + std::to_string(index);
}

}  // namespace detail

/// Deterministic per seed. Centers, memory samples, query samples and label
/// noise draw from separate streams, so e.g. changing queries_per_class
/// leaves the memory pack unchanged.
inline Fixture generate_fixture(const FixtureSpec& spec) {
  spec.validate();
  Fixture fx;
  const std::size_t classes = spec.class_count();
  const std::size_t dims = spec.dims;
  std::mt19937_64 center_rng(spec.seed);
  std::vector<std::vector<std::string>> paths(classes);
  std::vector<std::string> label_names(classes);

  if (spec.depth == 0) {
    for (std::size_t c = 0; c < classes; ++c) {
      fx.centers.push_back(detail::random_unit(center_rng, dims));
      char buf[32];
      std::snprintf(buf, sizeof buf, "class_%04zu", c);
      label_names[c] = buf;
    }
  } else {
    // Level-l node centers: normalize(parent + level_scale^(l-1) * u).
    std::vector<std::vector<float>> level = {std::vector<float>(dims, 0.0f)};
    std::vector<std::vector<std::string>> level_paths = {{}};
    for (std::size_t l = 1; l <= spec.depth; ++l) {
      const double scale = std::pow(spec.level_scale, static_cast<double>(l - 1));
      std::vector<std::vector<float>> next;
      std::vector<std::vector<std::string>> next_paths;
      for (std::size_t p = 0; p < level.size(); ++p) {
        for (std::size_t f = 0; f < spec.fanout; ++f) {
          const auto u = detail::random_unit(center_rng, dims);
          std::vector<double> raw(dims);
          double sq = 0.0;
          for (std::size_t i = 0; i < dims; ++i) {
            raw[i] = level[p][i] + scale * u[i];
            sq += raw[i] * raw[i];
          }
          std::vector<float> c(dims);
          for (std::size_t i = 0; i < dims; ++i) c[i] = static_cast<float>(raw[i] / std::sqrt(sq));
          next.push_back(std::move(c));
          auto path = level_paths[p];
          path.push_back(detail::node_name(l, next_paths.size()));
          next_paths.push_back(std::move(path));
        }
      }
      level = std::move(next);
      level_paths = std::move(next_paths);
    }
    fx.centers = std::move(level);
    paths = std::move(level_paths);
    for (std::size_t c = 0; c < classes; ++c) {
      label_names[c] = paths[c].back();
      std::string line;
      for (std::size_t i = 0; i < paths[c].size(); ++i) line += (i ? "/" : "") + paths[c][i];
      fx.taxonomy.push_back(line);
    }
  }

  auto fill = [&](Pack& pack, std::size_t per_class, std::uint64_t stream, EntryId first_id) {
    std::mt19937_64 rng(spec.seed ^ stream);
    pack.dims = static_cast<std::uint32_t>(dims);
    pack.rows.reserve(classes * per_class * dims);
    EntryId id = first_id;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0; i < per_class; ++i) {
        const auto v = detail::jitter(fx.centers[c], spec.spread, rng);
        pack.rows.insert(pack.rows.end(), v.begin(), v.end());
        pack.records.push_back({id++, label_names[c], paths[c], std::nullopt, std::nullopt});
      }
  };
  fill(fx.memory, spec.per_class, 0x5A17C0DEull, 0);
  fill(fx.queries, spec.queries_per_class, 0x0E7A11E5ull, static_cast<EntryId>(classes * spec.per_class));

  const std::size_t n = fx.memory.count();
  const auto flips = static_cast<std::size_t>(std::llround(spec.noise * static_cast<double>(n)));
  if (flips > 0) {
    std::mt19937_64 rng(spec.seed ^ 0xBADC0FFEEull);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    for (std::size_t i = 0; i < flips; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(flips);
    std::sort(rows.begin(), rows.end());
    std::uniform_int_distribution<std::size_t> other(1, classes - 1);
    for (std::size_t r : rows) {
      const std::size_t original = r / spec.per_class;
      const std::size_t relabel = (original + other(rng)) % classes;
      fx.memory.records[r].label_name = label_names[relabel];
      fx.memory.records[r].taxonomy_path = paths[relabel];
      fx.noised.push_back(fx.memory.records[r].id);
    }
  }
  fx.memory.manifest = {{"generator", "vismem-fixture"}};
  return fx;
}

}  // namespace vismem
