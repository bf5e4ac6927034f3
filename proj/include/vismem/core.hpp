#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vismem/error.hpp"

namespace vismem {

using EntryId = std::int64_t;
using LabelId = std::int32_t;

inline constexpr double kZeroNormThreshold = 1e-12;

struct Label {
  LabelId id = 0;
  std::string name;

  friend bool operator==(const Label&, const Label&) = default;
};

/// Dot product of two float rows with 64-bit accumulation. Four independent
/// partial sums in a fixed order: deterministic for a given dims.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

/// Float-precision dot with eight lanes. Only used where the result steers a
/// heuristic (centroid assignment), never for reported distances.
inline float fast_dot(const float* a, const float* b, std::size_t n) noexcept {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

/// A feature vector with unit L2 norm. Only constructible through normalize()
/// or from data already known to be unit-norm (memory rows).
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  std::span<const float> values() const noexcept { return values_; }
  std::size_t dims() const noexcept { return values_.size(); }
  float operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Wraps a row that is already unit-norm (e.g. read back from a memory).
  static EmbeddingVector from_unit(std::span<const float> row) {
    EmbeddingVector v;
    v.values_.assign(row.begin(), row.end());
    return v;
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<float> values_;
  friend EmbeddingVector normalize(std::span<const float> raw);
};

/// Scales raw to unit L2 norm. The norm is computed in double and the result
/// rounded once to float.
inline EmbeddingVector normalize(std::span<const float> raw) {
  if (raw.empty()) throw Error(ErrorCode::InvalidArgument, "vector has zero dimensions");
  double sq = 0.0;
  for (float x : raw) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "vector has a NaN/Inf component");
    sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (norm < kZeroNormThreshold) throw Error(ErrorCode::ZeroVector, "vector norm below 1e-12");
  EmbeddingVector v;
  v.values_.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) v.values_[i] = static_cast<float>(raw[i] / norm);
  return v;
}

inline EmbeddingVector normalize(const std::vector<float>& raw) {
  return normalize(std::span<const float>(raw));
}

/// 1 - <a, b>, clamped to [0, 2] to absorb float rounding on unit vectors.
inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::DimMismatch,
                "dims " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double d = 1.0 - dot(a, b);
  return d < 0.0 ? 0.0 : (d > 2.0 ? 2.0 : d);
}

inline double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_distance(a.values(), b.values());
}

}  // namespace vismem
