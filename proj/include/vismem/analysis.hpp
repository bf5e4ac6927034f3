#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vismem/classify.hpp"

namespace vismem {

enum class FitModel {
  LogIndex,  // y = a + b ln(i + 1)
  LogLog,    // log10 y = m log10 x + q
};

struct CurveFit {
  FitModel model = FitModel::LogLog;
  double slope = 0.0;      // b or m
  double intercept = 0.0;  // a or q
  double rss = 0.0;        // in the fitted (transformed) space
};

/// Ordinary least squares line through (x, y). Sums are taken over points
/// sorted by (x, y) so the result does not depend on input order.
inline std::pair<double, double> least_squares_line(std::vector<std::pair<double, double>> pts, double* rss) {
  if (pts.size() < 2) throw Error(ErrorCode::DegenerateFit, "need at least two points");
  std::sort(pts.begin(), pts.end());
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx <= 0.0) throw Error(ErrorCode::DegenerateFit, "all x values are equal");
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  if (rss) {
    *rss = 0.0;
    for (const auto& [x, y] : pts) {
      const double r = y - (intercept + slope * x);
      *rss += r * r;
    }
  }
  return {slope, intercept};
}

/// log-log line through (memory size, error rate) points.
inline CurveFit fit_scaling(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::pair<double, double>> logged;
  for (const auto& [size, err] : points) {
    if (!(size > 0.0) || !(err > 0.0))
      throw Error(ErrorCode::InvalidArgument, "memory sizes and error rates must be positive");
    logged.emplace_back(std::log10(size), std::log10(err));
  }
  CurveFit fit;
  fit.model = FitModel::LogLog;
  std::tie(fit.slope, fit.intercept) = least_squares_line(std::move(logged), &fit.rss);
  return fit;
}

/// y = a + b ln(i + 1) over a per-index curve.
inline CurveFit fit_log_index(const std::vector<double>& values) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < values.size(); ++i) pts.emplace_back(std::log(static_cast<double>(i) + 1.0), values[i]);
  CurveFit fit;
  fit.model = FitModel::LogIndex;
  std::tie(fit.slope, fit.intercept) = least_squares_line(std::move(pts), &fit.rss);
  return fit;
}

struct ReliabilityCurve {
  std::vector<double> accuracy;  // accuracy[i]: i-th neighbor's label is correct
  CurveFit fit;
};

struct AnalysisOptions {
  bool exclude_self = false;
  SearchOptions search;
};

/// Fraction of queries whose i-th neighbor carries the true label, for each
/// neighbor index i < k_max, plus a + b ln(i + 1) fit.
inline ReliabilityCurve reliability_at_k(const VisualMemory& memory, const QuerySet& queries, std::size_t k_max,
                                         const AnalysisOptions& opts = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (k_max == 0 || k_max > memory.size()) throw Error(ErrorCode::InvalidArgument, "k_max outside [1, memory size]");
  const auto sets = retrieve(memory, queries, k_max, opts.exclude_self, opts.search);
  const auto truth = truth_labels(memory, queries);
  ReliabilityCurve curve;
  curve.accuracy.assign(k_max, 0.0);
  std::vector<std::size_t> hits(k_max, 0);
  for (std::size_t q = 0; q < sets.size(); ++q)
    for (std::size_t i = 0; i < sets[q].size() && i < k_max; ++i)
      if (sets[q][i].label == truth[q]) ++hits[i];
  for (std::size_t i = 0; i < k_max; ++i)
    curve.accuracy[i] = queries.size() ? static_cast<double>(hits[i]) / static_cast<double>(queries.size()) : 0.0;
  if (k_max >= 2) curve.fit = fit_log_index(curve.accuracy);
  return curve;
}

/// hit[k-1] = fraction of queries whose true label appears among the first
/// k neighbor labels.
inline std::vector<double> hit_rate(const VisualMemory& memory, const QuerySet& queries, std::size_t k_max,
                                    const AnalysisOptions& opts = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (k_max == 0 || k_max > memory.size()) throw Error(ErrorCode::InvalidArgument, "k_max outside [1, memory size]");
  const auto sets = retrieve(memory, queries, k_max, opts.exclude_self, opts.search);
  const auto truth = truth_labels(memory, queries);
  std::vector<std::size_t> first_hit(k_max + 1, 0);  // histogram of first correct index
  for (std::size_t q = 0; q < sets.size(); ++q) {
    for (std::size_t i = 0; i < sets[q].size() && i < k_max; ++i)
      if (sets[q][i].label == truth[q]) {
        ++first_hit[i];
        break;
      }
  }
  std::vector<double> rate(k_max);
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < k_max; ++k) {
    cumulative += first_hit[k];
    rate[k] = queries.size() ? static_cast<double>(cumulative) / static_cast<double>(queries.size()) : 0.0;
  }
  return rate;
}

struct CalibrationBin {
  std::uint32_t low = 0;   // inclusive
  std::uint32_t high = 0;  // exclusive, except the last bin
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

struct CalibrationTable {
  std::uint32_t bin_width = 10;
  std::vector<CalibrationBin> bins;
  std::size_t total = 0;
};

/// Bins queries by the plurality-label count among their first 100
/// neighbors and reports per-bin accuracy of `vote` (plurality at k = 100
/// by default).
inline CalibrationTable calibrate(const VisualMemory& memory, const QuerySet& queries, std::uint32_t bin_width = 10,
                                  VoteConfig vote = {VoteScheme::Plurality, 100, 2.0, 0.07, 1.0},
                                  const AnalysisOptions& opts = {}) {
  constexpr std::size_t kDepth = 100;
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  if (memory.size() < kDepth) throw Error(ErrorCode::InvalidArgument, "calibration needs a memory of >= 100 entries");
  if (bin_width == 0) throw Error(ErrorCode::InvalidArgument, "bin width must be >= 1");
  const auto sets = retrieve(memory, queries, std::max(kDepth, vote.k), opts.exclude_self, opts.search);
  const auto truth = truth_labels(memory, queries);
  CalibrationTable table;
  table.bin_width = bin_width;
  const std::uint32_t nbins = (static_cast<std::uint32_t>(kDepth) + bin_width - 1) / bin_width;
  for (std::uint32_t b = 0; b < nbins; ++b)
    table.bins.push_back({b * bin_width, std::min<std::uint32_t>((b + 1) * bin_width, kDepth), 0, 0});
  for (std::size_t q = 0; q < sets.size(); ++q) {
    if (sets[q].empty()) continue;
    const std::uint32_t conf = detail::plurality_count(sets[q], kDepth);
    const std::uint32_t b = std::min(conf / bin_width, nbins - 1);
    ++table.bins[b].count;
    if (classify(sets[q], vote).label == truth[q]) ++table.bins[b].correct;
    ++table.total;
  }
  return table;
}

struct DistanceSummary {
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline DistanceSummary summarize(std::vector<double> v) {
  DistanceSummary s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.min = v.front();
  s.q1 = quantile_sorted(v, 0.25);
  s.median = quantile_sorted(v, 0.5);
  s.q3 = quantile_sorted(v, 0.75);
  s.max = v.back();
  return s;
}

struct OodStats {
  std::string name;
  std::size_t queries = 0;
  std::vector<double> per_query_mean;    // mean distance to first 100 neighbors
  std::vector<double> per_query_median;  // median distance to first 100 neighbors
  DistanceSummary mean_summary;
  DistanceSummary median_summary;
};

/// For each named pack: per-query mean and median distance to the first
/// min(100, memory size) neighbors, with box-plot summaries of both.
inline std::vector<OodStats> ood_distance_stats(const VisualMemory& memory,
                                                const std::vector<std::pair<std::string, QuerySet>>& packs,
                                                const AnalysisOptions& opts = {}) {
  if (memory.empty()) throw Error(ErrorCode::EmptyMemory, "memory holds no entries");
  const std::size_t depth = std::min<std::size_t>(100, memory.size());
  std::vector<OodStats> out;
  for (const auto& [name, queries] : packs) {
    if (queries.size() == 0) throw Error(ErrorCode::InvalidArgument, "query pack '" + name + "' is empty");
    const auto sets = retrieve(memory, queries, depth, opts.exclude_self, opts.search);
    OodStats s;
    s.name = name;
    s.queries = queries.size();
    for (const auto& set : sets) {
      std::vector<double> d;
      for (const auto& nb : set.items) d.push_back(nb.distance);
      const auto sum = summarize(d);
      s.per_query_mean.push_back(sum.mean);
      s.per_query_median.push_back(sum.median);
    }
    s.mean_summary = summarize(s.per_query_mean);
    s.median_summary = summarize(s.per_query_median);
    out.push_back(std::move(s));
  }
  return out;
}

struct ResidualResult {
  NeighborSet primary;
  NeighborSet residual;
  std::vector<float> residual_vector;  // normalized query - nearest neighbor
  double residual_norm = 0.0;          // norm before normalization
};

/// Searches with the query, subtracts the nearest neighbor's vector,
/// re-normalizes, and searches again without that neighbor.
inline ResidualResult residual_query(const VisualMemory& memory, const EmbeddingVector& query, std::size_t k) {
  if (memory.size() < 2) throw Error(ErrorCode::InvalidArgument, "residual query needs >= 2 entries");
  ResidualResult out;
  out.primary = exact_search(memory, query, k);
  const EntryId nearest = out.primary[0].id;
  const auto nn_row = memory.row(*memory.row_of(nearest));
  std::vector<float> raw(query.dims());
  double sq = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double diff = static_cast<double>(query[i]) - nn_row[i];
    raw[i] = static_cast<float>(diff);
    sq += diff * diff;
  }
  out.residual_norm = std::sqrt(sq);
  if (out.residual_norm < 1e-6)
    throw Error(ErrorCode::DegenerateResidual, "query coincides with its nearest neighbor");
  const auto unit = normalize(raw);
  out.residual_vector.assign(unit.values().begin(), unit.values().end());
  out.residual = exact_search(memory, unit, std::min(k + 1, memory.size()));
  std::erase_if(out.residual.items, [nearest](const Neighbor& n) { return n.id == nearest; });
  if (out.residual.items.size() > k) out.residual.items.resize(k);
  for (std::size_t i = 0; i < out.residual.items.size(); ++i) out.residual.items[i].rank = static_cast<std::uint32_t>(i);
  return out;
}

/// Error rate (1 - best accuracy) of `vote` on memories subsampled to each
/// size on the ladder. Sizes are approximate: per_class = size / labels.
inline std::vector<std::pair<double, double>> scaling_points(const VisualMemory& memory, const QuerySet& queries,
                                                             const std::vector<std::size_t>& sizes,
                                                             const VoteConfig& vote, std::uint64_t seed,
                                                             const SearchOptions& search = {}) {
  std::vector<std::pair<double, double>> pts;
  const std::size_t labels = std::max<std::size_t>(1, memory.label_count());
  for (std::size_t size : sizes) {
    const std::size_t per_class = std::max<std::size_t>(1, size / labels);
    const VisualMemory sub = memory.subsample(per_class, seed);
    VoteConfig cfg = vote;
    cfg.k = std::min(cfg.k, sub.size());
    EvalOptions eo;
    eo.search = search;
    const auto report = evaluate(sub, queries, cfg, eo);
    pts.emplace_back(static_cast<double>(sub.size()), 1.0 - report.at(cfg.k));
  }
  return pts;
}

}  // namespace vismem
