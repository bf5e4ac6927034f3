#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vismem/vismem.hpp"

namespace vismem::cli {

/// Every flag of every subcommand; a subcommand reads only its own.
struct RunConfig {
  std::string memory;
  std::string pack;
  std::string queries;
  std::string out;
  std::string output;  // structured results file
  std::string format = "table";
  std::string ids_file;
  std::string report;
  std::string taxonomy;
  std::string target;
  std::string points;
  std::string mode = "soft";
  std::string attribution = "wrong_label";
  std::string queries_out;
  std::vector<std::string> named_packs;
  std::vector<double> grid;
  std::vector<std::size_t> ladder = {0, 1, 5, 10, 25, 50};
  std::vector<std::size_t> sizes;

  std::string scheme = "rank";
  std::size_t k = 100;
  double alpha = 2.0;
  double tau = 0.07;
  double xi = 1.0;
  bool exclude_self = false;
  bool use_gamma = false;
  bool ann = false;
  std::uint32_t probes = 0;      // 0 -> default
  std::uint32_t partitions = 0;  // 0 -> default
  std::uint32_t iterations = 25;
  std::size_t per_class = 1;
  std::size_t k_retrieve = 100;
  std::uint32_t threshold = 128;
  double c = 1.0;
  double d = 1.75;
  std::size_t max_pairs = 2000;
  std::uint32_t bin_width = 10;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  // gen-fixture
  std::optional<std::size_t> classes;  // default 10, or derived from the tree
  std::size_t fixture_per_class = 100;
  std::size_t dims = 64;
  double spread = 0.05;
  double noise = 0.0;
  std::size_t depth = 0;
  std::size_t fanout = 0;
  double level_scale = 0.5;
  std::size_t queries_per_class = 0;
};

namespace detail {

using nlohmann::json;

struct Output {
  std::vector<json> records;
  std::ostringstream table;
};

inline VoteConfig vote_config(const RunConfig& rc) {
  VoteConfig v;
  v.scheme = parse_scheme(rc.scheme);
  v.k = rc.k;
  v.alpha = rc.alpha;
  v.tau = rc.tau;
  v.xi = rc.xi;
  v.validate();
  return v;
}

inline QuerySet load_queries(const std::string& path) { return QuerySet::from_pack(read_pack(path)); }

inline fs::path out_or(const RunConfig& rc, const std::string& fallback) {
  return rc.out.empty() ? fs::path(fallback) : fs::path(rc.out);
}

struct LoadedSearch {
  std::optional<AnnIndex> index;
  SearchOptions opts;
};

inline LoadedSearch search_for(const RunConfig& rc, const VisualMemory& memory) {
  LoadedSearch s;
  s.opts.threads = rc.threads;
  if (rc.ann) {
    s.index = load_index(fs::path(rc.memory) / "index.bin");
    if (s.index->generation != memory.generation() || s.index->entry_count != memory.size())
      throw Error(ErrorCode::StaleIndex, "index.bin was built for generation " + std::to_string(s.index->generation) +
                                             ", memory is at " + std::to_string(memory.generation()));
    s.opts.index = &*s.index;
    if (rc.probes > 0) s.opts.probes = rc.probes;
  }
  return s;
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

inline void memory_summary(Output& o, const VisualMemory& m, const fs::path& path) {
  o.records.push_back({{"path", path.string()},
                       {"count", m.size()},
                       {"dims", m.dims()},
                       {"label_count", m.label_count()},
                       {"generation", m.generation()}});
  o.table << "memory " << path.string() << ": " << m.size() << " entries, " << m.dims() << " dims, "
          << m.label_count() << " labels, generation " << m.generation() << '\n';
}

inline std::vector<EntryId> read_ids(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IOError, "cannot open " + path);
  std::vector<EntryId> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      ids.push_back(std::stoll(line));
    } catch (...) {
      throw Error(ErrorCode::FormatError, "bad id '" + line + "' in " + path);
    }
  }
  return ids;
}

inline void accuracy_table(Output& o, const AccuracyReport& r, const std::string& tag) {
  o.table << "k\t" << tag << '\n';
  for (std::size_t k = 1; k <= r.accuracy.size(); ++k) {
    o.table << k << '\t' << fmt(r.at(k)) << '\n';
    o.records.push_back({{"scheme", std::string(to_string(r.config.scheme))},
                         {"k", k},
                         {"alpha", r.config.alpha},
                         {"tau", r.config.tau},
                         {"xi", r.config.xi},
                         {"accuracy", r.at(k)}});
  }
  o.table << "best\t" << fmt(r.best()) << " at k=" << r.best_k() << '\n';
}

inline void neighbors_json(json& j, const NeighborSet& s, const VisualMemory& m) {
  j = json::array();
  for (const auto& n : s.items)
    j.push_back({{"rank", n.rank}, {"id", n.id}, {"label", m.label_name(n.label)}, {"distance", n.distance}});
}

// ---------------------------------------------------------------------------

inline void cmd_build(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::build(read_pack(rc.pack));
  m.save(rc.out);
  memory_summary(o, m, rc.out);
}

inline void cmd_insert(const RunConfig& rc, Output& o) {
  auto m = VisualMemory::load(rc.memory);
  m.insert(entries_from_pack(read_pack(rc.pack)));
  const auto dst = out_or(rc, rc.memory);
  m.save(dst);
  memory_summary(o, m, dst);
}

inline void cmd_remove(const RunConfig& rc, Output& o) {
  auto m = VisualMemory::load(rc.memory);
  m.remove(read_ids(rc.ids_file));
  const auto dst = out_or(rc, rc.memory);
  m.save(dst);
  memory_summary(o, m, dst);
}

inline void cmd_subsample(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory).subsample(rc.per_class, rc.seed);
  m.save(rc.out);
  memory_summary(o, m, rc.out);
}

inline void cmd_index(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  IndexOptions io;
  if (rc.partitions > 0) io.partitions = rc.partitions;
  io.seed = rc.seed;
  io.iterations = rc.iterations;
  io.threads = rc.threads;
  const auto index = build_index(m, io);
  const auto dst = rc.out.empty() ? fs::path(rc.memory) / "index.bin" : fs::path(rc.out);
  save_index(index, dst);
  o.records.push_back({{"path", dst.string()},
                       {"partitions", index.partitions},
                       {"default_probes", default_probes(index.partitions)},
                       {"generation", index.generation}});
  o.table << "index " << dst.string() << ": " << index.partitions << " partitions, default probes "
          << default_probes(index.partitions) << ", generation " << index.generation << '\n';
}

inline void cmd_query(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  const auto sets = retrieve(m, q, rc.k, rc.exclude_self, s.opts);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    json nb;
    neighbors_json(nb, sets[i], m);
    o.records.push_back({{"query_id", q.ids[i]}, {"neighbors", nb}});
    o.table << "query " << q.ids[i] << " (" << q.labels[i] << ")\n";
    for (const auto& n : sets[i].items)
      o.table << "  " << n.rank << '\t' << n.id << '\t' << m.label_name(n.label) << '\t' << fmt(n.distance, 6) << '\n';
  }
}

inline void cmd_eval(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  EvalOptions eo;
  eo.exclude_self = rc.exclude_self;
  eo.use_reliability = rc.use_gamma;
  eo.search = s.opts;
  const auto report = evaluate(m, q, vote_config(rc), eo);
  accuracy_table(o, report, rc.scheme);
}

inline void cmd_sweep(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  EvalOptions eo;
  eo.exclude_self = rc.exclude_self;
  eo.use_reliability = rc.use_gamma;
  eo.search = s.opts;
  const auto scheme = parse_scheme(rc.scheme);
  const auto rows = sweep(m, q, scheme, rc.grid, eo);
  o.table << "value\tbest_accuracy\tbest_k\n";
  for (const auto& r : rows) {
    o.table << r.value << '\t' << fmt(r.best_accuracy) << '\t' << r.best_k << '\n';
    o.records.push_back({{"scheme", rc.scheme}, {"value", r.value}, {"best_accuracy", r.best_accuracy},
                         {"best_k", r.best_k}});
  }
}

inline PruneConfig prune_config(const RunConfig& rc) {
  PruneConfig pc;
  pc.k_retrieve = rc.k_retrieve;
  pc.vote = vote_config(rc);
  if (rc.attribution == "wrong_label")
    pc.attribution = Attribution::WrongLabel;
  else if (rc.attribution == "predicted_label")
    pc.attribution = Attribution::PredictedLabel;
  else
    throw Error(ErrorCode::InvalidArgument, "unknown attribution '" + rc.attribution + "'");
  pc.c = rc.c;
  pc.d = rc.d;
  pc.threshold = rc.threshold;
  pc.threads = rc.threads;
  return pc;
}

inline void cmd_prune_estimate(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto report = estimate_reliability(m, prune_config(rc));
  const auto dst = rc.out.empty() ? fs::path(rc.memory) / "reliability.jsonl" : fs::path(rc.out);
  save_report(report, dst);
  std::size_t nonzero = 0, over = 0;
  std::uint32_t vmax = 0;
  for (auto v : report.wrong_votes) {
    nonzero += v > 0;
    over += v >= rc.threshold;
    vmax = std::max(vmax, v);
  }
  o.records.push_back({{"path", dst.string()},
                       {"misclassified", report.misclassified},
                       {"entries_with_votes", nonzero},
                       {"entries_over_threshold", over},
                       {"threshold", rc.threshold},
                       {"max_v", vmax}});
  o.table << "reliability report " << dst.string() << "\n  misclassified self-queries: " << report.misclassified
          << "\n  entries with v > 0: " << nonzero << "\n  entries with v >= " << rc.threshold << ": " << over
          << "\n  max v: " << vmax << '\n';
}

inline void cmd_prune(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto report = load_report(rc.report.empty() ? (fs::path(rc.memory) / "reliability.jsonl").string() : rc.report);
  VisualMemory pruned;
  if (rc.mode == "hard")
    pruned = hard_prune(m, report, rc.threshold);
  else if (rc.mode == "soft")
    pruned = soft_prune(m, report, rc.c, rc.d);
  else
    throw Error(ErrorCode::InvalidArgument, "mode must be hard or soft");
  pruned.save(rc.out);
  memory_summary(o, pruned, rc.out);
  o.records.back()["removed"] = m.size() - pruned.size();
  o.table << "removed " << (m.size() - pruned.size()) << " entries (" << rc.mode << ")\n";
}

inline void cmd_hierarchy(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto tree = TaxonomyTree::from_file(rc.taxonomy);
  const auto q = load_queries(rc.queries);
  HierarchyOptions ho;
  ho.max_pairs = rc.max_pairs;
  ho.seed = rc.seed;
  const HierarchyPredictor predictor(m, tree, ho);
  std::vector<std::size_t> hits(tree.levels(), 0);
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto path = predictor.predict(q.vectors[i]);
    const auto names = tree.names_of(path);
    const auto joined = TaxonomyTree::join_path(names);
    o.records.push_back({{"query_id", q.ids[i]}, {"predicted_path", joined}});
    o.table << q.ids[i] << '\t' << joined << '\n';
    if (!q.taxonomy_paths[i].empty()) {
      ++labeled;
      for (std::size_t l = 0; l < names.size() && l < q.taxonomy_paths[i].size(); ++l)
        if (names[l] == q.taxonomy_paths[i][l]) ++hits[l];
    }
  }
  if (labeled > 0) {
    o.table << "level\taccuracy\n";
    for (std::size_t l = 0; l < hits.size(); ++l) {
      const double acc = static_cast<double>(hits[l]) / static_cast<double>(labeled);
      o.table << l + 1 << '\t' << fmt(acc) << '\n';
      o.records.push_back({{"level", l + 1}, {"accuracy", acc}});
    }
  }
}

inline void cmd_granularity(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto tree = TaxonomyTree::from_file(rc.taxonomy);
  const auto names = TaxonomyTree::split_path(rc.target);
  const auto path = tree.resolve(names);
  if (!path || path->size() != tree.levels())
    throw Error(ErrorCode::UnknownPath, "target '" + rc.target + "' is not a leaf path");
  auto all = load_queries(rc.queries);
  QuerySet holdout;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.taxonomy_paths[i] == names) {
      holdout.ids.push_back(all.ids[i]);
      holdout.vectors.push_back(all.vectors[i]);
      holdout.labels.push_back(all.labels[i]);
      holdout.taxonomy_paths.push_back(all.taxonomy_paths[i]);
    }
  if (holdout.size() == 0) throw Error(ErrorCode::InvalidArgument, "no queries carry the target path");
  GranularityOptions go;
  go.ladder = rc.ladder;
  go.seed = rc.seed;
  go.hierarchy.max_pairs = rc.max_pairs;
  go.hierarchy.seed = rc.seed;
  const auto steps = granularity_experiment(m, tree, path->back(), holdout, go);
  o.table << "# " << holdout.size() << " holdout queries for " << rc.target << '\n';
  o.table << "exemplars";
  for (std::size_t l = 1; l <= tree.levels(); ++l) o.table << "\tL" << l << "\tL" << l << "_base";
  o.table << '\n';
  for (const auto& s : steps) {
    o.table << s.exemplars;
    for (std::size_t l = 0; l < s.level_accuracy.size(); ++l) {
      o.table << '\t' << fmt(s.level_accuracy[l]) << '\t' << fmt(s.baseline_accuracy[l]);
      o.records.push_back({{"exemplars", s.exemplars},
                           {"requested", s.requested},
                           {"level", l + 1},
                           {"accuracy", s.level_accuracy[l]},
                           {"baseline", s.baseline_accuracy[l]}});
    }
    o.table << '\n';
  }
}

inline AnalysisOptions analysis_options(const RunConfig& rc, const LoadedSearch& s) {
  AnalysisOptions ao;
  ao.exclude_self = rc.exclude_self;
  ao.search = s.opts;
  return ao;
}

inline void cmd_reliability(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  const auto curve = reliability_at_k(m, q, rc.k, analysis_options(rc, s));
  o.table << "index\taccuracy\n";
  for (std::size_t i = 0; i < curve.accuracy.size(); ++i) {
    o.table << i << '\t' << fmt(curve.accuracy[i]) << '\n';
    o.records.push_back({{"index", i}, {"accuracy", curve.accuracy[i]}});
  }
  o.table << "fit: accuracy = " << fmt(curve.fit.intercept, 6) << " + " << fmt(curve.fit.slope, 6)
          << " * ln(index + 1), rss " << fmt(curve.fit.rss, 6) << '\n';
  o.records.push_back({{"fit", "a + b ln(i + 1)"}, {"a", curve.fit.intercept}, {"b", curve.fit.slope},
                       {"rss", curve.fit.rss}});
}

inline void cmd_hitrate(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  const auto rate = hit_rate(m, q, rc.k, analysis_options(rc, s));
  o.table << "k\thit_rate\n";
  for (std::size_t k = 1; k <= rate.size(); ++k) {
    o.table << k << '\t' << fmt(rate[k - 1]) << '\n';
    o.records.push_back({{"k", k}, {"hit_rate", rate[k - 1]}});
  }
}

inline void cmd_calibrate(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  const auto s = search_for(rc, m);
  VoteConfig v = vote_config(rc);
  const auto table = calibrate(m, q, rc.bin_width, v, analysis_options(rc, s));
  o.table << "confidence\tqueries\taccuracy\n";
  for (const auto& b : table.bins) {
    o.table << '[' << b.low << ',' << b.high << (b.high == 100 ? "]" : ")") << '\t' << b.count << '\t'
            << fmt(b.accuracy()) << '\n';
    o.records.push_back({{"low", b.low}, {"high", b.high}, {"count", b.count}, {"accuracy", b.accuracy()}});
  }
}

inline void cmd_fit_scaling(const RunConfig& rc, Output& o) {
  std::vector<std::pair<double, double>> pts;
  if (!rc.points.empty()) {
    std::ifstream in(rc.points);
    if (!in) throw Error(ErrorCode::IOError, "cannot open " + rc.points);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      double x = 0, y = 0;
      if (!(ls >> x >> y)) {
        if (pts.empty()) continue;  // header row
        throw Error(ErrorCode::FormatError, "bad point line '" + line + "'");
      }
      pts.emplace_back(x, y);
    }
  } else {
    const auto m = VisualMemory::load(rc.memory);
    const auto q = load_queries(rc.queries);
    if (rc.sizes.empty()) throw Error(ErrorCode::InvalidArgument, "--sizes required with --memory");
    SearchOptions so;
    so.threads = rc.threads;
    pts = scaling_points(m, q, rc.sizes, vote_config(rc), rc.seed, so);
  }
  o.table << "memory_size\terror_rate\n";
  for (const auto& [x, y] : pts) {
    o.table << x << '\t' << fmt(y, 6) << '\n';
    o.records.push_back({{"memory_size", x}, {"error_rate", y}});
  }
  const auto fit = fit_scaling(pts);
  o.table << "fit: log10(error) = " << fmt(fit.slope, 6) << " * log10(size) + " << fmt(fit.intercept, 6) << ", rss "
          << fmt(fit.rss, 9) << '\n';
  o.records.push_back({{"fit", "log10 y = m log10 x + q"}, {"m", fit.slope}, {"q", fit.intercept}, {"rss", fit.rss}});
}

inline void cmd_ood_stats(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto s = search_for(rc, m);
  std::vector<std::pair<std::string, QuerySet>> packs;
  for (const auto& spec : rc.named_packs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::InvalidArgument, "--pack expects NAME=PATH");
    packs.emplace_back(spec.substr(0, eq), load_queries(spec.substr(eq + 1)));
  }
  const auto stats = ood_distance_stats(m, packs, analysis_options(rc, s));
  o.table << "pack\tstat\tmean\tmin\tq1\tmedian\tq3\tmax\n";
  for (const auto& st : stats) {
    for (const auto& [label, sum] : {std::pair{"mean", st.mean_summary}, std::pair{"median", st.median_summary}}) {
      o.table << st.name << '\t' << label << '\t' << fmt(sum.mean) << '\t' << fmt(sum.min) << '\t' << fmt(sum.q1)
              << '\t' << fmt(sum.median) << '\t' << fmt(sum.q3) << '\t' << fmt(sum.max) << '\n';
    }
    for (std::size_t i = 0; i < st.per_query_mean.size(); ++i)
      o.records.push_back({{"pack", st.name}, {"query", i}, {"mean", st.per_query_mean[i]},
                           {"median", st.per_query_median[i]}});
  }
}

inline void cmd_residual(const RunConfig& rc, Output& o) {
  const auto m = VisualMemory::load(rc.memory);
  const auto q = load_queries(rc.queries);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto r = residual_query(m, q.vectors[i], rc.k);
    json primary, residual;
    neighbors_json(primary, r.primary, m);
    neighbors_json(residual, r.residual, m);
    o.records.push_back({{"query_id", q.ids[i]}, {"primary", primary}, {"residual", residual},
                         {"residual_norm", r.residual_norm}});
    o.table << "query " << q.ids[i] << "\n  primary :";
    for (const auto& n : r.primary.items) o.table << ' ' << m.label_name(n.label) << '(' << n.id << ')';
    o.table << "\n  residual:";
    for (const auto& n : r.residual.items) o.table << ' ' << m.label_name(n.label) << '(' << n.id << ')';
    o.table << '\n';
  }
}

inline void cmd_gen_fixture(const RunConfig& rc, Output& o) {
  FixtureSpec spec;
  spec.classes = rc.classes.value_or(rc.depth > 0 ? 0 : 10);
  spec.per_class = rc.fixture_per_class;
  spec.dims = rc.dims;
  spec.spread = rc.spread;
  spec.noise = rc.noise;
  spec.depth = rc.depth;
  spec.fanout = rc.fanout;
  spec.level_scale = rc.level_scale;
  spec.queries_per_class = rc.queries_per_class;
  spec.seed = rc.seed;
  if (spec.queries_per_class > 0 && rc.queries_out.empty())
    throw Error(ErrorCode::InvalidArgument, "--queries-out is required with --queries-per-class");
  const auto fx = generate_fixture(spec);
  json gen = {{"generator", "vismem-fixture"}, {"seed", spec.seed}};
  write_pack(rc.out, fx.memory, gen);
  if (!fx.taxonomy.empty()) {
    auto t = vismem::detail::open_for_write(fs::path(rc.out) / "taxonomy.txt", false);
    for (const auto& line : fx.taxonomy) t << line << '\n';
  }
  if (!fx.noised.empty()) {
    auto t = vismem::detail::open_for_write(fs::path(rc.out) / "noise_ids.txt", false);
    for (auto id : fx.noised) t << id << '\n';
  }
  if (spec.queries_per_class > 0) write_pack(rc.queries_out, fx.queries, gen);
  o.records.push_back({{"out", rc.out}, {"count", fx.memory.count()}, {"queries", fx.queries.count()},
                       {"noised", fx.noised.size()}, {"leaves", fx.taxonomy.size()}});
  o.table << "fixture " << rc.out << ": " << fx.memory.count() << " entries, " << spec.class_count() << " classes, "
          << fx.noised.size() << " noised";
  if (spec.queries_per_class > 0) o.table << "; queries " << rc.queries_out << ": " << fx.queries.count();
  o.table << '\n';
}

inline void cmd_validate(const RunConfig& rc, Output& o) {
  const auto issues = validate_pack(rc.pack);
  o.records.push_back({{"pack", rc.pack}, {"valid", issues.empty()}, {"issues", issues}});
  if (issues.empty()) {
    o.table << rc.pack << ": ok\n";
    return;
  }
  throw Error(ErrorCode::FormatError, issues.front());
}

}  // namespace detail

/// Runs one subcommand. Exit codes: 0 success, 1 data/runtime error (one
/// diagnostic line on `err`), 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  CLI::App app{"vismem: retrieval-based visual memory classification"};
  app.fallthrough();
  app.name("vismem");
  app.require_subcommand(1);
  app.set_config("--config", "", "read flags from a TOML/INI config file");
  app.add_option("--threads", rc.threads, "worker threads (0 = VISMEM_THREADS or hardware)")->envname("VISMEM_THREADS");
  app.add_option("--format", rc.format, "standard output mode")->check(CLI::IsMember({"table", "records"}));
  app.add_option("--output", rc.output, "structured results file (JSON lines)");

  auto memory_opt = [&](CLI::App* s, bool required = true) {
    auto* o = s->add_option("--memory", rc.memory, "memory pack directory");
    if (required) o->required();
  };
  auto queries_opt = [&](CLI::App* s) { s->add_option("--queries", rc.queries, "labeled query pack")->required(); };
  auto vote_opts = [&](CLI::App* s) {
    s->add_option("--scheme", rc.scheme, "voting scheme")
        ->check(CLI::IsMember({"plurality", "distance", "softmax", "rank"}));
    s->add_option("--k", rc.k, "neighbors to aggregate (max k for reports)")->check(CLI::PositiveNumber);
    s->add_option("--alpha", rc.alpha, "rank offset")->check(CLI::PositiveNumber);
    s->add_option("--tau", rc.tau, "softmax temperature")->check(CLI::PositiveNumber);
    s->add_option("--xi", rc.xi, "distance-voting exponent")->check(CLI::NonNegativeNumber);
  };
  auto search_opts = [&](CLI::App* s) {
    s->add_flag("--ann", rc.ann, "search through <memory>/index.bin");
    s->add_option("--probes", rc.probes, "partitions to probe (default ceil(0.1 P))");
    s->add_flag("--exclude-self", rc.exclude_self, "drop neighbors whose id equals the query id");
  };

  auto* build = app.add_subcommand("build", "build a memory from an embedding pack");
  build->add_option("--pack", rc.pack, "embedding pack directory")->required();
  build->add_option("--out", rc.out, "memory pack directory")->required();

  auto* insert = app.add_subcommand("insert", "insert a pack's entries into a memory");
  memory_opt(insert);
  insert->add_option("--pack", rc.pack, "embedding pack with new entries")->required();
  insert->add_option("--out", rc.out, "output memory (default: update in place)");

  auto* remove = app.add_subcommand("remove", "unlearn entries by id");
  memory_opt(remove);
  remove->add_option("--ids", rc.ids_file, "file with one id per line")->required();
  remove->add_option("--out", rc.out, "output memory (default: update in place)");

  auto* subsample = app.add_subcommand("subsample", "keep a seeded subset per class");
  memory_opt(subsample);
  subsample->add_option("--per-class", rc.per_class, "entries per class")->required()->check(CLI::PositiveNumber);
  subsample->add_option("--seed", rc.seed);
  subsample->add_option("--out", rc.out)->required();

  auto* index = app.add_subcommand("index", "build the partitioned ANN index");
  memory_opt(index);
  index->add_option("--partitions", rc.partitions, "partition count (default ceil(sqrt(count)))");
  index->add_option("--iterations", rc.iterations, "k-means iterations")->check(CLI::PositiveNumber);
  index->add_option("--seed", rc.seed);
  index->add_option("--out", rc.out, "index file (default <memory>/index.bin)");

  auto* query = app.add_subcommand("query", "print nearest neighbors");
  memory_opt(query);
  queries_opt(query);
  query->add_option("--k", rc.k)->check(CLI::PositiveNumber);
  search_opts(query);

  auto* eval = app.add_subcommand("eval", "top-1 accuracy for every k up to --k");
  memory_opt(eval);
  queries_opt(eval);
  vote_opts(eval);
  search_opts(eval);
  eval->add_flag("--use-gamma", rc.use_gamma, "weight neighbors by stored reliability");

  auto* sw = app.add_subcommand("sweep", "best accuracy over k in [1,100] per hyperparameter value");
  memory_opt(sw);
  queries_opt(sw);
  sw->add_option("--scheme", rc.scheme)->check(CLI::IsMember({"plurality", "distance", "softmax", "rank"}));
  sw->add_option("--grid", rc.grid, "comma-separated values")->required()->delimiter(',');
  search_opts(sw);
  sw->add_flag("--use-gamma", rc.use_gamma);

  auto* pe = app.add_subcommand("prune-estimate", "count wrong votes by self-querying the memory");
  memory_opt(pe);
  vote_opts(pe);
  pe->add_option("--k-retrieve", rc.k_retrieve, "neighbors per self-query")->check(CLI::PositiveNumber);
  pe->add_option("--attribution", rc.attribution)->check(CLI::IsMember({"wrong_label", "predicted_label"}));
  pe->add_option("--threshold", rc.threshold, "report entries at or above this v");
  pe->add_option("--out", rc.out, "report file (default <memory>/reliability.jsonl)");

  auto* prune = app.add_subcommand("prune", "apply hard or soft pruning from a reliability report");
  memory_opt(prune);
  prune->add_option("--report", rc.report, "reliability.jsonl (default <memory>/reliability.jsonl)");
  prune->add_option("--mode", rc.mode)->check(CLI::IsMember({"hard", "soft"}));
  prune->add_option("--threshold", rc.threshold, "hard pruning threshold on v");
  prune->add_option("--c", rc.c, "soft pruning offset")->check(CLI::PositiveNumber);
  prune->add_option("--d", rc.d, "soft pruning scale")->check(CLI::PositiveNumber);
  prune->add_option("--out", rc.out)->required();

  auto* hier = app.add_subcommand("hierarchy", "hierarchical label prediction");
  memory_opt(hier);
  queries_opt(hier);
  hier->add_option("--taxonomy", rc.taxonomy, "path file, one ROOT->leaf path per line")->required();
  hier->add_option("--max-pairs", rc.max_pairs)->check(CLI::PositiveNumber);
  hier->add_option("--seed", rc.seed);

  auto* gran = app.add_subcommand("granularity", "accuracy per level vs. exemplars of a withheld leaf");
  memory_opt(gran);
  queries_opt(gran);
  gran->add_option("--taxonomy", rc.taxonomy)->required();
  gran->add_option("--target", rc.target, "leaf path a/b/c")->required();
  gran->add_option("--ladder", rc.ladder)->delimiter(',');
  gran->add_option("--max-pairs", rc.max_pairs)->check(CLI::PositiveNumber);
  gran->add_option("--seed", rc.seed);

  auto* rel = app.add_subcommand("reliability", "accuracy of the i-th neighbor alone");
  memory_opt(rel);
  queries_opt(rel);
  rel->add_option("--k", rc.k, "neighbor indices to report")->check(CLI::PositiveNumber);
  search_opts(rel);

  auto* hit = app.add_subcommand("hitrate", "probability the true label is among the first k");
  memory_opt(hit);
  queries_opt(hit);
  hit->add_option("--k", rc.k)->check(CLI::PositiveNumber);
  search_opts(hit);

  auto* cal = app.add_subcommand("calibrate", "accuracy vs. plurality count among first 100 neighbors");
  memory_opt(cal);
  queries_opt(cal);
  cal->add_option("--bin-width", rc.bin_width)->check(CLI::PositiveNumber);
  vote_opts(cal);
  search_opts(cal);

  auto* fit = app.add_subcommand("fit-scaling", "log-log fit of error rate vs. memory size");
  fit->add_option("--points", rc.points, "CSV of memory_size,error_rate");
  memory_opt(fit, false);
  fit->add_option("--queries", rc.queries);
  fit->add_option("--sizes", rc.sizes, "memory sizes to subsample to")->delimiter(',');
  vote_opts(fit);
  fit->add_option("--seed", rc.seed);

  auto* ood = app.add_subcommand("ood-stats", "distance statistics to the first 100 neighbors");
  memory_opt(ood);
  ood->add_option("--pack", rc.named_packs, "NAME=PATH, repeatable")->required();
  search_opts(ood);

  auto* res = app.add_subcommand("residual", "search again with query minus its nearest neighbor");
  memory_opt(res);
  queries_opt(res);
  res->add_option("--k", rc.k)->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-fixture", "write a synthetic Gaussian-cluster embedding pack");
  gen->add_option("--classes", rc.classes)->check(CLI::PositiveNumber);
  gen->add_option("--per-class", rc.fixture_per_class)->check(CLI::PositiveNumber);
  gen->add_option("--dims", rc.dims)->check(CLI::PositiveNumber);
  gen->add_option("--spread", rc.spread)->check(CLI::NonNegativeNumber);
  gen->add_option("--noise", rc.noise, "label noise fraction in [0,1)");
  gen->add_option("--depth", rc.depth, "taxonomy levels");
  gen->add_option("--fanout", rc.fanout, "taxonomy children per node");
  gen->add_option("--level-scale", rc.level_scale)->check(CLI::PositiveNumber);
  gen->add_option("--queries-per-class", rc.queries_per_class);
  gen->add_option("--queries-out", rc.queries_out);
  gen->add_option("--seed", rc.seed);
  gen->add_option("--out", rc.out)->required();

  auto* val = app.add_subcommand("validate", "check a pack's format");
  val->add_option("--pack", rc.pack)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "vismem: " << e.what() << '\n';
    CLI::App* failing = &app;
    for (auto* s : app.get_subcommands()) failing = s;
    err << failing->help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  err << "# vismem " << name << " resolved config:\n";
  {
    std::istringstream cfg(app.config_to_str(true, false));
    std::string line;
    while (std::getline(cfg, line))
      if (!line.empty()) err << "#   " << line << '\n';
  }

  static const std::map<std::string, void (*)(const RunConfig&, detail::Output&)> commands = {
      {"build", detail::cmd_build},
      {"insert", detail::cmd_insert},
      {"remove", detail::cmd_remove},
      {"subsample", detail::cmd_subsample},
      {"index", detail::cmd_index},
      {"query", detail::cmd_query},
      {"eval", detail::cmd_eval},
      {"sweep", detail::cmd_sweep},
      {"prune-estimate", detail::cmd_prune_estimate},
      {"prune", detail::cmd_prune},
      {"hierarchy", detail::cmd_hierarchy},
      {"granularity", detail::cmd_granularity},
      {"reliability", detail::cmd_reliability},
      {"hitrate", detail::cmd_hitrate},
      {"calibrate", detail::cmd_calibrate},
      {"fit-scaling", detail::cmd_fit_scaling},
      {"ood-stats", detail::cmd_ood_stats},
      {"residual", detail::cmd_residual},
      {"gen-fixture", detail::cmd_gen_fixture},
      {"validate", detail::cmd_validate},
  };

  try {
    detail::Output o;
    commands.at(name)(rc, o);
    if (rc.format == "records") {
      for (const auto& r : o.records) out << r.dump() << '\n';
    } else {
      out << o.table.str();
    }
    if (!rc.output.empty()) {
      std::ofstream f(rc.output, std::ios::trunc);
      if (!f) throw Error(ErrorCode::IOError, "cannot write " + rc.output);
      for (const auto& r : o.records) f << r.dump() << '\n';
    }
  } catch (const std::exception& e) {
    err << "vismem " << name << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vismem::cli
