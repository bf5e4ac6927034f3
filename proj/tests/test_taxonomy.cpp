#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace vismem;

namespace {

double frac(double x) { return x - std::floor(x); }

std::vector<double> golden(std::size_t n, double step, double shift) {
  std::vector<double> v;
  for (std::size_t i = 1; i <= n; ++i) v.push_back(frac(static_cast<double>(i) * step) + shift);
  return v;
}

TaxonomyTree tree_of(const std::string& text) {
  std::istringstream in(text);
  return TaxonomyTree::from_lines(in);
}

}  // namespace

TEST(Tree, BuildsTrieFromPaths) {
  const auto t = tree_of("A/x/1\nA/x/2\nA/y/3\nB/z/4\n");
  EXPECT_EQ(t.levels(), 3u);
  EXPECT_EQ(t.leaves().size(), 4u);
  EXPECT_EQ(t.node(t.root()).children.size(), 2u);
  const auto p = t.resolve({"A", "y", "3"});
  ASSERT_TRUE(p);
  EXPECT_EQ(t.names_of(*p), (std::vector<std::string>{"A", "y", "3"}));
  EXPECT_EQ(t.path_to(p->back()), *p);
  EXPECT_FALSE(t.resolve({"A", "z"}));
  EXPECT_TRUE(t.is_leaf(p->back()));
}

TEST(Tree, RejectsUnevenDepth) {
  try {
    tree_of("A/x/1\nB/2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}

TEST(Ks, IdenticalSamples) {
  const auto a = golden(40, 0.618, 0.0);
  const auto r = ks_two_sample(a, a);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Ks, DisjointSupports) {
  const auto r = ks_two_sample(golden(30, 0.618, 0.0), golden(25, 0.414, 5.0));
  EXPECT_EQ(r.statistic, 1.0);
  EXPECT_LT(r.p_value, 1e-10);
}

TEST(Ks, EmptySample) {
  try {
    ks_two_sample({}, {1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySample);
  }
}

TEST(Ks, SymmetricAndTransformInvariant) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(5 + t), b(3 + 2 * t);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng) + 0.3;
    const auto ab = ks_two_sample(a, b), ba = ks_two_sample(b, a);
    EXPECT_EQ(ab.statistic, ba.statistic);
    EXPECT_EQ(ab.p_value, ba.p_value);
    auto ea = a, eb = b;
    for (auto& x : ea) x = std::exp(x);
    for (auto& x : eb) x = std::exp(x);
    EXPECT_NEAR(ks_two_sample(ea, eb).statistic, ab.statistic, 1e-12);
  }
}

// Reference p-values from an exact two-sample null distribution computed
// independently (lattice-path enumeration in double precision).
TEST(Ks, ExactMatchesReference) {
  struct Case {
    std::size_t n1, n2;
    double shift, d, p;
  };
  const Case cases[] = {
      {20, 35, 0.15, 0.2, 0.6209593656102207},
      {50, 40, 0.1, 0.135, 0.7652170073938616},
      {100, 150, 0.05, 0.06666666666666667, 0.941639629630099},
      {7, 300, 0.2, 0.34714285714285714, 0.30726549934611364},
      {30, 30, 0.3, 0.3333333333333333, 0.07088798787114439},
      {60, 45, 0.25, 0.29444444444444445, 0.0189869699101248},
      {200, 180, 0.12, 0.12555555555555556, 0.0912673704802105},
  };
  for (const auto& c : cases) {
    const auto r = ks_two_sample(golden(c.n1, 0.6180339887498949, 0.0), golden(c.n2, 0.4142135623730951, c.shift));
    EXPECT_NEAR(r.statistic, c.d, 1e-12) << c.n1 << "x" << c.n2;
    EXPECT_NEAR(r.p_value, c.p, 1e-9) << c.n1 << "x" << c.n2;
    EXPECT_EQ(r.method, KsMethod::Exact);
  }
}

TEST(Ks, AsymptoticSeries) {
  EXPECT_NEAR(kolmogorov_survival(1.0), 0.26999967167735456, 1e-9);
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
  EXPECT_NEAR(ks_p_value_asymptotic(0.05, 5000, 5000),
              kolmogorov_survival((std::sqrt(2500.0) + 0.12 + 0.11 / 50.0) * 0.05), 1e-15);
  // Above the exact-path limit the asymptotic form is used.
  KsMethod m;
  ks_p_value(0.01, 3000, 3000, &m);
  EXPECT_EQ(m, KsMethod::Asymptotic);
}

TEST(Ks, LogPValueStaysOrderedInTheTail) {
  const double a = ks_log_p_value(0.9, 400, 2000);
  const double b = ks_log_p_value(0.95, 400, 2000);
  const double c = ks_log_p_value(1.0, 400, 2000);
  EXPECT_TRUE(std::isfinite(c));
  EXPECT_GT(a, b);
  EXPECT_GT(b, c);
  EXPECT_NEAR(ks_log_p_value(0.2, 20, 35), std::log(ks_p_value(0.2, 20, 35)), 1e-12);
}

TEST(Ks, AgreesWithPermutationOracle) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  for (int t = 0; t < 5; ++t) {
    std::vector<double> a(15 + 5 * t), b(25 + 3 * t);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng) + 0.4;
    const auto exact = ks_two_sample(a, b);
    const auto perm = ks_permutation_test(a, b, 4000, 99 + t);
    EXPECT_EQ(exact.statistic, perm.statistic);
    EXPECT_NEAR(exact.p_value, perm.p_value, 0.03);
  }
}

namespace {

struct Scene {
  VisualMemory memory;
  TaxonomyTree tree;
  QuerySet queries;
};

Scene hierarchical_scene(std::size_t depth, std::size_t fanout, std::size_t per_leaf, std::uint64_t seed) {
  FixtureSpec s;
  s.classes = 0;
  s.depth = depth;
  s.fanout = fanout;
  s.per_class = per_leaf;
  s.dims = 32;
  s.spread = 0.02;
  s.level_scale = 0.5;
  s.queries_per_class = 3;
  s.seed = seed;
  auto fx = generate_fixture(s);
  std::vector<std::vector<std::string>> paths;
  for (const auto& l : fx.taxonomy) paths.push_back(TaxonomyTree::split_path(l));
  return {VisualMemory::build(fx.memory), TaxonomyTree::from_paths(paths), QuerySet::from_pack(fx.queries)};
}

}  // namespace

TEST(Hierarchy, SingleLeafTree) {
  VisualMemory m(2);
  m.insert({vismem::testing::entry(0, {1, 0}, "leaf", {"only", "leaf"})});
  const auto t = tree_of("only/leaf\n");
  const auto path = hierarchical_predict(normalize(std::vector<float>{0, 1}), m, t);
  EXPECT_EQ(t.names_of(path), (std::vector<std::string>{"only", "leaf"}));
}

TEST(Hierarchy, RoutesTwoLevelTree) {
  const auto s = hierarchical_scene(2, 4, 20, 3);
  HierarchyPredictor pred(s.memory, s.tree);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < s.queries.size(); ++i) {
    const auto path = pred.predict(s.queries.vectors[i]);
    ASSERT_EQ(path.size(), 2u);
    EXPECT_EQ(s.tree.node(path[1]).parent, path[0]);
    if (s.tree.names_of(path) == s.queries.taxonomy_paths[i]) ++ok;
  }
  EXPECT_GE(static_cast<double>(ok) / static_cast<double>(s.queries.size()), 0.95);
}

TEST(Hierarchy, EmptyCandidateAndUnknownPath) {
  VisualMemory m(2);
  m.insert({vismem::testing::entry(0, {1, 0}, "a", {"A", "a"})});
  const auto t = tree_of("A/a\nA/b\n");
  try {
    hierarchical_predict(normalize(std::vector<float>{1, 0}), m, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCandidate);
  }
  HierarchyOptions skip;
  skip.skip_empty = true;
  EXPECT_EQ(t.names_of(hierarchical_predict(normalize(std::vector<float>{1, 0}), m, t, skip)),
            (std::vector<std::string>{"A", "a"}));
  VisualMemory bad(2);
  bad.insert({vismem::testing::entry(0, {1, 0}, "a", {"A", "zzz"})});
  try {
    HierarchyPredictor p(bad, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPath);
  }
}

TEST(Hierarchy, Deterministic) {
  const auto s = hierarchical_scene(2, 3, 15, 8);
  HierarchyPredictor a(s.memory, s.tree), b(s.memory, s.tree);
  for (const auto& q : s.queries.vectors) EXPECT_EQ(a.predict(q), b.predict(q));
}

TEST(Granularity, ZeroExemplarsNeverReachTarget) {
  const auto s = hierarchical_scene(2, 3, 20, 5);
  const auto& target_names = s.queries.taxonomy_paths[0];
  const NodeId target = s.tree.resolve(target_names)->back();
  QuerySet hold;
  for (std::size_t i = 0; i < s.queries.size(); ++i)
    if (s.queries.taxonomy_paths[i] == target_names) {
      hold.ids.push_back(s.queries.ids[i]);
      hold.vectors.push_back(s.queries.vectors[i]);
      hold.labels.push_back(s.queries.labels[i]);
      hold.taxonomy_paths.push_back(s.queries.taxonomy_paths[i]);
    }
  GranularityOptions go;
  go.ladder = {0, 2, 20};
  const auto steps = granularity_experiment(s.memory, s.tree, target, hold, go);
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_EQ(steps[0].level_accuracy.back(), 0.0);
  EXPECT_EQ(steps[2].exemplars, 20u);
  EXPECT_GE(steps[2].level_accuracy.back(), steps[0].level_accuracy.back());
  EXPECT_EQ(steps[0].baseline_accuracy.size(), 2u);
}
