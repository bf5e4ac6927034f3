#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"

using namespace vismem;

namespace {

NeighborSet make_set(const std::vector<std::pair<LabelId, double>>& items) {
  NeighborSet s;
  for (std::size_t i = 0; i < items.size(); ++i)
    s.items.push_back({static_cast<EntryId>(i), items[i].first, items[i].second, static_cast<std::uint32_t>(i)});
  return s;
}

VoteConfig cfg(VoteScheme s, std::size_t k) {
  VoteConfig c;
  c.scheme = s;
  c.k = k;
  return c;
}

}  // namespace

TEST(Weight, SchemeFormulas) {
  VoteConfig c;
  const std::vector<double> none;
  EXPECT_DOUBLE_EQ(weight(VoteScheme::Rank, 0, 0.3, none, c), 0.5);
  EXPECT_DOUBLE_EQ(weight(VoteScheme::Rank, 3, 0.3, none, c), 0.2);
  EXPECT_DOUBLE_EQ(weight(VoteScheme::Plurality, 17, 1.3, none, c), 1.0);
  EXPECT_DOUBLE_EQ(weight(VoteScheme::Distance, 0, 0.0, none, c), 1.0);
  EXPECT_NEAR(weight(VoteScheme::Distance, 0, 0.5, none, c), std::exp(-0.5), 1e-15);
  c.xi = 3.0;
  EXPECT_NEAR(weight(VoteScheme::Distance, 0, 0.5, none, c), std::exp(-1.5), 1e-15);
  c = VoteConfig{};
  const std::vector<double> d = {0.1, 0.2};
  const double e0 = std::exp(0.9 / 0.07), e1 = std::exp(0.8 / 0.07);
  EXPECT_NEAR(weight(VoteScheme::Softmax, 0, 0.1, d, c), e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(weight(VoteScheme::Softmax, 1, 0.2, d, c), e1 / (e0 + e1), 1e-12);
}

TEST(Weight, SoftmaxSumsToOne) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::pair<LabelId, double>> items;
    for (int i = 0; i < 1 + t; ++i) items.push_back({0, u(rng)});
    std::sort(items.begin(), items.end(), [](auto& a, auto& b) { return a.second < b.second; });
    const auto w = weights(make_set(items), cfg(VoteScheme::Softmax, items.size()), items.size());
    double sum = 0.0;
    for (double x : w) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Weight, FastPathMatchesDefinition) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<std::pair<LabelId, double>> items;
  for (int i = 0; i < 50; ++i) items.push_back({0, u(rng)});
  std::sort(items.begin(), items.end(), [](auto& a, auto& b) { return a.second < b.second; });
  const auto set = make_set(items);
  std::vector<double> d;
  for (auto& [l, x] : items) d.push_back(x);
  for (auto s : kAllSchemes) {
    const auto c = cfg(s, 50);
    const auto w = weights(set, c, 50);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(w[i], weight(s, i, d[i], d, c), 1e-15);
  }
}

TEST(Classify, MajorityAndTieBreak) {
  const auto set = make_set({{0, 0.1}, {1, 0.2}, {2, 0.3}, {3, 0.4}, {0, 0.5}});
  EXPECT_EQ(classify(set, cfg(VoteScheme::Plurality, 5)).label, 0);
  const auto tie = make_set({{4, 0.1}, {2, 0.2}});
  EXPECT_EQ(classify(tie, cfg(VoteScheme::Plurality, 2)).label, 2);
  const auto p = classify(set, cfg(VoteScheme::Plurality, 5));
  EXPECT_EQ(p.confidence, 2u);
  EXPECT_DOUBLE_EQ(p.score_of(0), 2.0);
  EXPECT_DOUBLE_EQ(p.score_of(3), 1.0);
}

TEST(Classify, EmptySetRejected) {
  try {
    classify(NeighborSet{}, VoteConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyNeighborSet);
  }
}

TEST(Classify, KOneIsNearestLabelForEveryScheme) {
  const auto set = make_set({{7, 0.3}, {1, 0.31}, {1, 0.32}, {1, 0.33}});
  for (auto s : kAllSchemes) EXPECT_EQ(classify(set, cfg(s, 1)).label, 7) << to_string(s);
}

// Top two neighbors carry different wrong labels; the correct label sits at
// ranks 2 and 3. Unreliable entries (v = 10) flip the rank vote.
TEST(Classify, ReliabilityFlipsPrediction) {
  const auto set = make_set({{0, 0.10}, {1, 0.11}, {2, 0.12}, {2, 0.13}});
  const auto c = cfg(VoteScheme::Rank, 4);
  const auto plain = classify(set, c);
  EXPECT_EQ(plain.label, 0);  // 1/2 vs 1/3 vs 1/4 + 1/5
  EXPECT_NEAR(plain.score_of(2), 0.45, 1e-15);
  const double g = 1.75 / 11.0;
  const auto rel = [g](EntryId id) { return id < 2 ? g : 1.0; };
  const auto flipped = classify(set, c, rel);
  EXPECT_EQ(flipped.label, 2);
  EXPECT_NEAR(flipped.score_of(0), 0.5 * g, 1e-15);
  EXPECT_NEAR(flipped.score_of(1), g / 3.0, 1e-15);
  EXPECT_NEAR(flipped.score_of(2), 0.45, 1e-15);
}

TEST(Classify, ArgmaxInvariantUnderWeightScaling) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<LabelId> lab(0, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::pair<LabelId, double>> items;
    for (int i = 0; i < 20; ++i) items.push_back({lab(rng), u(rng)});
    std::sort(items.begin(), items.end(), [](auto& a, auto& b) { return a.second < b.second; });
    const auto set = make_set(items);
    const auto c = cfg(VoteScheme::Rank, 20);
    EXPECT_EQ(classify(set, c).label, classify(set, c, [](EntryId) { return 0.37; }).label);
  }
}

TEST(Classify, XiZeroEqualsPlurality) {
  const auto fx = vismem::testing::small_fixture(4, 8, 40, 8, 0.1, 10);
  const auto m = VisualMemory::build(fx.memory);
  const auto q = QuerySet::from_pack(fx.queries);
  const auto sets = retrieve(m, q, 60, false, {});
  auto d = cfg(VoteScheme::Distance, 60);
  d.xi = 0.0;
  for (const auto& s : sets)
    for (std::size_t k : {1, 5, 17, 60}) {
      d.k = k;
      EXPECT_EQ(classify(s, d).label, classify(s, cfg(VoteScheme::Plurality, k)).label);
    }
}

TEST(Evaluate, SelfMatchGivesPerfectTopOne) {
  const auto fx = vismem::testing::small_fixture(2, 5, 20, 8, 0.2, 0);
  const auto m = VisualMemory::build(fx.memory);
  const auto q = QuerySet::from_memory(m);
  EXPECT_DOUBLE_EQ(evaluate(m, q, cfg(VoteScheme::Plurality, 10)).at(1), 1.0);
  EvalOptions ex;
  ex.exclude_self = true;
  EXPECT_LT(evaluate(m, q, cfg(VoteScheme::Plurality, 10), ex).at(1), 1.0);
}

TEST(Evaluate, PerKMatchesSingleShot) {
  const auto fx = vismem::testing::small_fixture(6, 6, 30, 8, 0.1, 6);
  const auto m = VisualMemory::build(fx.memory);
  const auto q = QuerySet::from_pack(fx.queries);
  const auto truth = truth_labels(m, q);
  for (auto s : kAllSchemes) {
    const auto rep = evaluate(m, q, cfg(s, 30));
    for (std::size_t k : {1, 7, 30}) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < q.size(); ++i)
        if (classify(exact_search(m, q.vectors[i], k), cfg(s, k)).label == truth[i]) ++hits;
      EXPECT_DOUBLE_EQ(rep.at(k), static_cast<double>(hits) / static_cast<double>(q.size()));
    }
  }
}

TEST(Evaluate, KLargerThanMemoryRejected) {
  const auto fx = vismem::testing::small_fixture(1, 2, 5, 4, 0.0, 1);
  const auto m = VisualMemory::build(fx.memory);
  EXPECT_THROW(evaluate(m, QuerySet::from_pack(fx.queries), cfg(VoteScheme::Rank, 11)), Error);
}

TEST(Sweep, SingleValueEqualsEvaluateBest) {
  const auto fx = vismem::testing::small_fixture(9, 5, 30, 8, 0.1, 5);
  const auto m = VisualMemory::build(fx.memory);
  const auto q = QuerySet::from_pack(fx.queries);
  const auto rows = sweep(m, q, VoteScheme::Softmax, {0.07});
  ASSERT_EQ(rows.size(), 1u);
  const auto rep = evaluate(m, q, cfg(VoteScheme::Softmax, 100));
  EXPECT_DOUBLE_EQ(rows[0].best_accuracy, rep.best());
  EXPECT_EQ(rows[0].best_k, rep.best_k());
}

TEST(Scheme, ParseRoundTrip) {
  for (auto s : kAllSchemes) EXPECT_EQ(parse_scheme(to_string(s)), s);
  EXPECT_THROW(parse_scheme("median"), Error);
}
