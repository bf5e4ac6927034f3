#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace vismem;
using vismem::testing::entry;
using vismem::testing::random_raw;
using vismem::testing::TempDir;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

VisualMemory random_memory(std::size_t n, std::size_t dims, std::size_t labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  VisualMemory m(static_cast<std::uint32_t>(dims));
  std::vector<MemoryEntry> batch;
  for (std::size_t i = 0; i < n; ++i)
    batch.push_back(entry(static_cast<EntryId>(i), random_raw(rng, dims), "l" + std::to_string(i % labels)));
  m.insert(batch);
  return m;
}

}  // namespace

TEST(Insert, ManyLabelsGetDenseIds) {
  std::mt19937_64 rng(5);
  VisualMemory m(8);
  std::vector<MemoryEntry> batch;
  for (int i = 0; i < 1064; ++i) batch.push_back(entry(i, random_raw(rng, 8), "label_" + std::to_string(i)));
  const auto gen = m.generation();
  m.insert(batch);
  EXPECT_EQ(m.size(), 1064u);
  EXPECT_EQ(m.label_count(), 1064u);
  EXPECT_GT(m.generation(), gen);
  std::set<LabelId> ids(m.labels().begin(), m.labels().end());
  EXPECT_EQ(ids.size(), 1064u);
  EXPECT_EQ(*ids.begin(), 0);
  EXPECT_EQ(*ids.rbegin(), 1063);
}

TEST(Insert, DuplicateIdLeavesMemoryUnchanged) {
  auto m = random_memory(10, 4, 2, 1);
  const auto gen = m.generation();
  std::mt19937_64 rng(2);
  EXPECT_EQ(code_of([&] { m.insert({entry(100, random_raw(rng, 4), "x"), entry(3, random_raw(rng, 4), "x")}); }),
            ErrorCode::DuplicateId);
  EXPECT_EQ(code_of([&] { m.insert({entry(200, random_raw(rng, 4), "x"), entry(200, random_raw(rng, 4), "x")}); }),
            ErrorCode::DuplicateId);
  EXPECT_EQ(m.size(), 10u);
  EXPECT_EQ(m.generation(), gen);
  EXPECT_FALSE(m.contains(100));
}

TEST(Insert, DimMismatch) {
  auto m = random_memory(3, 4, 1, 1);
  std::mt19937_64 rng(2);
  EXPECT_EQ(code_of([&] { m.insert({entry(50, random_raw(rng, 5), "x")}); }), ErrorCode::DimMismatch);
}

TEST(Insert, RejectsInconsistentReliability) {
  VisualMemory m(2);
  MemoryEntry e = entry(1, {1.0f, 0.0f}, "a");
  e.gamma = 0.5;  // v = 0 requires gamma = 1
  EXPECT_EQ(code_of([&] { m.insert({e}); }), ErrorCode::InvalidArgument);
}

TEST(Remove, UnknownIdIsAtomic) {
  auto m = random_memory(10, 4, 2, 1);
  EXPECT_EQ(code_of([&] { m.remove({1, 2, 99}); }), ErrorCode::UnknownId);
  EXPECT_EQ(m.size(), 10u);
  EXPECT_TRUE(m.contains(1));
}

TEST(Remove, MatchesRebuildWithoutEntries) {
  auto m = random_memory(200, 8, 5, 9);
  std::vector<EntryId> gone = {0, 17, 18, 150, 199};
  auto removed = m;
  const auto gen = removed.generation();
  removed.remove(gone);
  EXPECT_GT(removed.generation(), gen);

  VisualMemory rebuilt(8);
  std::vector<MemoryEntry> keep;
  for (std::size_t r = 0; r < m.size(); ++r)
    if (std::find(gone.begin(), gone.end(), m.id_at(r)) == gone.end()) keep.push_back(m.entry(r));
  rebuilt.insert(keep);

  ASSERT_EQ(removed.size(), rebuilt.size());
  for (std::size_t r = 0; r < removed.size(); ++r) {
    EXPECT_EQ(removed.id_at(r), rebuilt.id_at(r));
    EXPECT_EQ(removed.label_name(removed.label_at(r)), rebuilt.label_name(rebuilt.label_at(r)));
    EXPECT_TRUE(std::equal(removed.row(r).begin(), removed.row(r).end(), rebuilt.row(r).begin()));
    EXPECT_EQ(removed.row_of(removed.id_at(r)), r);
  }
  for (EntryId id : gone) EXPECT_FALSE(removed.contains(id));
}

TEST(Build, LabelsInLexicographicOrder) {
  const auto p = vismem::testing::make_pack(2, {{1, 0}, {0, 1}, {1, 1}}, {"zebra", "ant", "moose"});
  const auto m = VisualMemory::build(p);
  EXPECT_EQ(m.label_name(0), "ant");
  EXPECT_EQ(m.label_name(1), "moose");
  EXPECT_EQ(m.label_name(2), "zebra");
  EXPECT_EQ(m.label_at(0), 2);
  EXPECT_NEAR(m.row(2)[0], std::sqrt(0.5), 1e-7);
}

TEST(Build, RejectsZeroRow) {
  const auto p = vismem::testing::make_pack(2, {{1, 0}, {0, 0}}, {"a", "b"});
  EXPECT_EQ(code_of([&] { VisualMemory::build(p); }), ErrorCode::ZeroVector);
}

TEST(SaveLoad, RoundTripPreservesEverything) {
  TempDir dir("store");
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  auto m = random_memory(50, 6, 3, 4);
  m.set_reliability(3, 2, 0.5);
  m.remove({10});
  m.save(dir.path());
  const auto l = VisualMemory::load(dir.path());
  ASSERT_EQ(l.size(), m.size());
  EXPECT_EQ(l.generation(), m.generation());
  EXPECT_EQ(l.created_at(), "2023-11-14T22:13:20Z");
  for (std::size_t r = 0; r < m.size(); ++r) {
    EXPECT_EQ(l.id_at(r), m.id_at(r));
    EXPECT_EQ(l.label_at(r), m.label_at(r));
    EXPECT_EQ(l.wrong_votes_at(r), m.wrong_votes_at(r));
    EXPECT_EQ(l.gamma_at(r), m.gamma_at(r));
    EXPECT_TRUE(std::equal(l.row(r).begin(), l.row(r).end(), m.row(r).begin()));
  }
  TempDir again("store2");
  l.save(again.path());
  for (const char* f : {"vectors.bin", "meta.jsonl", "manifest.json"})
    EXPECT_EQ(detail::read_file(dir / f), detail::read_file(again / f)) << f;
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST(Subsample, IdempotentAndSaturating) {
  auto m = random_memory(300, 4, 3, 8);
  const auto s = m.subsample(40, 123);
  EXPECT_EQ(s.size(), 120u);
  std::map<LabelId, int> per;
  for (auto l : s.labels()) ++per[l];
  for (auto& [l, c] : per) EXPECT_EQ(c, 40);
  const auto s2 = s.subsample(40, 999);
  EXPECT_EQ(std::vector<EntryId>(s2.ids().begin(), s2.ids().end()),
            std::vector<EntryId>(s.ids().begin(), s.ids().end()));
  EXPECT_EQ(m.subsample(1000, 1).size(), 300u);
  const auto s3 = m.subsample(40, 123);
  EXPECT_EQ(std::vector<EntryId>(s3.ids().begin(), s3.ids().end()),
            std::vector<EntryId>(s.ids().begin(), s.ids().end()));
}
