#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "test_util.hpp"

using namespace vismem;
using vismem::testing::TempDir;

TEST(Normalize, ThreeFourGivesUnitVector) {
  const auto v = normalize(std::vector<float>{3.0f, 4.0f});
  ASSERT_EQ(v.dims(), 2u);
  EXPECT_NEAR(v[0], 0.6f, 1e-7);
  EXPECT_NEAR(v[1], 0.8f, 1e-7);
}

TEST(Normalize, RejectsZeroAndNonFinite) {
  try {
    normalize(std::vector<float>{0.0f, 0.0f, 0.0f});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
  }
  try {
    normalize(std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  try {
    normalize(std::vector<float>{std::numeric_limits<float>::infinity(), 1.0f});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Normalize, UnitNormOnRandomVectors) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto v = normalize(vismem::testing::random_raw(rng, 1 + t % 97));
    EXPECT_NEAR(dot(v.values(), v.values()), 1.0, 1e-6);
  }
}

TEST(CosineDistance, IdenticalOrthogonalOpposite) {
  const auto a = normalize(std::vector<float>{1.0f, 0.0f});
  const auto b = normalize(std::vector<float>{0.0f, 1.0f});
  const auto c = normalize(std::vector<float>{-1.0f, 0.0f});
  EXPECT_NEAR(cosine_distance(a, a), 0.0, 1e-12);
  EXPECT_NEAR(cosine_distance(a, b), 1.0, 1e-12);
  EXPECT_NEAR(cosine_distance(a, c), 2.0, 1e-12);
}

TEST(CosineDistance, DimMismatch) {
  const auto a = normalize(std::vector<float>{1.0f, 0.0f});
  const auto b = normalize(std::vector<float>{1.0f, 0.0f, 0.0f});
  try {
    cosine_distance(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(CosineDistance, SymmetricAndInRange) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 1 + t % 64;
    const auto a = normalize(vismem::testing::random_raw(rng, d));
    const auto b = normalize(vismem::testing::random_raw(rng, d));
    const double ab = cosine_distance(a, b);
    EXPECT_EQ(ab, cosine_distance(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 2.0);
  }
}

TEST(Pack, RoundTripIsExact) {
  TempDir dir("pack");
  Pack p;
  p.dims = 3;
  p.rows = {1.0f, 2.0f, 3.0f, -0.5f, 0.25f, 1e-3f};
  p.records = {{7, "cat", {"A", "B"}, std::nullopt, std::nullopt}, {9, "dog", {}, 4u, 0.35}};
  write_pack(dir.path(), p);
  const Pack q = read_pack(dir.path());
  EXPECT_EQ(q.dims, 3u);
  EXPECT_EQ(q.rows, p.rows);
  EXPECT_EQ(q.records, p.records);
  EXPECT_EQ(q.manifest["count"], 2);
  EXPECT_EQ(q.manifest["label_count"], 2);
  EXPECT_TRUE(validate_pack(dir.path()).empty());
}

TEST(Pack, HeaderLayout) {
  TempDir dir("layout");
  Pack p;
  p.dims = 2;
  p.rows = {1.0f, 0.0f};
  p.records = {{0, "x", {}, std::nullopt, std::nullopt}};
  write_pack(dir.path(), p);
  std::ifstream in(dir / "vectors.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_EQ(bytes.size(), kPackHeaderBytes + 2 * sizeof(float));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VMEM");
  EXPECT_EQ(detail::get_u32(bytes.data() + 4), 1u);
  EXPECT_EQ(detail::get_u32(bytes.data() + 8), 2u);
  EXPECT_EQ(detail::get_u64(bytes.data() + 12), 1u);
  EXPECT_EQ(bytes[20 + 3], 0x3F);  // 1.0f little-endian: 00 00 80 3F
  EXPECT_EQ(bytes[20 + 2], 0x80);
}

namespace {

void write_small(const std::filesystem::path& dir) {
  Pack p;
  p.dims = 2;
  p.rows = {1.0f, 0.0f, 0.0f, 1.0f};
  p.records = {{0, "a", {}, std::nullopt, std::nullopt}, {1, "b", {}, std::nullopt, std::nullopt}};
  write_pack(dir, p);
}

void expect_format_error(const std::filesystem::path& dir) {
  try {
    read_pack(dir);
    FAIL() << "pack accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError) << e.what();
  }
  EXPECT_FALSE(validate_pack(dir).empty());
}

void patch(const std::filesystem::path& file, std::size_t offset, const std::vector<unsigned char>& bytes) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Pack, WrongMagic) {
  TempDir dir("magic");
  write_small(dir.path());
  patch(dir / "vectors.bin", 0, {'X'});
  expect_format_error(dir.path());
}

TEST(Pack, CountMismatchWithMeta) {
  TempDir dir("count");
  write_small(dir.path());
  std::ofstream(dir / "meta.jsonl", std::ios::app) << R"({"id": 5, "label_name": "c"})" << "\n";
  expect_format_error(dir.path());
}

TEST(Pack, TruncatedPayload) {
  TempDir dir("trunc");
  write_small(dir.path());
  std::filesystem::resize_file(dir / "vectors.bin", kPackHeaderBytes + 3 * sizeof(float));
  expect_format_error(dir.path());
}

TEST(Pack, NonFiniteValueReportsOffset) {
  TempDir dir("nan");
  write_small(dir.path());
  patch(dir / "vectors.bin", kPackHeaderBytes + 4, {0x00, 0x00, 0xC0, 0x7F});
  try {
    read_pack(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    EXPECT_NE(std::string(e.what()).find("24"), std::string::npos) << e.what();
  }
}

TEST(Pack, UnsupportedVersionAndZeroDims) {
  TempDir a("version");
  write_small(a.path());
  patch(a / "vectors.bin", 4, {2, 0, 0, 0});
  expect_format_error(a.path());
  TempDir b("dims");
  write_small(b.path());
  patch(b / "vectors.bin", 8, {0, 0, 0, 0});
  expect_format_error(b.path());
}

TEST(Pack, MissingDirectoryIsIOError) {
  try {
    read_pack("/nonexistent/vismem/pack");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IOError);
  }
}

TEST(Pack, CreationTimestampHonorsSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "0", 1);
  EXPECT_EQ(creation_timestamp(), "1970-01-01T00:00:00Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
}
