#pragma once

// On-disk pack layout shared by embedding packs (input) and memory packs
// (persisted state):
//
//   vectors.bin    "VMEM" | u32 version=1 | u32 dims | u64 count | count*dims f32
//   meta.jsonl     one {id, label_name, taxonomy_path?, v?, gamma?} per row
//   manifest.json  {version, count, dims, label_count, created_at, ...}
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vismem/core.hpp"
#include "vismem/error.hpp"

namespace vismem {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::array<char, 4> kPackMagic = {'V', 'M', 'E', 'M'};
inline constexpr std::uint32_t kPackVersion = 1;
inline constexpr std::size_t kPackHeaderBytes = 4 + 4 + 4 + 8;

struct PackRecord {
  EntryId id = 0;
  std::string label_name;
  std::vector<std::string> taxonomy_path;  // empty when absent
  std::optional<std::uint32_t> wrong_votes;
  std::optional<double> gamma;

  friend bool operator==(const PackRecord&, const PackRecord&) = default;
};

/// Raw contents of a pack directory. Rows are not normalized here.
struct Pack {
  std::uint32_t dims = 0;
  std::vector<float> rows;  // count * dims, row-major
  std::vector<PackRecord> records;
  json manifest = json::object();

  std::size_t count() const noexcept { return records.size(); }
  std::span<const float> row(std::size_t i) const { return {rows.data() + i * dims, dims}; }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f32_block(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline void get_f32_block(const unsigned char* p, std::size_t n, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
}

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IOError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw Error(ErrorCode::IOError, "short read on " + path.string());
  return bytes;
}

inline std::ofstream open_for_write(const fs::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw Error(ErrorCode::IOError, "cannot write " + path.string());
  return out;
}

}  // namespace detail

/// Creation timestamp in UTC ISO-8601. Honors SOURCE_DATE_EPOCH so that
/// repeated runs produce byte-identical manifests.
inline std::string creation_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      t = static_cast<std::time_t>(std::stoll(epoch));
    } catch (...) {
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json record_to_json(const PackRecord& r) {
  json j;
  j["id"] = r.id;
  j["label_name"] = r.label_name;
  if (!r.taxonomy_path.empty()) j["taxonomy_path"] = r.taxonomy_path;
  if (r.wrong_votes) j["v"] = *r.wrong_votes;
  if (r.gamma) j["gamma"] = *r.gamma;
  return j;
}

inline PackRecord record_from_json(const json& j, std::size_t line) {
  auto fail = [line](const std::string& what) {
    return Error(ErrorCode::FormatError, "meta.jsonl line " + std::to_string(line + 1) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not an object");
  PackRecord r;
  if (!j.contains("id") || !j["id"].is_number_integer()) throw fail("missing integer id");
  if (!j.contains("label_name") || !j["label_name"].is_string()) throw fail("missing label_name");
  r.id = j["id"].get<EntryId>();
  r.label_name = j["label_name"].get<std::string>();
  if (auto it = j.find("taxonomy_path"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw fail("taxonomy_path is not a list");
    for (const auto& node : *it) {
      if (!node.is_string()) throw fail("taxonomy_path holds a non-string");
      r.taxonomy_path.push_back(node.get<std::string>());
    }
  }
  if (auto it = j.find("v"); it != j.end() && !it->is_null()) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
      throw fail("v must be a non-negative integer");
    r.wrong_votes = it->get<std::uint32_t>();
  }
  if (auto it = j.find("gamma"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw fail("gamma is not a number");
    const double g = it->get<double>();
    if (!(g > 0.0 && g <= 1.0)) throw fail("gamma outside (0, 1]");
    r.gamma = g;
  }
  return r;
}

/// Reads and validates a pack directory. Throws FormatError naming the
/// offending file and byte offset or line.
inline Pack read_pack(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IOError, "not a pack directory: " + dir.string());
  Pack pack;

  const auto bytes = detail::read_file(dir / "vectors.bin");
  if (bytes.size() < kPackHeaderBytes)
    throw Error(ErrorCode::FormatError, "vectors.bin: header truncated at byte " + std::to_string(bytes.size()));
  if (!std::equal(kPackMagic.begin(), kPackMagic.end(), bytes.begin()))
    throw Error(ErrorCode::FormatError, "vectors.bin: bad magic at byte 0");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kPackVersion)
    throw Error(ErrorCode::FormatError, "vectors.bin: unsupported version " + std::to_string(version));
  pack.dims = detail::get_u32(bytes.data() + 8);
  const std::uint64_t count = detail::get_u64(bytes.data() + 12);
  if (pack.dims == 0) throw Error(ErrorCode::FormatError, "vectors.bin: dims is zero");
  const std::uint64_t payload = static_cast<std::uint64_t>(bytes.size() - kPackHeaderBytes);
  if (count > payload / (4ull * pack.dims) || payload != count * pack.dims * 4ull)
    throw Error(ErrorCode::FormatError,
                "vectors.bin: header declares " + std::to_string(count) + " rows of " +
                    std::to_string(pack.dims) + " dims but payload is " + std::to_string(payload) +
                    " bytes (expected " + std::to_string(count * pack.dims * 4ull) + ")");
  pack.rows.resize(count * pack.dims);
  detail::get_f32_block(bytes.data() + kPackHeaderBytes, pack.rows.size(), pack.rows.data());
  for (std::size_t i = 0; i < pack.rows.size(); ++i)
    if (!std::isfinite(pack.rows[i]))
      throw Error(ErrorCode::FormatError,
                  "vectors.bin: non-finite value at byte " + std::to_string(kPackHeaderBytes + 4 * i));

  std::ifstream meta(dir / "meta.jsonl");
  if (!meta) throw Error(ErrorCode::IOError, "cannot open " + (dir / "meta.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(meta, line)) {
    if (line.empty()) {
      ++lineno;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, "meta.jsonl line " + std::to_string(lineno + 1) + ": " + e.what());
    }
    pack.records.push_back(record_from_json(j, lineno));
    ++lineno;
  }
  if (pack.records.size() != count)
    throw Error(ErrorCode::FormatError, "meta.jsonl has " + std::to_string(pack.records.size()) +
                                            " rows, vectors.bin declares " + std::to_string(count));

  std::ifstream manifest(dir / "manifest.json");
  if (!manifest) throw Error(ErrorCode::IOError, "cannot open " + (dir / "manifest.json").string());
  try {
    pack.manifest = json::parse(manifest);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("manifest.json: ") + e.what());
  }
  const auto& m = pack.manifest;
  if (!m.is_object() || !m.contains("version") || !m.contains("count") || !m.contains("dims"))
    throw Error(ErrorCode::FormatError, "manifest.json: missing version/count/dims");
  if (m["version"] != kPackVersion)
    throw Error(ErrorCode::FormatError, "manifest.json: unsupported version " + m["version"].dump());
  if (m["count"] != count || m["dims"] != pack.dims)
    throw Error(ErrorCode::FormatError, "manifest.json: count/dims disagree with vectors.bin");
  return pack;
}

/// Writes a pack directory. `extra` fields are merged into the manifest.
inline void write_pack(const fs::path& dir, const Pack& pack, const json& extra = json::object()) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IOError, "cannot create " + dir.string() + ": " + ec.message());
  if (pack.rows.size() != pack.count() * pack.dims)
    throw Error(ErrorCode::DimMismatch, "row buffer does not match count * dims");

  {
    auto out = detail::open_for_write(dir / "vectors.bin", true);
    out.write(kPackMagic.data(), 4);
    detail::put_u32(out, kPackVersion);
    detail::put_u32(out, pack.dims);
    detail::put_u64(out, pack.count());
    detail::put_f32_block(out, pack.rows);
    if (!out) throw Error(ErrorCode::IOError, "write failed: vectors.bin");
  }
  std::set<std::string> labels;
  {
    auto out = detail::open_for_write(dir / "meta.jsonl", false);
    for (const auto& r : pack.records) {
      out << record_to_json(r).dump() << '\n';
      labels.insert(r.label_name);
    }
    if (!out) throw Error(ErrorCode::IOError, "write failed: meta.jsonl");
  }
  json manifest = {{"version", kPackVersion},
                   {"count", pack.count()},
                   {"dims", pack.dims},
                   {"label_count", labels.size()},
                   {"created_at", creation_timestamp()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  auto out = detail::open_for_write(dir / "manifest.json", false);
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IOError, "write failed: manifest.json");
}

/// Lists format problems without throwing; empty means the pack is valid.
inline std::vector<std::string> validate_pack(const fs::path& dir) {
  try {
    read_pack(dir);
  } catch (const Error& e) {
    return {e.what()};
  }
  return {};
}

}  // namespace vismem
