#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "trident/parameter.hpp"

namespace trident {

// Layout, all integers little-endian:
//   "TDNT" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank] | u64 payload byte offset
//   payload: contiguous f64 values, entries back to back
inline constexpr char kCheckpointMagic[4] = {'T', 'D', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Dims dims;
  std::vector<Real> values;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

 private:
  void need(std::size_t n, const char* what) const {
    require(pos_ + n <= bytes_.size(), "checkpoint truncated while reading ", what, " at byte ", pos_);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  std::set<std::string> seen;
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    require(seen.insert(e.name).second, "duplicate checkpoint entry '", e.name, "'");
    require(product(e.dims) == e.values.size(), "checkpoint entry '", e.name, "' has inconsistent dims");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) detail::put_le<std::uint64_t>(out, d);
    detail::put_le<std::uint64_t>(out, offset);
    offset += e.values.size() * sizeof(Real);
  }
  for (const auto& e : entries)
    for (auto v : e.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.take(4, "magic");
  require(magic == std::string(kCheckpointMagic, 4), "not a TDNT checkpoint (bad magic)");
  auto version = r.get<std::uint32_t>("version");
  require(version == kCheckpointVersion, "unsupported checkpoint version ", version, " (expected ",
          kCheckpointVersion, ")");
  auto count = r.get<std::uint32_t>("entry count");
  std::vector<CheckpointEntry> entries;
  std::vector<std::uint64_t> offsets;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    auto len = r.get<std::uint32_t>("name length");
    e.name = r.take(len, "name");
    require(!e.name.empty(), "checkpoint entry ", i, " has an empty name");
    require(seen.insert(e.name).second, "duplicate checkpoint entry '", e.name, "'");
    auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.dims.push_back(r.get<std::uint64_t>("dims"));
    for (auto d : e.dims) require(d > 0, "checkpoint entry '", e.name, "' has a zero dimension");
    offsets.push_back(r.get<std::uint64_t>("byte offset"));
    entries.push_back(std::move(e));
  }
  const std::size_t base = r.position();
  const std::size_t payload = bytes.size() - base;
  std::size_t expected = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    const std::size_t n = product(e.dims);
    require(offsets[i] % sizeof(Real) == 0, "checkpoint entry '", e.name, "' has a misaligned offset");
    require(offsets[i] + n * sizeof(Real) <= payload, "checkpoint truncated: entry '", e.name, "' needs bytes [",
            offsets[i], ", ", offsets[i] + n * sizeof(Real), ") but the payload holds ", payload);
    expected = std::max<std::size_t>(expected, offsets[i] + n * sizeof(Real));
    r.seek(base + offsets[i]);
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<Real>(r.get<std::uint64_t>("payload"));
  }
  require(payload == expected, "checkpoint has ", payload - expected, " trailing bytes after the payload");
  return entries;
}

inline std::vector<CheckpointEntry> snapshot(const ParameterStore& store) {
  std::vector<CheckpointEntry> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    out.push_back({p.name(), p.dims(), {p.value().data().begin(), p.value().data().end()}});
  }
  return out;
}

/// Copies entries into an existing store. Every parameter must be present
/// with matching dims and no unknown entries may remain.
inline void restore(ParameterStore& store, const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    auto it = by_name.find(p.name());
    require(it != by_name.end(), "checkpoint lacks parameter '", p.name(), "'");
    require(it->second->dims == p.dims(), "parameter '", p.name(), "' has dims ", to_string(it->second->dims),
            " in the checkpoint but ", to_string(p.dims()), " in the model");
  }
  for (const auto& e : entries)
    require(store.contains(e.name), "checkpoint parameter '", e.name, "' does not exist in the model");
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const auto& src = by_name[p.name()]->values;
    auto dst = p.value().mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    p.momentum_buffer().clear();
  }
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '", path, "' for writing");
  auto bytes = encode_checkpoint(snapshot(store));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), "failed writing checkpoint '", path, "'");
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open checkpoint '", path, "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
}

inline void load_checkpoint(const std::string& path, ParameterStore& store) {
  auto entries = read_checkpoint(path);
  try {
    restore(store, entries);
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
}

}  // namespace trident
