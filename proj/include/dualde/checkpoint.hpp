#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualde/error.hpp"
#include "dualde/models.hpp"
#include "dualde/sem.hpp"

namespace dualde {

// Binary checkpoint layout, all integers and reals little-endian:
//
//   offset  size  field
//   0       4     magic "KGED"
//   4       4     u32 format version
//   8       4     u32 family tag (0 TransE, 1 SimplE, 2 ComplEx, 3 RotatE)
//   12      4     u32 dim
//   16      8     u64 entity count
//   24      8     u64 relation count
//   32      4     u32 flags (bit 0 gate block, bit 1 TransE L1, bit 2 RotatE unsquared)
//   36      4     u32 reserved, zero
//   40      8     u64 init seed
//   48      ...   f32 entity rows, then f32 relation rows, row-major
//                 (SimplE: h^(H), h^(T), r, r^(inv) tables in that order)
//   ...     64    optional gate block: eight f64 (alpha1, beta1, ..., alpha4, beta4)
//
// A human-readable "<path>.meta" sidecar carries key=value run metadata.
inline constexpr std::array<char, 4> kCheckpointMagic = {'K', 'G', 'E', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 48;

enum CheckpointFlags : std::uint32_t {
  kHasGates = 1u << 0,
  kTransEL1 = 1u << 1,
  kRotatEUnsquared = 1u << 2,
};

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  ModelParams params;
  std::optional<SemGate> gates;
  Metadata metadata;
};

namespace detail {

template <class U>
void put_le(std::vector<char>& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <class U>
U get_le(const char* in) {
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), in, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

// On-disk tables in write order, each a column range of an in-memory table.
struct TableSlice {
  bool entity;
  std::size_t rows;
  std::size_t width;
  std::size_t offset;
};

inline std::vector<TableSlice> table_slices(Family f, std::size_t dim, std::size_t ne, std::size_t nr) {
  if (f == Family::kSimplE)
    return {{true, ne, dim, 0}, {true, ne, dim, dim}, {false, nr, dim, 0}, {false, nr, dim, dim}};
  return {{true, ne, ModelParams::entity_width_for(f, dim), 0}, {false, nr, ModelParams::relation_width_for(f, dim), 0}};
}

}  // namespace detail

inline std::string metadata_path(const std::filesystem::path& p) { return p.string() + ".meta"; }

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            const SemGate* gates = nullptr, const Metadata& metadata = {}) {
  std::vector<char> buf;
  buf.reserve(kCheckpointHeaderBytes + 4 * (params.entities.size() + params.relations.size()) + 64);
  buf.insert(buf.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  std::uint32_t flags = 0;
  if (gates) flags |= kHasGates;
  if (params.family.tag == Family::kTransE && params.family.p_norm == 1) flags |= kTransEL1;
  if (params.family.tag == Family::kRotatE && !params.family.rotate_squared) flags |= kRotatEUnsquared;
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.family.tag));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.dim));
  detail::put_le<std::uint64_t>(buf, params.num_entities);
  detail::put_le<std::uint64_t>(buf, params.num_relations);
  detail::put_le<std::uint32_t>(buf, flags);
  detail::put_le<std::uint32_t>(buf, 0);
  detail::put_le<std::uint64_t>(buf, params.seed);

  for (const auto& s : detail::table_slices(params.family.tag, params.dim, params.num_entities, params.num_relations)) {
    const auto& table = s.entity ? params.entities : params.relations;
    const std::size_t stride = s.entity ? params.entity_width() : params.relation_width();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t k = 0; k < s.width; ++k) detail::put_le<float>(buf, table[r * stride + s.offset + k]);
  }
  if (gates)
    for (double v : gates->flat()) detail::put_le<double>(buf, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write to checkpoint " + path.string());

  if (!metadata.empty()) {
    std::ofstream meta(metadata_path(path), std::ios::trunc);
    for (const auto& [k, v] : metadata) meta << k << '=' << v << '\n';
  }
}

inline Metadata read_metadata(const std::filesystem::path& path) {
  Metadata out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// Parses a checkpoint image; never reads past the buffer.
inline Checkpoint parse_checkpoint(const std::vector<char>& buf, const std::string& name = "checkpoint") {
  if (buf.size() < kCheckpointHeaderBytes)
    throw DataError(name + ": size mismatch: expected at least " + std::to_string(kCheckpointHeaderBytes) +
                    " header bytes, got " + std::to_string(buf.size()));
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), buf.begin()))
    throw DataError(name + ": bad magic, not a KGED checkpoint");
  const char* p = buf.data();
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kCheckpointVersion) {
    const std::string hint = version > kCheckpointVersion
                                 ? "written by a newer release; upgrade dualde to read it"
                                 : "written by an older release; re-export it with that release";
    throw DataError(name + ": unsupported format version " + std::to_string(version) + " (this build reads " +
                    std::to_string(kCheckpointVersion) + "), " + hint);
  }
  const auto tag = detail::get_le<std::uint32_t>(p + 8);
  if (tag > 3) throw DataError(name + ": unknown family tag " + std::to_string(tag));
  const auto dim = detail::get_le<std::uint32_t>(p + 12);
  const auto ne = detail::get_le<std::uint64_t>(p + 16);
  const auto nr = detail::get_le<std::uint64_t>(p + 24);
  const auto flags = detail::get_le<std::uint32_t>(p + 32);
  if (dim == 0) throw DataError(name + ": dim is zero");
  if (flags & ~(kHasGates | kTransEL1 | kRotatEUnsquared)) throw DataError(name + ": unknown flag bits");

  const auto family = static_cast<Family>(tag);
  const std::uint64_t ew = ModelParams::entity_width_for(family, dim);
  const std::uint64_t rw = ModelParams::relation_width_for(family, dim);
  // Bound every product by the buffer size before multiplying further.
  const std::uint64_t avail = buf.size();
  auto expected = [&]() -> std::optional<std::uint64_t> {
    if (ne > avail || nr > avail) return std::nullopt;
    const unsigned __int128 floats = static_cast<unsigned __int128>(ne) * ew + static_cast<unsigned __int128>(nr) * rw;
    const unsigned __int128 bytes = kCheckpointHeaderBytes + floats * 4 + ((flags & kHasGates) ? 64 : 0);
    if (bytes > static_cast<unsigned __int128>(UINT64_MAX)) return std::nullopt;
    return static_cast<std::uint64_t>(bytes);
  }();
  if (!expected || *expected != avail)
    throw DataError(name + ": size mismatch: header declares " +
                    (expected ? std::to_string(*expected) : std::string("an impossible number of")) +
                    " bytes, file has " + std::to_string(avail));

  Checkpoint ck;
  auto& m = ck.params;
  m.family.tag = family;
  m.family.p_norm = (flags & kTransEL1) ? 1 : 2;
  m.family.rotate_squared = !(flags & kRotatEUnsquared);
  m.dim = dim;
  m.num_entities = ne;
  m.num_relations = nr;
  m.seed = detail::get_le<std::uint64_t>(p + 40);
  m.entities.resize(ne * ew);
  m.relations.resize(nr * rw);
  std::size_t off = kCheckpointHeaderBytes;
  for (const auto& s : detail::table_slices(family, dim, ne, nr)) {
    auto& table = s.entity ? m.entities : m.relations;
    const std::size_t stride = s.entity ? ew : rw;
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t k = 0; k < s.width; ++k, off += 4) table[r * stride + s.offset + k] = detail::get_le<float>(p + off);
  }
  if (flags & kHasGates) {
    std::array<double, 8> g;
    for (auto& v : g) {
      v = detail::get_le<double>(p + off);
      off += 8;
    }
    ck.gates = SemGate::from_flat(g);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ck = parse_checkpoint(buf, path.string());
  if (std::filesystem::exists(metadata_path(path))) ck.metadata = read_metadata(metadata_path(path));
  return ck;
}

}  // namespace dualde
