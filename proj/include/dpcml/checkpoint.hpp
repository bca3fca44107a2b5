#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dpcml/embedding.hpp"
#include "dpcml/error.hpp"

namespace dpcml {

// Binary layout, all little-endian:
//   "DPCM" | version u32 | users u32 | items u32 | C u32 | d u32 | variant u32
//   | r f64 | user table f32[users*C*d] | item table f32[items*d]
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t x) {
  const std::array<char, 4> b{static_cast<char>(x & 0xff), static_cast<char>((x >> 8) & 0xff),
                              static_cast<char>((x >> 16) & 0xff), static_cast<char>((x >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t x) {
  put_u32(out, static_cast<std::uint32_t>(x));
  put_u32(out, static_cast<std::uint32_t>(x >> 32));
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | hi << 32;
}

inline std::uint32_t narrow_u32(std::size_t n, const char* what) {
  if (n > UINT32_MAX) throw Error(std::string(what) + " does not fit the checkpoint header");
  return static_cast<std::uint32_t>(n);
}

}  // namespace detail

template <class Real>
void write_checkpoint(std::ostream& out, const EmbeddingStore<Real>& store) {
  using namespace detail;
  out.write("DPCM", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, narrow_u32(store.num_users(), "user count"));
  put_u32(out, narrow_u32(store.num_items(), "item count"));
  put_u32(out, narrow_u32(store.C(), "C"));
  put_u32(out, narrow_u32(store.dim(), "d"));
  put_u32(out, static_cast<std::uint32_t>(store.variant()));
  put_u64(out, std::bit_cast<std::uint64_t>(store.radius()));
  auto table = [&out](auto span) {
    for (auto x : span) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  };
  table(store.user_table());
  table(store.item_table());
  if (!out) throw IoError("checkpoint write failed");
}

inline EmbeddingStore<float> read_checkpoint(std::istream& in) {
  using namespace detail;
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DPCM", 4) != 0) throw IoError("not a DPCM checkpoint");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::size_t users = get_u32(in);
  const std::size_t items = get_u32(in);
  const std::size_t C = get_u32(in);
  const std::size_t d = get_u32(in);
  const auto variant = get_u32(in);
  if (variant > 1) throw IoError("unknown score variant code " + std::to_string(variant));
  const double r = std::bit_cast<double>(get_u64(in));
  EmbeddingStore<float> store(users, items, C, d, r, static_cast<ScoreVariant>(variant));
  for (auto& x : store.user_table()) x = std::bit_cast<float>(get_u32(in));
  for (auto& x : store.item_table()) x = std::bit_cast<float>(get_u32(in));
  return store;
}

template <class Real>
void save_checkpoint(const std::string& path, const EmbeddingStore<Real>& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, store);
}

inline EmbeddingStore<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace dpcml
