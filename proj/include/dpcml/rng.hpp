#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dpcml {

using Rng = std::mt19937_64;

// Derives an independent engine from a root seed and a list of stream ids
// (user index, epoch, ...). Same inputs give the same stream.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::seed_seq::result_type words[16];
  std::size_t n = 0;
  words[n++] = static_cast<std::uint32_t>(seed);
  words[n++] = static_cast<std::uint32_t>(seed >> 32);
  for (auto id : stream) {
    if (n + 2 > 16) break;
    words[n++] = static_cast<std::uint32_t>(id);
    words[n++] = static_cast<std::uint32_t>(id >> 32);
  }
  std::seed_seq seq(words, words + n);
  return Rng(seq);
}

// Uniform index in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace dpcml
