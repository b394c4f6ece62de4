#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace trajattr {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent, order-free substreams
// such as (seed, scene_id) or (seed, scene_id, agent_id).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k));
  return h;
}

}  // namespace trajattr
