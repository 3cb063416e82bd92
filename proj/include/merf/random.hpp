#pragma once

// Seeded substreams. Every random consumer (a tree, an iteration, a bootstrap
// replicate, a simulation replication) gets its own engine whose seed is a
// pure function of the root seed and a path of integer stream ids, so the
// results never depend on which worker ran what.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace merf {

using Engine = std::mt19937_64;

namespace stream {
// Stream tags keep unrelated consumers apart even when their indices collide.
inline constexpr std::uint64_t tree = 0x7472656501ULL;
inline constexpr std::uint64_t merf_iteration = 0x6974657202ULL;
inline constexpr std::uint64_t bias_correction = 0x6263637203ULL;
inline constexpr std::uint64_t reb_replicate = 0x7265626204ULL;
inline constexpr std::uint64_t reb_refit = 0x7265667405ULL;
inline constexpr std::uint64_t population = 0x706f707006ULL;
inline constexpr std::uint64_t sample = 0x736d706c07ULL;
inline constexpr std::uint64_t method = 0x6d74686408ULL;
inline constexpr std::uint64_t mse = 0x6d73650009ULL;
}  // namespace stream

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a path of stream ids.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(root);
  for (std::uint64_t id : path) h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

inline Engine make_engine(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return make_engine(derive_seed(root, path));
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Engine& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Simple random sample of k out of n indices without replacement, returned
/// in draw order.
inline std::vector<std::size_t> sample_without_replacement(Engine& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace merf
