#pragma once

#include <cstdint>
#include <random>

namespace mldr {

/// Named substreams of a run's root seed.
enum class Stream : std::uint64_t {
  ClassCenters = 1,
  SampleNoise = 2,
  SplitAssign = 3,
  StudentInit = 4,
  MsdfInit = 5,
  BatchOrder = 6,
  TeacherInit = 7,
  Probe = 8,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based split: the child seed depends only on (root, stream, counter).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t counter = 0) {
  return splitmix64(splitmix64(splitmix64(root) ^ stream) ^ counter);
}

inline std::mt19937_64 make_rng(std::uint64_t root, Stream stream, std::uint64_t counter = 0) {
  return std::mt19937_64(derive_seed(root, static_cast<std::uint64_t>(stream), counter));
}

}  // namespace mldr
