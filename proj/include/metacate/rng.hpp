#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace metacate {

using Rng = std::mt19937_64;

// Purpose tags keep the streams for different consumers of one seed apart.
enum class StreamTag : std::uint64_t {
  kForestBag = 0x1001,
  kForestTree = 0x1002,
  kBartChain = 0x2001,
  kTargetProfiles = 0x3001,
  kTargetEffects = 0x3002,
  kStudyEffects = 0x3003,
  kCovariates = 0x3004,
  kTreatments = 0x3005,
  kOutcomes = 0x3006,
  kStage1 = 0x3007,
  kHierarchy = 0x3008,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-style derivation: hashes the seed together with a tag and an
/// ordered list of indices, so every (tag, indices) pair gets its own stream
/// regardless of the order in which streams are created.
inline std::uint64_t derive_seed(std::uint64_t seed, StreamTag tag,
                                 std::initializer_list<std::uint64_t> indices = {}) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(tag)));
  for (std::uint64_t i : indices) h = splitmix64(h ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_stream(std::uint64_t seed, StreamTag tag,
                       std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(seed, tag, indices));
}

}  // namespace metacate
