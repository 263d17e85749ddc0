#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dvlcal {

/// Master or derived seed for a random stream.
struct RngSeed {
  std::uint64_t value = 0;

  bool operator==(const RngSeed&) const = default;
};

/// Stream identifiers mixed into derived seeds.
enum class Stream : std::uint64_t {
  kDvl = 0x44564cULL,
  kGnss = 0x474e5353ULL,
  kTrajectory = 0x5452414aULL,
  kMonteCarlo = 0x4d43ULL,
  kInit = 0x494e4954ULL,
  kShuffle = 0x53485546ULL,
  kDropout = 0x44524f50ULL,
  kAugment = 0x41554720ULL,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic child seed from a parent and a path of indices.
RngSeed derive_seed(RngSeed parent, std::initializer_list<std::uint64_t> path);

inline RngSeed derive_seed(RngSeed parent, Stream stream,
                           std::initializer_list<std::uint64_t> path = {}) {
  RngSeed s = derive_seed(parent, {static_cast<std::uint64_t>(stream)});
  return path.size() == 0 ? s : derive_seed(s, path);
}

using Rng = std::mt19937_64;

inline Rng make_rng(RngSeed seed) { return Rng(seed.value); }

}  // namespace dvlcal
