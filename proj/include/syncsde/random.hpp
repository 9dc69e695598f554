#pragma once

#include <cstdint>
#include <random>

namespace syncsde {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; decorrelates nearby seeds before they reach the engine.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream `stream` derived from `seed`. Replicate i of a run uses
// stream_seed(base, i); sub-streams inside one computation add a salt.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(stream_seed(seed, stream));
}

// Fixed salts so independent parts of one computation never share a stream.
namespace streams {
inline constexpr std::uint64_t kForward = 0;
inline constexpr std::uint64_t kFreshReverse = 1;
inline constexpr std::uint64_t kResample = 2;
inline constexpr std::uint64_t kInitial = 3;
inline constexpr std::uint64_t kSource = 4;
}  // namespace streams

}  // namespace syncsde
