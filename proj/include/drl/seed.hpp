#pragma once

#include <cstdint>

namespace drl {

// Independent sub-seed for a named stream of a base seed (splitmix64 mix).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kPretrainInit = 3;
inline constexpr std::uint64_t kPretrainShuffle = 4;
inline constexpr std::uint64_t kAuxInit = 5;
inline constexpr std::uint64_t kAuxShuffle = 6;
inline constexpr std::uint64_t kSigma = 7;
inline constexpr std::uint64_t kOod = 100;       // + OOD set index
inline constexpr std::uint64_t kEnsemble = 200;  // + member index
}  // namespace stream

}  // namespace drl
