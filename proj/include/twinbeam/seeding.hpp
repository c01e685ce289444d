#pragma once

#include <cstdint>

namespace twinbeam {

// Seed splitting rule used everywhere a master seed fans out into
// independent streams:
//
//   derive_seed(master, stream, index)
//     = splitmix64(splitmix64(master ^ splitmix64(stream)) + index)
//
// `stream` names the purpose (see SeedStream), `index` the repetition.
// Each repetition therefore owns its generator, so results do not depend on
// how repetitions are scheduled across worker threads.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master ^ splitmix64(stream)) + index);
}

enum class SeedStream : std::uint64_t {
  pulse_pairs = 1,
  electronic_noise = 2,
  calibration_light = 3,
  calibration_trace = 4,
  measurement = 5,
  electronic_only = 6,
  frequency_domain = 7,
  figure = 8,
};

constexpr std::uint64_t derive_seed(std::uint64_t master, SeedStream stream,
                                    std::uint64_t index) noexcept {
  return derive_seed(master, static_cast<std::uint64_t>(stream), index);
}

}  // namespace twinbeam
