#pragma once

// Counter-based random numbers (Philox4x32-10). A draw is a pure function of
// (seed, stream, step, index), so Monte Carlo work can be split across
// workers in any order and still reproduce bit-identical results.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace antfilter {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Random stream keyed by (seed, stream). Each (step, index) pair addresses an
/// independent 128-bit block.
class CounterRng {
 public:
  /// Reserved step index for draws that are not tied to a time step.
  static constexpr std::uint32_t kSetupStep = 0xFFFFFFFFu;

  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  Philox4x32Counter block(std::uint32_t step, std::uint32_t index) const {
    return philox4x32_10({index, step, static_cast<std::uint32_t>(stream_),
                          static_cast<std::uint32_t>(stream_ >> 32)},
                         key_);
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double uniform(std::uint32_t step, std::uint32_t index) const {
    const auto b = block(step, index);
    return to_unit(b[0], b[1]);
  }

  /// Standard normals number offset .. offset + out.size() - 1 of a step,
  /// two per block by Box-Muller.
  void normals(std::uint32_t step, std::span<double> out, std::uint32_t offset = 0) const {
    std::size_t i = 0;
    while (i < out.size()) {
      const std::uint32_t idx = offset + static_cast<std::uint32_t>(i);
      const auto pair = normal_pair(step, idx / 2);
      out[i++] = pair[idx % 2];
      if (idx % 2 == 0 && i < out.size()) out[i++] = pair[1];
    }
  }

  std::array<double, 2> normal_pair(std::uint32_t step, std::uint32_t block_index) const {
    const auto b = block(step, block_index);
    const double u1 = to_unit(b[0], b[1]);
    const double u2 = to_unit(b[2], b[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  std::uint64_t stream() const { return stream_; }

 private:
  Philox4x32Key key_;
  std::uint64_t stream_;
};

}  // namespace antfilter
