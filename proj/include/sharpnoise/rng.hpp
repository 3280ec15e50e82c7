#pragma once

// Counter-based random streams (Philox4x32-10). Every draw is a pure function
// of (seed, stream, index), so parallel and serial consumers agree exactly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace sharpnoise {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Mix a textual tag and up to two integers into a 64-bit stream id.
std::uint64_t stream_id(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0);

// Random-access view of one stream: block(i) is the i-th 128-bit output.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  PhiloxCounter block(std::uint64_t index) const;
  // Uniform on (0, 1], 53-bit resolution.
  double uniform_at(std::uint64_t index) const;
  // Standard normal; indices 2k and 2k+1 share one Box-Muller pair.
  double normal_at(std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  PhiloxKey key_;
};

// Sequential consumer of a CounterRng.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

  std::uint32_t next_u32();
  // Uniform on [0, 1).
  double uniform();
  double normal();
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  CounterRng rng_;
  std::uint64_t block_index_ = 0;
  PhiloxCounter buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sharpnoise
