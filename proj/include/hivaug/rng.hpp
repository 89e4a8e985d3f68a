#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

namespace hivaug {

// Philox4x32-10 counter-based generator. A stream is fully determined by its
// 64-bit key; draws are a pure function of (key, counter), so substreams
// handed to parallel workers never overlap and never depend on scheduling.
class Philox {
 public:
  using result_type = std::uint64_t;

  explicit Philox(std::uint64_t key = 0) : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  std::uint64_t key() const { return std::uint64_t(key_[0]) | (std::uint64_t(key_[1]) << 32); }

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double normal();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_{0, 0, 0, 0};
  std::array<std::uint32_t, 4> block_{0, 0, 0, 0};
  int pos_ = 4;
};

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

// Named substream of a master seed, e.g. "area:A03/stage:imis/rep:2".
Philox substream(std::uint64_t master_seed, std::string_view name);

std::string stream_name(std::string_view area, std::string_view stage, int rep);

}  // namespace hivaug
