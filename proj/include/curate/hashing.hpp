#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

namespace curate {

/// SplitMix64 finalizer. Used everywhere a 64-bit value needs to be mixed
/// into a well-distributed key.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// Incremental FNV-1a over bytes. Stable across hosts and runs.
class Fnv1a {
 public:
  constexpr Fnv1a() noexcept = default;
  constexpr explicit Fnv1a(std::uint64_t seed) noexcept : state_{kFnvOffset ^ mix64(seed)} {}

  constexpr Fnv1a& byte(std::uint8_t b) noexcept {
    state_ = (state_ ^ b) * kFnvPrime;
    return *this;
  }
  constexpr Fnv1a& bytes(std::string_view s) noexcept {
    for (char c : s) byte(static_cast<std::uint8_t>(c));
    return *this;
  }
  constexpr Fnv1a& u64(std::uint64_t v) noexcept {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }

  [[nodiscard]] constexpr std::uint64_t raw() const noexcept { return state_; }
  [[nodiscard]] constexpr std::uint64_t digest() const noexcept { return mix64(state_); }

 private:
  std::uint64_t state_ = kFnvOffset;
};

inline std::uint64_t stable_hash(std::string_view s, std::uint64_t seed = 0) noexcept {
  return Fnv1a(seed).bytes(s).digest();
}

/// Combines a seed with any number of 64-bit words into one key.
template <typename... Words>
constexpr std::uint64_t keyed_hash(std::uint64_t seed, Words... words) noexcept {
  std::uint64_t h = mix64(seed);
  ((h = mix64(h ^ static_cast<std::uint64_t>(words))), ...);
  return h;
}

/// Maps a 64-bit key to a double strictly inside (0, 1).
constexpr double to_open_unit(std::uint64_t h) noexcept {
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

/// Small deterministic generator (SplitMix64 stream). Unlike the standard
/// distributions its outputs are identical on every platform.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : state_{seed} {}

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % bound;
  }

  double uniform() noexcept { return to_open_unit((*this)()); }

 private:
  std::uint64_t state_;
};

}  // namespace curate
