#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace fedesn {

/// Seeded generator whose output is identical on every conforming platform.
/// std::mt19937_64's raw sequence is fixed by the standard; the distribution
/// classes are not, so the conversions to real/integer ranges live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = kFnvOffset) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= kFnvPrime;
  }
  return hash;
}

inline std::string to_hex16(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

/// Per-(round, client) seed: FNV-1a over "<master>:<round>:<client_id>".
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t round,
                                 std::string_view client_id) {
  std::string key = std::to_string(master_seed);
  key += ':';
  key += std::to_string(round);
  key += ':';
  key += client_id;
  return fnv1a64(key);
}

}  // namespace fedesn
