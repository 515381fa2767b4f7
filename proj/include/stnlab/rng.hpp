#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>

namespace stnlab {

/// Counter-based random stream built on the SplitMix64 finalizer.
///
/// Every stream is identified by a 64-bit key; the i-th draw is
/// `mix(key + (i + 1) * golden)`. Keys for sub-streams are derived by
/// hashing a parent key with integer tags, so per-image or per-step streams
/// can be created in any order (or in parallel) and still yield identical
/// values. Results depend only on integer arithmetic and are identical on
/// every platform.
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t key = 0) : key_(key) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Key of a sub-stream: folds each tag into the parent key.
  static constexpr std::uint64_t derive(std::uint64_t key,
                                        std::initializer_list<std::uint64_t> tags) {
    std::uint64_t k = mix(key ^ 0x6A09E667F3BCC909ULL);
    for (std::uint64_t t : tags) k = mix(k + kGolden + mix(t + 0x3C6EF372FE94F82BULL));
    return k;
  }

  Rng split(std::initializer_list<std::uint64_t> tags) const { return Rng(derive(key_, tags)); }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// FNV-1a over raw bytes; used for checksums and spec hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace stnlab
