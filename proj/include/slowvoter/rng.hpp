#pragma once
#include <array>
#include <cmath>
#include <cstdint>

namespace slowvoter {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Philox 4x32-10 counter-based generator.  A (seed, stream) pair addresses an
// independent sequence; replay needs no state beyond those two words, which is
// what makes per-replica streams cheap to hand out.
class Philox {
 public:
  using result_type = std::uint64_t;

  Philox() : Philox(0, 0) {}
  Philox(std::uint64_t seed, std::uint64_t stream) {
    key_[0] = static_cast<std::uint32_t>(seed);
    key_[1] = static_cast<std::uint32_t>(seed >> 32);
    stream_[0] = static_cast<std::uint32_t>(stream);
    stream_[1] = static_cast<std::uint32_t>(stream >> 32);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ull; }

  result_type operator()() {
    if (lane_ == 4) refill();
    std::uint64_t lo = out_[lane_], hi = out_[lane_ + 1];
    lane_ += 2;
    return lo | (hi << 32);
  }

  // 53-bit uniform in [0, 1).
  double uniform01() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double exponential(double rate) {
    return -std::log1p(-uniform01()) / rate;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double v1, v2, s;
    do {
      v1 = 2.0 * uniform01() - 1.0;
      v2 = 2.0 * uniform01() - 1.0;
      s = v1 * v1 + v2 * v2;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v2 * f;
    has_cached_ = true;
    return v1 * f;
  }

  // Exactly uniform on {0, ..., n-1} (debiased multiply-shift).
  std::uint64_t bounded(std::uint64_t n) {
    __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
    auto l = static_cast<std::uint64_t>(m);
    if (l < n) {
      std::uint64_t t = (0 - n) % n;
      while (l < t) {
        m = static_cast<__uint128_t>((*this)()) * n;
        l = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // One keyed 128-bit block (10 rounds).  Public so known-answer vectors can
  // pin the exact sequence down in tests.
  static std::array<std::uint32_t, 4> raw_block(
      std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    for (int r = 0; r < 10; ++r) {
      std::uint64_t p0 = 0xD2511F53ull * c[0];
      std::uint64_t p1 = 0xCD9E8D57ull * c[2];
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    return c;
  }

 private:
  void refill() {
    auto o = raw_block({static_cast<std::uint32_t>(block_),
                        static_cast<std::uint32_t>(block_ >> 32),
                        stream_[0], stream_[1]},
                       {key_[0], key_[1]});
    out_[0] = o[0]; out_[1] = o[1]; out_[2] = o[2]; out_[3] = o[3];
    ++block_;
    lane_ = 0;
  }

  std::uint32_t key_[2];
  std::uint32_t stream_[2];
  std::uint64_t block_ = 0;
  std::uint32_t out_[4] = {};
  int lane_ = 4;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stream ids for replica r of a named computation.  Purpose tags keep streams
// used by different operations on the same seed from colliding.
inline Philox make_stream(std::uint64_t seed, std::uint64_t purpose,
                          std::uint64_t replica) {
  return Philox(seed, splitmix64(purpose * 0x9e3779b97f4a7c15ull + replica));
}

}  // namespace slowvoter
