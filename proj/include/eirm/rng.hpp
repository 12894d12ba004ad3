#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace eirm {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across platforms and standard-library versions; the std::
// distributions make no such promise.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : s_) word = splitmix64(x);
    have_normal_ = false;
    cached_normal_ = 0.0;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via the polar (Marsaglia) method; avoids trig functions
  // whose last-bit behavior differs between libm builds.
  double normal() {
    if (have_normal_) {
      have_normal_ = false;
      return cached_normal_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    cached_normal_ = v * m;
    have_normal_ = true;
    return u * m;
  }

  // Uniform integer in [0, n) by rejection from the smallest covering
  // power of two, so no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~std::uint64_t{0} >> countl_zero(n - 1);
    std::uint64_t r;
    do {
      r = next() & mask;
    } while (r >= n);
    return r;
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = static_cast<int>(below(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
  }

private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  static int countl_zero(std::uint64_t v) {
    if (v == 0) return 64;
    return __builtin_clzll(v);
  }

  std::uint64_t s_[4];
  bool have_normal_;
  double cached_normal_;
};

}  // namespace eirm
