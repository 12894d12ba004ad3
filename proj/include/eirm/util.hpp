#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace eirm {

inline double inv_logit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double log1pexp(double x) {
  if (x > 35.0) return x + std::exp(-x);
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// log(1 + e^x) and the logistic function from a single exponential. The
// estimation kernels use this on both their evaluation paths so that the same
// linear predictor always yields bitwise-identical terms.
inline void logistic_terms(double x, double& log1pe, double& mu) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    log1pe = x + std::log1p(e);
    mu = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(x);
    log1pe = std::log1p(e);
    mu = e / (1.0 + e);
  }
}

// FNV-1a, used for content fingerprints in manifests and outputs.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v);
std::string hex64(std::uint64_t v);

}  // namespace eirm
