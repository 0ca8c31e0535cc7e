#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace pg {

/// Seeded generator with platform-independent real conversions.
///
/// std::mt19937_64's bit stream is fixed by the standard; the distribution
/// classes are not, so uniform/normal are derived here directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  int index(int n) { return int(bits() % std::uint64_t(n)); }

 private:
  std::mt19937_64 engine_;
};

/// FNV-1a mix of a seed with a name; used to give each parameter its own
/// stream so adding a layer never perturbs the others.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (char c : name) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace pg
