#include "flsim/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace flsim {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t root, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ splitmix64(a + 0x51ed270b27c8e2a1ULL));
  h = splitmix64(h ^ splitmix64(b + 0x2545f4914f6cdd1dULL));
  return Rng(h);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal(double std) {
  double x;
  do {
    x = normal();
  } while (std::abs(x) > 2.0);
  return x * std;
}

}  // namespace flsim
