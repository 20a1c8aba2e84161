#include "suq/rng.hpp"

#include <cmath>
#include <numbers>

namespace suq {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_string(std::string_view s) {
  // FNV-1a, then a finalizer so short labels spread over all bits.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

Rng::Rng(std::uint64_t key, bool) : key_(key) {}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(key_ ^ hash_string(label)), true);
}

Rng Rng::stream(std::uint64_t index) const {
  return Rng(mix64(key_ ^ mix64(index + 0x632be59bd9b4e019ULL)), true);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ ^ mix64(counter_ * 0x9e3779b97f4a7c15ULL));
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double shape) {
  // Marsaglia-Tsang; shapes below one use the U^(1/a) boost.
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

std::uint64_t Rng::index(std::uint64_t n) {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return r % n;
}

Eigen::VectorXd Rng::normal_vector(int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = normal();
  return v;
}

Eigen::VectorXd Rng::uniform_on_sphere(int d) {
  for (;;) {
    Eigen::VectorXd v = normal_vector(d);
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

}  // namespace suq
