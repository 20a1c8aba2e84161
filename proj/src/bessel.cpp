#include "suq/bessel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace suq {
namespace {

double log_bessel_series(double nu, double x) {
  // I_nu(x) = sum_k (x/2)^(2k+nu) / (k! Gamma(nu+k+1)), summed relative to
  // the largest term.
  const double log_half_x = std::log(0.5 * x);
  double log_term = nu * log_half_x - std::lgamma(nu + 1.0);
  std::vector<double> terms;
  terms.reserve(64);
  double peak = log_term;
  for (int k = 0;; ++k) {
    terms.push_back(log_term);
    peak = std::max(peak, log_term);
    if (log_term < peak - 40.0) break;
    log_term += 2.0 * log_half_x - std::log(k + 1.0) - std::log(nu + k + 1.0);
  }
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - peak);
  return peak + std::log(sum);
}

// Hankel expansion: I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k.
// Returns log of the sum only.
double log_hankel_sum(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(term) >= previous) break;  // asymptotic series diverging
    sum += term;
    previous = std::abs(term);
    if (previous < 1e-17 * std::abs(sum)) break;
  }
  return std::log(sum);
}

double log_bessel_asymptotic(double nu, double x) {
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + log_hankel_sum(nu, x);
}

}  // namespace

double bessel_switch_point(double nu) { return std::max(50.0 * nu, 30.0); }

double log_bessel_i(double nu, double x) {
  if (!(nu >= 0.0) || !(x >= 0.0) || !std::isfinite(x) || !std::isfinite(nu)) {
    throw std::domain_error("log_bessel_i: requires finite nu >= 0 and x >= 0");
  }
  if (x == 0.0) {
    return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  if (x < bessel_switch_point(nu)) return log_bessel_series(nu, x);
  return log_bessel_asymptotic(nu, x);
}

double bessel_ratio(double nu, double x) {
  if (x == 0.0) return 0.0;
  if (x >= bessel_switch_point(nu + 1.0)) {
    // The exponential prefactors cancel; only the correction sums remain.
    return std::exp(log_hankel_sum(nu + 1.0, x) - log_hankel_sum(nu, x));
  }
  return std::exp(log_bessel_i(nu + 1.0, x) - log_bessel_i(nu, x));
}

}  // namespace suq
