#pragma once

namespace suq {

// log I_nu(x) for nu >= 0, x >= 0. Power series below the switch point,
// Hankel asymptotic expansion above it; stays finite for x up to 1e6 and
// beyond, where I_nu itself overflows.
double log_bessel_i(double nu, double x);

// Switch point between the series and the asymptotic branch.
double bessel_switch_point(double nu);

// I_{nu+1}(x) / I_nu(x), evaluated from the log-domain values.
double bessel_ratio(double nu, double x);

}  // namespace suq
