#pragma once

#include <cstdint>

#include "suq/autodiff.hpp"

namespace suq::ad {

// Draws k samples from vMF(mu_i, kappa_i) for every row i of mu (n x d, unit
// rows) and kappa (n x 1). The result is (k*n) x d in draw-major order: row
// j*n + i is draw j of distribution i.
//
// The beta variate and the tangent direction of draw (i, j) come from stream
// (seed, i, j) and the accept/reject decisions are frozen, so the samples are
// a differentiable function of (mu, kappa) under common random numbers.
Var reparameterized_vmf_sample(const Var& mu, const Var& kappa, int k, std::uint64_t seed);

// d w / d kappa for the Wood radial map at a fixed beta variate eps.
double wood_dw_dkappa(int d, double kappa, double eps);

}  // namespace suq::ad
