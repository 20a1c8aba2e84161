#pragma once

#include <cstdint>
#include <variant>

#include "suq/autodiff.hpp"
#include "suq/sphere.hpp"

namespace suq {

struct SimilarityValue {
  double value = 0.0;
  bool log_domain = false;
};

// Result of a Monte Carlo kernel estimate.
struct KernelEstimate {
  SimilarityValue similarity;  // log of the estimated integral
  double mean = 0.0;           // estimated integral
  double standard_error = 0.0;  // of `mean`
  double log_standard_error = 0.0;  // of similarity.value (delta method)
};

using Density = std::variant<VonMisesFisher, NonIsotropicVMF>;

SimilarityValue cosine_similarity(const UnitVector& a, const UnitVector& b);

// log ∫ p q = log C_d(κ₁) + log C_d(κ₂) - log C_d(‖κ₁μ₁ + κ₂μ₂‖).
SimilarityValue elk_vmf_vmf(const VonMisesFisher& p, const VonMisesFisher& q);

// Draws n points from p and averages q's density. n >= 1000.
KernelEstimate elk_mc(const VonMisesFisher& p, const Density& q, int n, std::uint64_t seed,
                      int normalizer_samples = kDefaultNormalizerSamples);

KernelEstimate elk_vmf_nivmf(const VonMisesFisher& p, const NonIsotropicVMF& q, int n,
                             std::uint64_t seed,
                             int normalizer_samples = kDefaultNormalizerSamples);

namespace ad {

// nivMF log score of each row of z (n x d) under (mu, lambda), both 1 x d.
Var nivmf_log_score(const Var& z, const Var& mu, const Var& lambda);

// log of the nivMF normalizer as a 1 x 1 node. The value comes from the
// cached fixed-proposal estimate; mu is normalised internally.
Var nivmf_log_normalizer(const Var& mu, const Var& lambda, int samples);

// Log-ELK between vMF(p_mu_i, p_kappa_i) and nivMF(q_mu, q_lambda), one value
// per row of p (n x 1), via k reparameterized draws per row.
Var elk_vmf_nivmf(const Var& p_mu, const Var& p_kappa, const Var& q_mu, const Var& q_lambda,
                  int k, std::uint64_t seed, int normalizer_samples = kDefaultNormalizerSamples);

// Same kernel from pre-drawn samples z ((k*n) x d, draw-major as produced by
// reparameterized_vmf_sample), so several targets can share one set of draws.
Var elk_from_samples(const Var& z, int k, const Var& q_mu, const Var& q_lambda,
                     int normalizer_samples = kDefaultNormalizerSamples);

}  // namespace ad

}  // namespace suq
