#pragma once

#include <cstdint>
#include <memory>

#include <Eigen/Dense>

#include "suq/rng.hpp"

namespace suq {

// A direction on S^{d-1}, d >= 2. Construction checks the norm.
class UnitVector {
 public:
  explicit UnitVector(Eigen::VectorXd values);
  static UnitVector normalized(const Eigen::VectorXd& v);
  static UnitVector basis(int d, int axis);

  int dim() const { return static_cast<int>(values_.size()); }
  const Eigen::VectorXd& values() const { return values_; }
  double operator[](int i) const { return values_(i); }
  UnitVector operator-() const { return UnitVector(Eigen::VectorXd(-values_)); }

 private:
  Eigen::VectorXd values_;
};

struct VonMisesFisher {
  VonMisesFisher(UnitVector mu, double kappa);
  int dim() const { return mu.dim(); }

  UnitVector mu;
  double kappa;
};

// Non-isotropic vMF with diagonal scales Lambda = diag(lambda):
//   p(z) ∝ exp( (Λμ)ᵀ(Λz) / ‖Λz‖ ).
// With every lambda equal to c this is vMF(μ, c).
struct NonIsotropicVMF {
  NonIsotropicVMF(UnitVector mu, Eigen::VectorXd lambda);
  int dim() const { return mu.dim(); }

  UnitVector mu;
  Eigen::VectorXd lambda;
};

// n x d matrix of unit rows.
struct SampleBatch {
  Eigen::MatrixXd points;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

inline constexpr int kDefaultNormalizerSamples = 1 << 14;

double log_surface_area(int d);

// log C_d(kappa), C_d(kappa) = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa)).
double log_normalizer(int d, double kappa);

// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa): the mean resultant length
// of vMF(., kappa) and minus the derivative of log C_d.
double mean_resultant_length(int d, double kappa);

double vmf_log_density(const VonMisesFisher& dist, const UnitVector& z);
double vmf_log_density(const VonMisesFisher& dist, const Eigen::VectorXd& z);

// Unnormalized nivMF log score (Λμ)ᵀ(Λz)/‖Λz‖.
double nivmf_log_score(const NonIsotropicVMF& dist, const Eigen::VectorXd& z);

struct NormalizerEstimate {
  double log_value = 0.0;
  // Delta-method standard error of log_value.
  double log_standard_error = 0.0;
};

// Importance-weighted Monte Carlo estimate of log ∫ exp(score). The proposal
// points are fixed per (d, m) and rotated onto μ, so the estimate is a
// deterministic, smooth function of (μ, λ). Results are cached.
NormalizerEstimate nivmf_log_normalizer(const NonIsotropicVMF& dist,
                                        int samples = kDefaultNormalizerSamples);

double nivmf_log_density(const NonIsotropicVMF& dist, const UnitVector& z,
                         int samples = kDefaultNormalizerSamples);
double nivmf_log_density(const NonIsotropicVMF& dist, const Eigen::VectorXd& z,
                         int samples = kDefaultNormalizerSamples);

// Fixed proposal used by the nivMF normalizer. Sample i sits at
//   z_i(μ) = w_i μ + sqrt(1 - w_i²) · P⊥ξ_i / ‖P⊥ξ_i‖
// with log proposal density log_q(i), a function of w_i only.
struct ProposalSet {
  int dim = 0;
  Eigen::VectorXd cosines;
  Eigen::VectorXd one_minus_cosines;
  Eigen::MatrixXd directions;
  Eigen::VectorXd log_q;
};
std::shared_ptr<const ProposalSet> nivmf_proposal_set(int d, int samples);

// One accepted radial draw of the Wood rejection sampler.
struct RadialDraw {
  double w = 0.0;
  double one_minus_w = 0.0;
  double epsilon = 0.0;
};
RadialDraw draw_vmf_radial(int d, double kappa, Rng& rng);

// Envelope parameter b of the Wood sampler; the radial proposal for a beta
// variate ε is w = (1-(1+b)ε)/(1-(1-b)ε).
double wood_b(int d, double kappa);

// wμ + sqrt(1-w²) · normalize(ξ - (ξᵀμ)μ).
Eigen::VectorXd tangent_normal_point(const Eigen::VectorXd& mu, const RadialDraw& radial,
                                     const Eigen::VectorXd& xi);

// Draws n samples; sample i uses its own stream, so results do not depend on
// how the batch is sharded across threads.
SampleBatch sample_vmf(const VonMisesFisher& dist, int n, std::uint64_t seed);
SampleBatch sample_uniform_sphere(int d, int n, std::uint64_t seed);

struct KappaEstimate {
  double kappa = 0.0;
  double mean_resultant = 0.0;
  // Set when the mean resultant length is within 1e-12 of one; kappa is
  // then +inf rather than a huge finite number.
  bool degenerate = false;
};
KappaEstimate estimate_kappa(const SampleBatch& samples);
KappaEstimate estimate_kappa(const Eigen::MatrixXd& points);

// Haar-distributed rotation (det +1).
Eigen::MatrixXd random_rotation(int d, std::uint64_t seed);

struct Alignment {
  Eigen::MatrixXd rotation;
  double residual = 0.0;  // ‖aQ - b‖_F
  bool degenerate = false;
};
// Orthogonal Procrustes: argmin over orthogonal Q of ‖aQ - b‖_F.
Alignment align_rotation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace suq
