#include "suq/sphere.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "suq/bessel.hpp"
#include "suq/parallel.hpp"

namespace suq {

UnitVector::UnitVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 2) throw std::invalid_argument("UnitVector: dimension must be >= 2");
  const double n = values_.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-9) {
    throw std::invalid_argument("UnitVector: norm " + std::to_string(n) + " is not 1");
  }
}

UnitVector UnitVector::normalized(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("UnitVector::normalized: zero or non-finite vector");
  }
  return UnitVector(v / n);
}

UnitVector UnitVector::basis(int d, int axis) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  v(axis) = 1.0;
  return UnitVector(std::move(v));
}

VonMisesFisher::VonMisesFisher(UnitVector mu_, double kappa_) : mu(std::move(mu_)), kappa(kappa_) {
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw std::domain_error("VonMisesFisher: kappa must be finite and >= 0");
  }
}

NonIsotropicVMF::NonIsotropicVMF(UnitVector mu_, Eigen::VectorXd lambda_)
    : mu(std::move(mu_)), lambda(std::move(lambda_)) {
  if (lambda.size() != mu.dim()) throw std::invalid_argument("NonIsotropicVMF: dimension mismatch");
  for (int i = 0; i < lambda.size(); ++i) {
    if (!(lambda(i) > 0.0) || !std::isfinite(lambda(i))) {
      throw std::domain_error("NonIsotropicVMF: lambda entries must be finite and > 0");
    }
  }
}

double log_surface_area(int d) {
  return std::log(2.0) + 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d);
}

double log_normalizer(int d, double kappa) {
  if (d < 2) throw std::invalid_argument("log_normalizer: d must be >= 2");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw std::domain_error("log_normalizer: kappa must be finite and >= 0");
  }
  if (kappa == 0.0) return -log_surface_area(d);
  const double nu = 0.5 * d - 1.0;
  return nu * std::log(kappa) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(nu, kappa);
}

double mean_resultant_length(int d, double kappa) {
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw std::domain_error("mean_resultant_length: kappa must be finite and >= 0");
  }
  return bessel_ratio(0.5 * d - 1.0, kappa);
}

double vmf_log_density(const VonMisesFisher& dist, const Eigen::VectorXd& z) {
  if (z.size() != dist.dim()) throw std::invalid_argument("vmf_log_density: dimension mismatch");
  return log_normalizer(dist.dim(), dist.kappa) + dist.kappa * dist.mu.values().dot(z);
}

double vmf_log_density(const VonMisesFisher& dist, const UnitVector& z) {
  return vmf_log_density(dist, z.values());
}

double nivmf_log_score(const NonIsotropicVMF& dist, const Eigen::VectorXd& z) {
  if (z.size() != dist.dim()) throw std::invalid_argument("nivmf_log_score: dimension mismatch");
  const Eigen::VectorXd lam_mu = dist.lambda.cwiseProduct(dist.mu.values());
  const Eigen::VectorXd lam_z = dist.lambda.cwiseProduct(z);
  return lam_mu.dot(lam_z) / lam_z.norm();
}

double wood_b(int d, double kappa) {
  const double m1 = d - 1.0;
  return m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
}

RadialDraw draw_vmf_radial(int d, double kappa, Rng& rng) {
  const double m1 = d - 1.0;
  const double b = wood_b(d, kappa);
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0 = 2.0 * b / (1.0 + b);
  const double log_one_minus_x0_sq = std::log(one_minus_x0) + std::log1p(x0);
  const double c = kappa * x0 + m1 * log_one_minus_x0_sq;
  for (;;) {
    const double eps = rng.beta(0.5 * m1, 0.5 * m1);
    const double den = 1.0 - (1.0 - b) * eps;
    const double w = (1.0 - (1.0 + b) * eps) / den;
    const double one_minus_w = 2.0 * b * eps / den;
    const double u = rng.uniform();
    // 1 - x0 w = (1 - x0) + x0 (1 - w), kept apart for kappa near 1e6.
    const double one_minus_x0w = one_minus_x0 + x0 * one_minus_w;
    if (kappa * w + m1 * std::log(one_minus_x0w) - c >= std::log(u)) {
      return {w, one_minus_w, eps};
    }
  }
}

Eigen::VectorXd tangent_normal_point(const Eigen::VectorXd& mu, const RadialDraw& radial,
                                     const Eigen::VectorXd& xi) {
  Eigen::VectorXd t = xi - xi.dot(mu) * mu;
  const double tn = t.norm();
  const double r = std::sqrt(radial.one_minus_w * (1.0 + radial.w));
  Eigen::VectorXd z = radial.w * mu + (tn > 0.0 ? (r / tn) * t : Eigen::VectorXd(t));
  return z / z.norm();
}

SampleBatch sample_vmf(const VonMisesFisher& dist, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_vmf: n must be >= 1");
  const int d = dist.dim();
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(n, d);
  const Rng base = Rng(seed).split("sample_vmf");
  parallel_for(n, [&](long i) {
    Rng rng = base.stream(static_cast<std::uint64_t>(i));
    const RadialDraw radial = draw_vmf_radial(d, dist.kappa, rng);
    const Eigen::VectorXd xi = rng.normal_vector(d);
    batch.points.row(i) = tangent_normal_point(dist.mu.values(), radial, xi).transpose();
  });
  return batch;
}

SampleBatch sample_uniform_sphere(int d, int n, std::uint64_t seed) {
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(n, d);
  const Rng base = Rng(seed).split("uniform_sphere");
  parallel_for(n, [&](long i) {
    Rng rng = base.stream(static_cast<std::uint64_t>(i));
    batch.points.row(i) = rng.uniform_on_sphere(d).transpose();
  });
  return batch;
}

KappaEstimate estimate_kappa(const Eigen::MatrixXd& points) {
  if (points.rows() < 2) throw std::invalid_argument("estimate_kappa: need at least 2 samples");
  const double d = static_cast<double>(points.cols());
  const Eigen::VectorXd mean = points.colwise().mean().transpose();
  KappaEstimate out;
  out.mean_resultant = mean.norm();
  const double r = out.mean_resultant;
  if (r >= 1.0 - 1e-12) {
    out.degenerate = true;
    out.kappa = std::numeric_limits<double>::infinity();
    return out;
  }
  out.kappa = r * (d - r * r) / (1.0 - r * r);
  return out;
}

KappaEstimate estimate_kappa(const SampleBatch& samples) { return estimate_kappa(samples.points); }

Eigen::MatrixXd random_rotation(int d, std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("random_rotation: d must be >= 2");
  Rng rng = Rng(seed).split("random_rotation");
  Eigen::MatrixXd g(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  if (q.determinant() < 0.0) q.col(0) *= -1.0;
  return q;
}

Alignment align_rotation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("align_rotation: shape mismatch");
  }
  if (a.rows() < a.cols()) throw std::invalid_argument("align_rotation: need n >= d");
  const Eigen::MatrixXd m = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Alignment out;
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  const Eigen::VectorXd s = svd.singularValues();
  out.degenerate = s.size() == 0 || s(s.size() - 1) <= 1e-12 * std::max(s(0), 1e-300);
  out.residual = (a * out.rotation - b).norm();
  return out;
}

// ---- nivMF normalizer -------------------------------------------------------

namespace {

// Mixture of vMF(μ, κ_j) proposals over a doubling concentration grid, plus
// the uniform distribution.
std::vector<double> proposal_kappas() {
  std::vector<double> k{0.0};
  for (double v = 0.5; v <= 4096.0; v *= 2.0) k.push_back(v);
  return k;
}

std::shared_ptr<const ProposalSet> build_proposal_set(int d, int samples) {
  const std::vector<double> kappas = proposal_kappas();
  const int j_count = static_cast<int>(kappas.size());
  auto set = std::make_shared<ProposalSet>();
  set->dim = d;
  set->cosines.resize(samples);
  set->one_minus_cosines.resize(samples);
  set->directions.resize(samples, d);
  set->log_q.resize(samples);
  std::vector<double> log_c(j_count);
  for (int j = 0; j < j_count; ++j) log_c[j] = log_normalizer(d, kappas[j]);

  const Rng base = Rng(0x6e69766d66ULL).split("nivmf_proposal").stream(
      static_cast<std::uint64_t>(d) * 1000003ULL + static_cast<std::uint64_t>(samples));
  for (int i = 0; i < samples; ++i) {
    Rng rng = base.stream(static_cast<std::uint64_t>(i));
    const double kappa = kappas[i % j_count];
    const RadialDraw radial = draw_vmf_radial(d, kappa, rng);
    set->cosines(i) = radial.w;
    set->one_minus_cosines(i) = radial.one_minus_w;
    set->directions.row(i) = rng.normal_vector(d).transpose();
  }
  // Stratified allotment: component j owns samples i with i % J == j, so the
  // effective mixture weights are the allotted fractions.
  std::vector<double> log_weight(j_count);
  for (int j = 0; j < j_count; ++j) {
    const int count = samples / j_count + (j < samples % j_count ? 1 : 0);
    log_weight[j] = std::log(static_cast<double>(count) / samples);
  }
  for (int i = 0; i < samples; ++i) {
    const double w = set->cosines(i);
    double peak = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(j_count);
    for (int j = 0; j < j_count; ++j) {
      terms[j] = log_weight[j] + log_c[j] + kappas[j] * w;
      peak = std::max(peak, terms[j]);
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - peak);
    set->log_q(i) = peak + std::log(sum);
  }
  return set;
}

std::string normalizer_key(const NonIsotropicVMF& dist, int samples) {
  std::string key(sizeof(int) + 2 * sizeof(double) * dist.dim(), '\0');
  char* p = key.data();
  std::memcpy(p, &samples, sizeof(int));
  p += sizeof(int);
  std::memcpy(p, dist.mu.values().data(), sizeof(double) * dist.dim());
  p += sizeof(double) * dist.dim();
  std::memcpy(p, dist.lambda.data(), sizeof(double) * dist.dim());
  return key;
}

}  // namespace

std::shared_ptr<const ProposalSet> nivmf_proposal_set(int d, int samples) {
  if (samples < 16) throw std::invalid_argument("nivmf_proposal_set: need at least 16 samples");
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const ProposalSet>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{d, samples}];
  if (!slot) slot = build_proposal_set(d, samples);
  return slot;
}

NormalizerEstimate nivmf_log_normalizer(const NonIsotropicVMF& dist, int samples) {
  static std::mutex mutex;
  static std::unordered_map<std::string, NormalizerEstimate> cache;
  const std::string key = normalizer_key(dist, samples);
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  const auto set = nivmf_proposal_set(dist.dim(), samples);
  const Eigen::VectorXd& mu = dist.mu.values();
  Eigen::VectorXd log_w(samples);
  for (int i = 0; i < samples; ++i) {
    RadialDraw radial{set->cosines(i), set->one_minus_cosines(i), 0.0};
    const Eigen::VectorXd z =
        tangent_normal_point(mu, radial, set->directions.row(i).transpose());
    log_w(i) = nivmf_log_score(dist, z) - set->log_q(i);
  }
  const double peak = log_w.maxCoeff();
  const Eigen::ArrayXd w = (log_w.array() - peak).exp();
  const double mean = w.mean();
  const double var = (w - mean).square().sum() / (samples - 1);
  NormalizerEstimate est;
  est.log_value = peak + std::log(mean);
  est.log_standard_error = std::sqrt(var / samples) / mean;
  {
    std::lock_guard<std::mutex> lock(mutex);
    if (cache.size() > 100000) cache.clear();
    cache.emplace(key, est);
  }
  return est;
}

double nivmf_log_density(const NonIsotropicVMF& dist, const Eigen::VectorXd& z, int samples) {
  if (z.size() != dist.dim()) throw std::invalid_argument("nivmf_log_density: dimension mismatch");
  return nivmf_log_score(dist, z) - nivmf_log_normalizer(dist, samples).log_value;
}

double nivmf_log_density(const NonIsotropicVMF& dist, const UnitVector& z, int samples) {
  return nivmf_log_density(dist, z.values(), samples);
}

}  // namespace suq
