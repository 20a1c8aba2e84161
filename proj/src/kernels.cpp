#include "suq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "suq/vmf_reparam.hpp"

namespace suq {

SimilarityValue cosine_similarity(const UnitVector& a, const UnitVector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double c = a.values().dot(b.values());
  return {std::clamp(c, -1.0, 1.0), false};
}

SimilarityValue elk_vmf_vmf(const VonMisesFisher& p, const VonMisesFisher& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("elk_vmf_vmf: dimension mismatch");
  const int d = p.dim();
  const double k = (p.kappa * p.mu.values() + q.kappa * q.mu.values()).norm();
  return {log_normalizer(d, p.kappa) + log_normalizer(d, q.kappa) - log_normalizer(d, k), true};
}

KernelEstimate elk_mc(const VonMisesFisher& p, const Density& q, int n, std::uint64_t seed,
                      int normalizer_samples) {
  if (n < 1000) throw std::invalid_argument("elk_mc: n must be >= 1000");
  const int d = p.dim();
  const int qd = std::visit([](const auto& dist) { return dist.dim(); }, q);
  if (qd != d) throw std::invalid_argument("elk_mc: dimension mismatch");
  const SampleBatch z = sample_vmf(p, n, seed);
  Eigen::VectorXd log_q(n);
  double normalizer_se = 0.0;
  if (const auto* v = std::get_if<VonMisesFisher>(&q)) {
    for (int i = 0; i < n; ++i) log_q(i) = vmf_log_density(*v, Eigen::VectorXd(z.points.row(i)));
  } else {
    const auto& ni = std::get<NonIsotropicVMF>(q);
    const NormalizerEstimate norm = nivmf_log_normalizer(ni, normalizer_samples);
    normalizer_se = norm.log_standard_error;
    for (int i = 0; i < n; ++i) {
      log_q(i) = nivmf_log_score(ni, Eigen::VectorXd(z.points.row(i))) - norm.log_value;
    }
  }
  const double peak = log_q.maxCoeff();
  const Eigen::ArrayXd w = (log_q.array() - peak).exp();
  const double m = w.mean();
  const double var = n > 1 ? (w - m).square().sum() / (n - 1) : 0.0;
  KernelEstimate est;
  est.similarity = {peak + std::log(m), true};
  est.mean = std::exp(est.similarity.value);
  const double rel = std::sqrt(var / n) / m;
  est.log_standard_error = std::sqrt(rel * rel + normalizer_se * normalizer_se);
  est.standard_error = est.mean * est.log_standard_error;
  return est;
}

KernelEstimate elk_vmf_nivmf(const VonMisesFisher& p, const NonIsotropicVMF& q, int n,
                             std::uint64_t seed, int normalizer_samples) {
  if (p.dim() != q.dim()) throw std::invalid_argument("elk_vmf_nivmf: dimension mismatch");
  return elk_mc(p, Density(q), n, seed, normalizer_samples);
}

namespace ad {

Var nivmf_log_score(const Var& z, const Var& mu, const Var& lambda) {
  if (mu.rows() != 1 || lambda.rows() != 1 || mu.cols() != z.cols() || lambda.cols() != z.cols()) {
    throw std::invalid_argument("nivmf_log_score: mu and lambda must be 1 x d");
  }
  Var y = mul_row(z, lambda);
  Var a = mul(mu, lambda);
  return div(matmul(y, transpose(a)), row_norm(y));
}

Var nivmf_log_normalizer(const Var& mu, const Var& lambda, int samples) {
  if (mu.tape() != lambda.tape()) throw std::invalid_argument("ops on different tapes");
  if (mu.rows() != 1 || lambda.rows() != 1 || mu.cols() != lambda.cols()) {
    throw std::invalid_argument("nivmf_log_normalizer: mu and lambda must be 1 x d");
  }
  const Eigen::VectorXd m = mu.value().row(0).transpose();
  const Eigen::VectorXd lam = lambda.value().row(0).transpose();
  const NonIsotropicVMF dist(UnitVector::normalized(m), lam);
  const double value = suq::nivmf_log_normalizer(dist, samples).log_value;
  const int im = mu.id(), il = lambda.id();
  return mu.tape()->record(
      Matrix::Constant(1, 1, value), {im, il},
      [im, il, samples, value](Tape& t, const Matrix& g) {
        const Eigen::VectorXd mu = t.value(im).row(0).transpose().normalized();
        const Eigen::VectorXd lam = t.value(il).row(0).transpose();
        const int d = static_cast<int>(mu.size());
        const auto set = nivmf_proposal_set(d, samples);
        const Eigen::VectorXd a = lam.cwiseProduct(mu);
        Eigen::VectorXd g_mu = Eigen::VectorXd::Zero(d);
        Eigen::VectorXd g_lam = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < samples; ++i) {
          const RadialDraw radial{set->cosines(i), set->one_minus_cosines(i), 0.0};
          const Eigen::VectorXd x = set->directions.row(i).transpose();
          const Eigen::VectorXd z = tangent_normal_point(mu, radial, x);
          const Eigen::VectorXd y = lam.cwiseProduct(z);
          const double ny = y.norm();
          const double p = a.dot(y);
          const double s = p / ny;
          // Normalised importance weight w_i / sum_j w_j = exp(log_w - log(m Z)).
          const double wt = std::exp(s - set->log_q(i) - value) / samples;
          const double ny3 = ny * ny * ny;
          g_lam += wt * ((mu.cwiseProduct(y) + a.cwiseProduct(z)) / ny -
                         (p / ny3) * y.cwiseProduct(z));
          g_mu += wt * lam.cwiseProduct(y) / ny;
          const Eigen::VectorXd gz = lam.cwiseProduct(a / ny - (p / ny3) * y);
          const double w = radial.w;
          const double r = std::sqrt(radial.one_minus_w * (1.0 + w));
          const double ax = x.dot(mu);
          const Eigen::VectorXd tv = x - ax * mu;
          const double tn = tv.norm();
          g_mu += wt * w * gz;
          if (tn > 0.0) {
            const Eigen::VectorXd v = tv / tn;
            const Eigen::VectorXd h = (r / tn) * (gz - v.dot(gz) * v);
            g_mu -= wt * (h.dot(mu) * x + ax * h);
          }
        }
        // Chain through the internal normalisation of mu.
        const Eigen::VectorXd raw = t.value(im).row(0).transpose();
        const double rn = raw.norm();
        const Eigen::VectorXd g_raw = (g_mu - mu.dot(g_mu) * mu) / rn;
        t.accumulate(im, g(0, 0) * Matrix(g_raw.transpose()));
        t.accumulate(il, g(0, 0) * Matrix(g_lam.transpose()));
      },
      "nivmf_log_normalizer");
}

Var elk_from_samples(const Var& z, int k, const Var& q_mu, const Var& q_lambda,
                     int normalizer_samples) {
  if (k < 1 || z.rows() % k != 0) throw std::invalid_argument("elk_from_samples: bad k");
  const Eigen::Index n = z.rows() / k;
  Var log_q = nivmf_log_score(z, q_mu, q_lambda);
  Var log_z = nivmf_log_normalizer(q_mu, q_lambda, normalizer_samples);
  std::vector<Var> cols;
  cols.reserve(k);
  for (int j = 0; j < k; ++j) cols.push_back(slice_rows(log_q, j * n, n));
  Var per_row = row_logmeanexp(concat_cols(cols));
  Var lz = repeat_rows(log_z, static_cast<int>(n));
  return sub(per_row, lz);
}

Var elk_vmf_nivmf(const Var& p_mu, const Var& p_kappa, const Var& q_mu, const Var& q_lambda,
                  int k, std::uint64_t seed, int normalizer_samples) {
  if (p_mu.cols() != q_mu.cols()) throw std::invalid_argument("elk_vmf_nivmf: dimension mismatch");
  Var z = reparameterized_vmf_sample(p_mu, p_kappa, k, seed);
  return elk_from_samples(z, k, q_mu, q_lambda, normalizer_samples);
}

}  // namespace ad

}  // namespace suq
