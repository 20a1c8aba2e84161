#include "suq/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "suq/kernels.hpp"
#include "suq/vmf_reparam.hpp"

namespace suq {

using ad::Var;

namespace {

void check_labels(const std::vector<int>& labels, Eigen::Index n, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("labels: length does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
}

}  // namespace

Var softmax_nll(const Var& logits, const std::vector<int>& labels) {
  check_labels(labels, logits.rows(), logits.cols());
  return ad::sub(ad::row_logsumexp(logits), ad::pick(logits, labels));
}

Var proxy_nca_pp_per_sample(const Var& embeddings, const std::vector<int>& labels,
                            const Var& proxies, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("proxy_nca_pp: temperature must be > 0");
  if (embeddings.cols() != proxies.cols()) {
    throw std::invalid_argument("proxy_nca_pp: dimension mismatch");
  }
  check_labels(labels, embeddings.rows(), proxies.rows());
  Var logits = ad::scale(ad::matmul(embeddings, ad::transpose(proxies)), 1.0 / temperature);
  return softmax_nll(logits, labels);
}

Var proxy_nca_pp(const Var& embeddings, const std::vector<int>& labels, const Var& proxies,
                 double temperature) {
  return ad::mean(proxy_nca_pp_per_sample(embeddings, labels, proxies, temperature));
}

Var nivmf_loss_per_sample(const Var& means, const Var& kappas, const std::vector<int>& labels,
                          const Var& proxy_means, const Var& proxy_lambdas,
                          const NivmfLossConfig& config) {
  if (!(config.temperature > 0.0)) throw std::invalid_argument("nivmf_loss: temperature must be > 0");
  if (proxy_means.rows() != proxy_lambdas.rows() || proxy_means.cols() != proxy_lambdas.cols() ||
      proxy_means.cols() != means.cols()) {
    throw std::invalid_argument("nivmf_loss: proxy shape mismatch");
  }
  if ((proxy_lambdas.value().array() <= 0.0).any()) {
    throw std::domain_error("nivmf_loss: proxy lambdas must be > 0");
  }
  const Eigen::Index classes = proxy_means.rows();
  check_labels(labels, means.rows(), classes);
  Var z = ad::reparameterized_vmf_sample(means, kappas, config.samples, config.seed);
  std::vector<Var> cols;
  cols.reserve(classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    cols.push_back(ad::elk_from_samples(z, config.samples, ad::slice_rows(proxy_means, c, 1),
                                        ad::slice_rows(proxy_lambdas, c, 1),
                                        config.normalizer_samples));
  }
  Var logits = ad::scale(ad::concat_cols(cols), 1.0 / config.temperature);
  return softmax_nll(logits, labels);
}

Var nivmf_loss(const Var& means, const Var& kappas, const std::vector<int>& labels,
               const Var& proxy_means, const Var& proxy_lambdas, const NivmfLossConfig& config) {
  return ad::mean(
      nivmf_loss_per_sample(means, kappas, labels, proxy_means, proxy_lambdas, config));
}

double info_nce(const Eigen::VectorXd& z, const Eigen::VectorXd& z_plus,
                const Eigen::MatrixXd& negatives, double kappa_pos) {
  const Eigen::Index m = negatives.rows();
  if (m < 1) throw std::invalid_argument("info_nce: need at least one negative");
  Eigen::VectorXd logits(m + 1);
  logits(0) = kappa_pos * z.dot(z_plus);
  for (Eigen::Index j = 0; j < m; ++j) logits(j + 1) = kappa_pos * z.dot(negatives.row(j));
  const double peak = logits.maxCoeff();
  const double lse = peak + std::log((logits.array() - peak).exp().sum());
  return lse - std::log(static_cast<double>(m)) - logits(0);
}

Var info_nce(const Var& z, const Var& z_plus, const std::vector<Var>& negatives,
             double kappa_pos) {
  if (negatives.empty()) throw std::invalid_argument("info_nce: need at least one negative");
  Var a = ad::scale(ad::row_dot(z, z_plus), kappa_pos);
  std::vector<Var> cols{a};
  for (const Var& neg : negatives) cols.push_back(ad::scale(ad::row_dot(z, neg), kappa_pos));
  Var lse = ad::row_logsumexp(ad::concat_cols(cols));
  return ad::sub(ad::add_scalar(lse, -std::log(static_cast<double>(negatives.size()))), a);
}

Var info_nce_in_batch(const Var& z, const Var& z_plus, double kappa_pos) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw std::invalid_argument("info_nce_in_batch: need at least two anchors");
  Var a = ad::scale(ad::row_dot(z, z_plus), kappa_pos);
  Var sims = ad::scale(ad::matmul(z, ad::transpose(z)), kappa_pos);
  Var logits = ad::set_diagonal(sims, a);
  Var lse = ad::row_logsumexp(logits);
  return ad::sub(ad::add_scalar(lse, -std::log(static_cast<double>(n - 1))), a);
}

Var mc_info_nce_per_sample(const Var& mu, const Var& kappa, const Var& mu_plus,
                           const Var& kappa_plus, const std::vector<Var>& mu_neg,
                           const std::vector<Var>& kappa_neg, const McInfoNceConfig& config,
                           std::uint64_t seed) {
  if (config.k < 1) throw std::invalid_argument("mc_info_nce: K must be >= 1");
  if (!(config.kappa_pos > 0.0)) throw std::invalid_argument("mc_info_nce: kappa_pos must be > 0");
  if (mu_neg.size() != kappa_neg.size()) throw std::invalid_argument("mc_info_nce: negatives");
  const int k = config.k;
  const Eigen::Index n = mu.rows();
  Var z = ad::reparameterized_vmf_sample(mu, kappa, k, seed);
  Var zp = ad::reparameterized_vmf_sample(mu_plus, kappa_plus, k, seed + 1);
  std::vector<Var> zn;
  for (std::size_t m = 0; m < mu_neg.size(); ++m) {
    zn.push_back(ad::reparameterized_vmf_sample(mu_neg[m], kappa_neg[m], k, seed + 2 + m));
  }
  auto term = [&](int ja, int jp) {
    Var za = ad::slice_rows(z, ja * n, n);
    Var zpj = ad::slice_rows(zp, jp * n, n);
    if (zn.empty()) return info_nce_in_batch(za, zpj, config.kappa_pos);
    std::vector<Var> negs;
    for (const Var& v : zn) negs.push_back(ad::slice_rows(v, ja * n, n));
    return info_nce(za, zpj, negs, config.kappa_pos);
  };
  std::vector<Var> neg_losses;
  for (int ja = 0; ja < k; ++ja) {
    if (config.product_pairing) {
      for (int jp = 0; jp < k; ++jp) neg_losses.push_back(ad::neg(term(ja, jp)));
    } else {
      neg_losses.push_back(ad::neg(term(ja, ja)));
    }
  }
  return ad::neg(ad::row_logmeanexp(ad::concat_cols(neg_losses)));
}

Var mc_info_nce(ad::Tape& tape, const EncoderNet& encoder, const ContrastiveBatch& batch,
                const McInfoNceConfig& config, std::uint64_t seed) {
  if (batch.anchors.rows() != batch.positives.rows()) {
    throw std::invalid_argument("mc_info_nce: positives must align with anchors");
  }
  EncoderOutput a = encoder.forward(tape, batch.anchors);
  EncoderOutput p = encoder.forward(tape, batch.positives);
  std::vector<Var> mu_neg, kappa_neg;
  for (const auto& neg : batch.negatives) {
    EncoderOutput o = encoder.forward(tape, neg);
    mu_neg.push_back(o.means);
    kappa_neg.push_back(o.kappas);
  }
  return ad::mean(mc_info_nce_per_sample(a.means, a.kappas, p.means, p.kappas, mu_neg, kappa_neg,
                                         config, seed));
}

TargetTransform parse_target_transform(const std::string& name) {
  if (name == "none") return TargetTransform::None;
  if (name == "log1p") return TargetTransform::Log1p;
  throw std::invalid_argument("unknown target_transform '" + name + "' (expected none or log1p)");
}

Var loss_prediction_objective(const Eigen::VectorXd& task_losses, const Var& u,
                              const LossPredictionConfig& config) {
  const Eigen::Index n = task_losses.size();
  if (u.rows() != n || u.cols() != 1) {
    throw std::invalid_argument("loss_prediction_objective: length mismatch");
  }
  Eigen::VectorXd target = task_losses;
  if (config.target_transform == TargetTransform::Log1p) {
    target = task_losses.array().log1p().matrix();
  }
  ad::Tape& tape = *u.tape();
  if (!config.ranking) {
    return ad::mean(ad::square(ad::sub(u, tape.constant(target))));
  }
  // Pairs (i, j) with target_i > target_j should have u_i > u_j.
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (target(i) > target(j)) mask(i, j) = 1.0;
  const double pairs = mask.sum();
  if (pairs == 0.0) return ad::scale(ad::sum(u), 0.0);
  Var ones = tape.constant(Eigen::MatrixXd::Ones(1, n));
  Var diff = ad::sub(ad::matmul(u, ones), ad::transpose(ad::matmul(u, ones)));
  Var pen = ad::mul(ad::softplus(ad::neg(diff)), tape.constant(mask));
  return ad::scale(ad::sum(pen), 1.0 / pairs);
}

std::vector<ProbeRow> grad_weight_probe(const std::vector<double>& kappa_grid,
                                        const ProbeConfig& config) {
  std::vector<ProbeRow> rows;
  Eigen::MatrixXd proxies(2, 3);
  proxies << 1.0, 0.0, 0.0, -1.0, 0.0, 0.0;
  Eigen::MatrixXd anchor(1, 3);
  anchor << 0.5, std::sqrt(3.0) / 2.0, 0.0;
  for (double kappa : kappa_grid) {
    ad::Tape tape;
    Var mu = tape.variable(anchor);
    Var unit = ad::normalize_rows(mu);
    Var k = tape.constant(Eigen::MatrixXd::Constant(1, 1, kappa));
    Var pm = tape.constant(proxies);
    Var pl = tape.constant(Eigen::MatrixXd::Constant(2, 3, config.lambda));
    NivmfLossConfig lc;
    lc.temperature = config.temperature;
    lc.samples = config.samples;
    lc.normalizer_samples = config.normalizer_samples;
    lc.seed = config.seed;
    Var loss = nivmf_loss(unit, k, {0}, pm, pl, lc);
    const ad::Gradients g = tape.backward(loss);
    rows.push_back({kappa, g.of(mu).norm()});
  }
  return rows;
}

}  // namespace suq
