#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "suq/autodiff.hpp"
#include "suq/encoder.hpp"
#include "suq/sphere.hpp"

namespace suq {

// ---- proxy losses -------------------------------------------------------------

// Per-row -log softmax(logits)[label] (n x 1).
ad::Var softmax_nll(const ad::Var& logits, const std::vector<int>& labels);

// Per-sample -log softmax_c(cos(e_i, p_c) / t) at the true class (n x 1).
ad::Var proxy_nca_pp_per_sample(const ad::Var& embeddings, const std::vector<int>& labels,
                                const ad::Var& proxies, double temperature);
// Batch mean of the above (1 x 1).
ad::Var proxy_nca_pp(const ad::Var& embeddings, const std::vector<int>& labels,
                     const ad::Var& proxies, double temperature);

struct NivmfLossConfig {
  double temperature = 1.0;
  int samples = 128;  // reparameterized draws per embedding
  int normalizer_samples = 4096;
  std::uint64_t seed = 0;
};

// Per-sample -log softmax_c(log ELK(vMF(mu_i, kappa_i), nivMF(p_c, lambda_c)) / t).
// All classes share the same draws of each embedding.
ad::Var nivmf_loss_per_sample(const ad::Var& means, const ad::Var& kappas,
                              const std::vector<int>& labels, const ad::Var& proxy_means,
                              const ad::Var& proxy_lambdas, const NivmfLossConfig& config);
ad::Var nivmf_loss(const ad::Var& means, const ad::Var& kappas, const std::vector<int>& labels,
                   const ad::Var& proxy_means, const ad::Var& proxy_lambdas,
                   const NivmfLossConfig& config);

// ---- contrastive losses -------------------------------------------------------

// -log[ e^{a} / ((e^{a} + Σ_m e^{b_m}) / M) ] with a = κ zᵀz⁺, b_m = κ zᵀz⁻_m.
// `negatives` is M x d.
double info_nce(const Eigen::VectorXd& z, const Eigen::VectorXd& z_plus,
                const Eigen::MatrixXd& negatives, double kappa_pos);

// Tape versions, one loss per anchor row (n x 1).
// Explicit negatives: negatives[m] is the n x d matrix of the m-th negative.
ad::Var info_nce(const ad::Var& z, const ad::Var& z_plus, const std::vector<ad::Var>& negatives,
                 double kappa_pos);
// In-batch negatives: the negatives of anchor i are the other anchors z_j, j != i.
ad::Var info_nce_in_batch(const ad::Var& z, const ad::Var& z_plus, double kappa_pos);

struct McInfoNceConfig {
  int k = 16;
  double kappa_pos = 16.0;
  // Pair every anchor draw with every positive draw instead of joint tuples.
  bool product_pairing = false;
};

// Inputs of one contrastive batch. Without explicit negatives the other
// anchors of the batch serve as negatives (M = n - 1).
struct ContrastiveBatch {
  Eigen::MatrixXd anchors;
  Eigen::MatrixXd positives;
  std::vector<Eigen::MatrixXd> negatives;
  std::vector<int> labels;
};

// Per-anchor MC InfoNCE, -log mean_k exp(-ℓ_k), from predicted vMF
// parameters. Draw streams: anchors use `seed`, positives seed+1, negative m
// seed+2+m.
ad::Var mc_info_nce_per_sample(const ad::Var& mu, const ad::Var& kappa, const ad::Var& mu_plus,
                               const ad::Var& kappa_plus, const std::vector<ad::Var>& mu_neg,
                               const std::vector<ad::Var>& kappa_neg,
                               const McInfoNceConfig& config, std::uint64_t seed);

// Encodes the batch with `encoder` and returns the batch mean (1 x 1).
ad::Var mc_info_nce(ad::Tape& tape, const EncoderNet& encoder, const ContrastiveBatch& batch,
                    const McInfoNceConfig& config, std::uint64_t seed);

// ---- loss prediction -----------------------------------------------------------

enum class TargetTransform { None, Log1p };
TargetTransform parse_target_transform(const std::string& name);

struct LossPredictionConfig {
  TargetTransform target_transform = TargetTransform::None;
  bool ranking = false;
};

// Mean squared error between u (n x 1) and the detached task losses, or with
// `ranking` the mean softplus(u_j - u_i) over pairs with target_i > target_j.
ad::Var loss_prediction_objective(const Eigen::VectorXd& task_losses, const ad::Var& u,
                                  const LossPredictionConfig& config = {});

// ---- gradient reweighting probe ------------------------------------------------

struct ProbeRow {
  double kappa = 0.0;
  double grad_norm = 0.0;
};

struct ProbeConfig {
  double lambda = 1.0;  // constant proxy scale
  double temperature = 1.0;
  int samples = 4096;
  int normalizer_samples = kDefaultNormalizerSamples;
  std::uint64_t seed = 7;
};

// Norm of the gradient of the nivMF loss with respect to the sample's mean
// direction on S²: true proxy e₁, anchor at cosine 0.5 to it and -0.5 to the
// single negative proxy.
std::vector<ProbeRow> grad_weight_probe(const std::vector<double>& kappa_grid,
                                        const ProbeConfig& config = {});

}  // namespace suq
