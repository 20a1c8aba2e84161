#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "suq/config.hpp"
#include "suq/encoder.hpp"
#include "suq/genproc.hpp"
#include "suq/metrics.hpp"
#include "suq/results.hpp"

namespace suq {

// Thrown when a training loss turns non-finite; `step` is the offending step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, long step) : std::runtime_error(what), step(step) {}
  long step;
};

// Seed of a named sub-stream of the run seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& label, std::uint64_t index = 0);

// Run id: experiment name plus the config hash (output directory excluded).
std::string run_id(const RunConfig& config);
std::string run_hash(const RunConfig& config);

// Encoder outputs for a whole matrix of inputs. Rows are processed in fixed
// chunks, so the result does not depend on the thread count.
struct Embedding {
  Eigen::MatrixXd means;
  Eigen::VectorXd kappas;
  Eigen::VectorXd predicted_loss;  // empty without a loss head
};
Embedding embed(const EncoderNet& net, const Eigen::MatrixXd& inputs);

// Instance-level contrastive training: each epoch pairs the views of every
// instance into disjoint positive pairs, and the other anchors of a batch are
// the negatives. Uses loss.name (mc_info_nce or info_nce) and train.*.
void train_contrastive(const RunConfig& config, EncoderNet& net, const Dataset& data,
                       std::uint64_t seed, ResultLog* log = nullptr,
                       const std::string& split = "train");

// ---- identify ----------------------------------------------------------------------

struct IdentifyReport {
  double spearman = 0.0;             // κ̂ vs kappa_true of the instance
  double spearman_drawn_field = 0.0;  // κ̂ vs κ field at the drawn latent
  double spearman_ceiling = 0.0;      // κ field at the drawn latent vs kappa_true
  double direction_cosine = 0.0;      // mean cosine after Procrustes alignment
  double median_kappa = 0.0;
  std::optional<double> dirac_median_kappa;
  std::optional<double> dirac_ratio;
  std::vector<std::optional<double>> negative_control;
  std::optional<double> negative_control_mean;
  double error_rate = 0.0;
  CurvePoints selective_model;
  CurvePoints selective_oracle;
  std::vector<double> credible_kappas;
  std::vector<double> credible_mean_size;
  double dirac_query_singletons = 0.0;  // fraction of near-Dirac queries with |set| = 1
  std::vector<ResultRow> rows;
};

IdentifyReport run_identify(const RunConfig& config);

// ---- url-bench ----------------------------------------------------------------------

struct UrlSplitResult {
  std::string loss;
  std::string split;
  double recall_at_1 = 0.0;
  std::optional<double> r_auroc;         // trained uncertainty
  std::optional<double> r_auroc_oracle;  // 1 - correct
  std::optional<double> r_auroc_random;  // mean over url.random_seeds
};

struct UrlReport {
  std::vector<UrlSplitResult> splits;
  std::vector<ResultRow> rows;
  std::string table_csv;
};

UrlReport run_url_desk(const RunConfig& config);

// ---- dml-ablation -------------------------------------------------------------------

struct DmlReport {
  // recall[loss][seed]
  std::vector<std::string> losses;
  std::vector<std::vector<double>> recall;
  std::vector<double> shuffled_recall;
  double chance = 0.0;
  double chance_margin = 0.0;  // 3 binomial SE
  std::vector<ResultRow> rows;
  std::string table_csv;
};

DmlReport run_dml_ablation(const RunConfig& config);

// ---- pretrain-cached ----------------------------------------------------------------

enum class CacheStage { All, Pretrain, Cache, Head };
CacheStage parse_cache_stage(const std::string& name);

struct PretrainCachedReport {
  bool trunk_equal_with_stopgrad_head = false;
  bool trunk_differs_without_stopgrad = false;
  bool head_equal_cached_vs_monolithic = false;
  double recall_no_head = 0.0;
  double recall_stopgrad_head = 0.0;
  double recall_no_stopgrad = 0.0;
  std::vector<ResultRow> rows;
};

// Stages read and write under config.out_dir: checkpoint/ and cache/.
PretrainCachedReport run_pretrain_cached(const RunConfig& config, CacheStage stage = CacheStage::All);

// ---- annotator-check ----------------------------------------------------------------

struct AnnotatorReport {
  std::optional<double> spearman_model;
  std::optional<double> spearman_oracle;
  std::optional<double> spearman_constant;
  std::vector<double> strengths;
  std::vector<double> consistency;
  std::vector<double> consistency_no_drift;
  std::vector<ResultRow> rows;
};

AnnotatorReport run_annotator_check(const RunConfig& config);

// Label entropy (nats) of `annotators` nearest-center votes on draws from
// vMF(latent, kappa).
double annotator_entropy(const Eigen::VectorXd& latent, double kappa,
                         const std::vector<UnitVector>& centers, int annotators, std::uint64_t seed);

// ---- gen-data -----------------------------------------------------------------------

// Writes train/ and test/ tensors (inputs, latents, kappa_true, instance_ids,
// centers) for the identify data and returns the row count of each split.
std::vector<ResultRow> run_gen_data(const RunConfig& config);

// Writes `rows` to config.out_dir/results.jsonl (appending) when out_dir is
// non-empty.
void persist_rows(const RunConfig& config, const std::vector<ResultRow>& rows);

}  // namespace suq
