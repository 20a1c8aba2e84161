#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "suq/sphere.hpp"

namespace suq {

// Raised when a metric is undefined for its input (single class, zero
// variance, ...), as opposed to malformed input.
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct EvalRecord {
  Eigen::VectorXd embedding;
  double uncertainty = 0.0;
  int label = 0;
  std::optional<bool> correct;
};

struct CurvePoints {
  std::vector<double> x;
  std::vector<double> y;
};

struct RecallResult {
  double rate = 0.0;
  std::vector<bool> correct;
};

// Cosine nearest other record; ties go to the lowest index.
RecallResult recall_at_1(const std::vector<EvalRecord>& records);
// Index of the nearest row of `database` (unit rows) to `query`, excluding
// `exclude` (-1 for none).
int nearest_neighbor(const Eigen::MatrixXd& database, const Eigen::VectorXd& query,
                     int exclude = -1);

// Mann-Whitney AUROC with half credit for ties.
double auroc(const std::vector<double>& scores, const std::vector<bool>& positives);

// AUROC of the uncertainty predicting Recall@1 failure.
double r_auroc(const std::vector<EvalRecord>& records);

// Pearson correlation of mid-ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> mid_ranks(const std::vector<double>& v);

// For every rejection fraction r (strictly increasing), drops the
// ceil(r n) most uncertain records (equal uncertainty: lower index first)
// and reports the accuracy of the rest. Stops before an empty remainder.
CurvePoints selective_prediction_curve(const std::vector<double>& uncertainty,
                                       const std::vector<bool>& correct,
                                       const std::vector<double>& fractions);
CurvePoints selective_prediction_curve(const std::vector<EvalRecord>& records,
                                       const std::vector<double>& fractions);

// Fraction of samples with u_after > u_before.
double intervention_consistency(const std::vector<double>& u_before,
                                const std::vector<double>& u_after);

// Samples S points from the query, keeps the ceil(coverage S) with highest
// query density, and returns the sorted union of their nearest database rows.
std::vector<int> credible_set(const VonMisesFisher& query, const Eigen::MatrixXd& database,
                              double coverage = 0.95, int samples = 1024,
                              std::uint64_t seed = 0);
std::vector<int> credible_set(const VonMisesFisher& query, const std::vector<EvalRecord>& database,
                              double coverage = 0.95, int samples = 1024,
                              std::uint64_t seed = 0);

}  // namespace suq
