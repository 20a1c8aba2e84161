#include "suq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "suq/parallel.hpp"

namespace suq {

int nearest_neighbor(const Eigen::MatrixXd& database, const Eigen::VectorXd& query, int exclude) {
  int best = -1;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < database.rows(); ++j) {
    if (j == exclude) continue;
    const double s = database.row(j).dot(query);
    if (s > best_sim) {
      best_sim = s;
      best = static_cast<int>(j);
    }
  }
  return best;
}

RecallResult recall_at_1(const std::vector<EvalRecord>& records) {
  const long n = static_cast<long>(records.size());
  if (n < 2) throw std::invalid_argument("recall_at_1: need at least two records");
  const Eigen::Index d = records[0].embedding.size();
  Eigen::MatrixXd emb(n, d);
  for (long i = 0; i < n; ++i) {
    if (records[i].embedding.size() != d) throw std::invalid_argument("recall_at_1: dimension mismatch");
    emb.row(i) = records[i].embedding.transpose();
  }
  std::vector<char> hit(n, 0);
  parallel_for(n, [&](long i) {
    const int nn = nearest_neighbor(emb, emb.row(i).transpose(), static_cast<int>(i));
    hit[i] = records[nn].label == records[i].label;
  });
  RecallResult out;
  long count = 0;
  for (long i = 0; i < n; ++i) {
    out.correct.push_back(hit[i] != 0);
    count += hit[i];
  }
  out.rate = static_cast<double>(count) / n;
  return out;
}

std::vector<double> mid_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    // Ranks i+1..j+1 share their average.
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("auroc: length mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("auroc: non-finite score");
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  const std::vector<double> ranks = mid_ranks(scores);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positives[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    } else {
      neg += 1.0;
    }
  }
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("auroc: need both positives and negatives");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double r_auroc(const std::vector<EvalRecord>& records) {
  const RecallResult recall = recall_at_1(records);
  std::vector<double> u;
  std::vector<bool> failed;
  for (std::size_t i = 0; i < records.size(); ++i) {
    u.push_back(records[i].uncertainty);
    failed.push_back(!recall.correct[i]);
  }
  return auroc(u, failed);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 3) throw std::invalid_argument("spearman: need at least 3 values");
  const std::vector<double> ra = mid_ranks(a), rb = mid_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetric("spearman: zero rank variance");
  return sab / std::sqrt(saa * sbb);
}

CurvePoints selective_prediction_curve(const std::vector<double>& uncertainty,
                                       const std::vector<bool>& correct,
                                       const std::vector<double>& fractions) {
  const std::size_t n = uncertainty.size();
  if (correct.size() != n) throw std::invalid_argument("selective_prediction_curve: length mismatch");
  if (n == 0) throw std::invalid_argument("selective_prediction_curve: no records");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) {
      throw std::invalid_argument("selective_prediction_curve: fraction outside [0, 1]");
    }
    if (i > 0 && !(fractions[i] > fractions[i - 1])) {
      throw std::invalid_argument("selective_prediction_curve: fractions must increase");
    }
  }
  // Rejection order: most uncertain first, lower index first among equals.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] > uncertainty[b]; });
  CurvePoints curve;
  for (double r : fractions) {
    const std::size_t k = static_cast<std::size_t>(std::ceil(r * n - 1e-9));
    if (k >= n) break;
    long hits = 0;
    for (std::size_t i = k; i < n; ++i) hits += correct[order[i]] ? 1 : 0;
    curve.x.push_back(r);
    curve.y.push_back(static_cast<double>(hits) / static_cast<double>(n - k));
  }
  return curve;
}

CurvePoints selective_prediction_curve(const std::vector<EvalRecord>& records,
                                       const std::vector<double>& fractions) {
  std::vector<double> u;
  std::vector<bool> c;
  for (const auto& r : records) {
    if (!r.correct) throw std::invalid_argument("selective_prediction_curve: missing correctness");
    u.push_back(r.uncertainty);
    c.push_back(*r.correct);
  }
  return selective_prediction_curve(u, c, fractions);
}

double intervention_consistency(const std::vector<double>& u_before,
                                const std::vector<double>& u_after) {
  if (u_before.size() != u_after.size()) {
    throw std::invalid_argument("intervention_consistency: length mismatch");
  }
  if (u_before.empty()) throw std::invalid_argument("intervention_consistency: empty input");
  long up = 0;
  for (std::size_t i = 0; i < u_before.size(); ++i) up += u_after[i] > u_before[i] ? 1 : 0;
  return static_cast<double>(up) / static_cast<double>(u_before.size());
}

std::vector<int> credible_set(const VonMisesFisher& query, const Eigen::MatrixXd& database,
                              double coverage, int samples, std::uint64_t seed) {
  if (!(coverage > 0.0 && coverage < 1.0)) {
    throw std::invalid_argument("credible_set: coverage must lie in (0, 1)");
  }
  if (database.rows() == 0) throw std::invalid_argument("credible_set: empty database");
  if (database.cols() != query.dim()) throw std::invalid_argument("credible_set: dimension mismatch");
  const SampleBatch z = sample_vmf(query, samples, seed);
  // vMF density is increasing in μᵀz, so the HDR keeps the largest cosines.
  const Eigen::VectorXd cos = z.points * query.mu.values();
  std::vector<int> order(samples);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return cos(a) > cos(b); });
  const int keep = static_cast<int>(std::ceil(coverage * samples - 1e-9));
  std::set<int> out;
  for (int k = 0; k < keep; ++k) {
    out.insert(nearest_neighbor(database, z.points.row(order[k]).transpose()));
  }
  return {out.begin(), out.end()};
}

std::vector<int> credible_set(const VonMisesFisher& query, const std::vector<EvalRecord>& database,
                              double coverage, int samples, std::uint64_t seed) {
  if (database.empty()) throw std::invalid_argument("credible_set: empty database");
  Eigen::MatrixXd db(database.size(), database[0].embedding.size());
  for (std::size_t i = 0; i < database.size(); ++i) db.row(i) = database[i].embedding.transpose();
  return credible_set(query, db, coverage, samples, seed);
}

}  // namespace suq
