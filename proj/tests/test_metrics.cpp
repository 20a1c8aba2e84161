#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "suq/metrics.hpp"
#include "suq/rng.hpp"
#include "suq/sphere.hpp"

using namespace suq;

namespace {

EvalRecord rec(double x, double y, double z, int label, double u = 0.0) {
  EvalRecord r;
  r.embedding = Eigen::Vector3d(x, y, z).normalized();
  r.label = label;
  r.uncertainty = u;
  return r;
}

std::vector<EvalRecord> random_records(int n, int d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EvalRecord> out(n);
  for (auto& r : out) {
    r.embedding = rng.uniform_on_sphere(d);
    r.label = static_cast<int>(rng.index(classes));
    r.uncertainty = rng.uniform();
  }
  return out;
}

// Exhaustive nearest neighbour: largest cosine, first index wins ties.
std::vector<bool> nn_oracle(const std::vector<EvalRecord>& r) {
  std::vector<bool> out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    int best = -1;
    double best_cos = -2.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j == i) continue;
      const double c = r[i].embedding.dot(r[j].embedding);
      if (c > best_cos) {
        best_cos = c;
        best = static_cast<int>(j);
      }
    }
    out.push_back(r[best].label == r[i].label);
  }
  return out;
}

double auroc_oracle(const std::vector<double>& s, const std::vector<bool>& pos) {
  double num = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

}  // namespace

TEST_CASE("recall_at_1 examples") {
  CHECK(recall_at_1({rec(1, 0, 0, 3), rec(0, 1, 0, 3)}).rate == 1.0);
  CHECK(recall_at_1({rec(1, 0, 0, 0), rec(0, 1, 0, 1), rec(0, 0, 1, 2)}).rate == 0.0);
  CHECK_THROWS(recall_at_1({rec(1, 0, 0, 0)}));
  // Hand-placed: two tight pairs with one mislabelled neighbour.
  const std::vector<EvalRecord> six = {rec(1, 0.1, 0, 0), rec(1, -0.1, 0, 0), rec(0, 1, 0.1, 1),
                                       rec(0, 1, -0.1, 0), rec(-1, 0, 1, 2), rec(-1, 0, 0.8, 1)};
  const RecallResult r = recall_at_1(six);
  CHECK(r.correct == nn_oracle(six));
  CHECK(r.rate == doctest::Approx(2.0 / 6.0));
  // Equal cosines resolve to the lower index.
  const std::vector<EvalRecord> tie = {rec(1, 0, 0, 0), rec(0, 1, 0, 1), rec(0, -1, 0, 0)};
  CHECK(recall_at_1(tie).correct[0] == false);
  CHECK(nearest_neighbor((Eigen::MatrixXd(2, 3) << 0, 1, 0, 0, -1, 0).finished(), Eigen::Vector3d(1, 0, 0)) == 0);
}

TEST_CASE("recall_at_1 oracle and rotation invariance") {
  for (int s = 0; s < 20; ++s) {
    std::vector<EvalRecord> r = random_records(60, 4, 5, s);
    const RecallResult a = recall_at_1(r);
    CHECK(a.correct == nn_oracle(r));
    const Eigen::MatrixXd q = random_rotation(4, 100 + s);
    for (auto& x : r) x.embedding = q * x.embedding;
    CHECK(recall_at_1(r).correct == a.correct);
  }
}

TEST_CASE("auroc examples") {
  CHECK(auroc({0.9, 0.8, 0.1, 0.2}, {true, true, false, false}) == 1.0);
  CHECK(auroc({0.3, 0.3, 0.3, 0.3}, {true, false, true, false}) == 0.5);
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {false, false, true, true}) == 0.75);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {true, true}), UndefinedMetric);
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {false, false}), UndefinedMetric);
  CHECK_THROWS(auroc({0.1, 0.2}, {false}));
}

TEST_CASE("auroc equals the pairwise oracle exactly") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.index(199));
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (int i = 0; i < n; ++i) {
      // Coarse scores so ties are common.
      s[i] = t % 2 == 0 ? std::floor(rng.uniform() * 7.0) : rng.uniform();
      pos[i] = rng.uniform() < 0.4;
    }
    pos[0] = true;
    pos[1] = false;
    CHECK(auroc(s, pos) == auroc_oracle(s, pos));
  }
}

TEST_CASE("r_auroc") {
  const std::vector<EvalRecord> eight = {
      rec(1, 0.1, 0, 0, 0.1),  rec(1, -0.1, 0, 0, 0.2), rec(0, 1, 0.1, 1, 0.9), rec(0, 1, -0.1, 0, 0.5),
      rec(-1, 0, 1, 2, 0.4),   rec(-1, 0, 0.8, 1, 0.7), rec(0, 0, -1, 3, 0.3), rec(0.1, 0, -1, 3, 0.05)};
  // Manual two-step computation.
  const std::vector<bool> correct = nn_oracle(eight);
  std::vector<double> u;
  std::vector<bool> wrong;
  for (std::size_t i = 0; i < eight.size(); ++i) {
    u.push_back(eight[i].uncertainty);
    wrong.push_back(!correct[i]);
  }
  CHECK(r_auroc(eight) == auroc_oracle(u, wrong));
  std::vector<EvalRecord> same = eight;
  for (auto& r : same) r.uncertainty = 0.4;
  CHECK(r_auroc(same) == 0.5);
  std::vector<EvalRecord> oracle = eight;
  for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i].uncertainty = correct[i] ? 0.0 : 1.0;
  CHECK(r_auroc(oracle) == 1.0);
  // Strictly monotone transforms leave it unchanged.
  std::vector<EvalRecord> shifted = eight;
  for (auto& r : shifted) r.uncertainty = std::exp(3.0 * r.uncertainty) - 7.0;
  CHECK(r_auroc(shifted) == r_auroc(eight));
  CHECK_THROWS_AS(r_auroc({rec(1, 0, 0, 0), rec(1, 0.1, 0, 0)}), UndefinedMetric);
}

TEST_CASE("spearman") {
  const std::vector<double> a = {1, 2, 3, 4, 5.5};
  std::vector<double> neg;
  for (double x : a) neg.push_back(-x);
  CHECK(spearman(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(mid_ranks({3, 1, 3, 2}) == std::vector<double>{3.5, 1.0, 3.5, 2.0});
  CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), UndefinedMetric);
  CHECK_THROWS(spearman({1, 2}, {1, 2}));
  CHECK_THROWS(spearman({1, 2, 3}, {1, 2}));
}

TEST_CASE("selective prediction") {
  SUBCASE("oracle uncertainty") {
    std::vector<bool> correct;
    std::vector<double> u;
    for (int i = 0; i < 40; ++i) {
      correct.push_back(i % 4 != 0);
      u.push_back(correct.back() ? 0.1 * (i % 3) : 5.0);
    }
    const CurvePoints c = selective_prediction_curve(u, correct, {0.0, 0.1, 0.25, 0.5});
    CHECK(c.y[0] == 0.75);
    CHECK(c.y[2] == 1.0);
    CHECK(c.y[3] == 1.0);
    CHECK(c.y[1] < 1.0);
  }
  SUBCASE("constant uncertainty is flat") {
    Rng rng(2);
    std::vector<bool> correct;
    for (int i = 0; i < 2000; ++i) correct.push_back(rng.uniform() < 0.7);
    const std::vector<double> u(2000, 1.0);
    const CurvePoints c = selective_prediction_curve(u, correct, {0.0, 0.2, 0.4, 0.6, 0.8});
    for (double y : c.y) CHECK(std::abs(y - c.y[0]) < 0.05);
  }
  SUBCASE("brute-force recomputation") {
    for (int s = 0; s < 10; ++s) {
      std::vector<EvalRecord> r = random_records(20, 3, 2, 40 + s);
      Rng rng(60 + s);
      for (auto& x : r) {
        x.correct = rng.uniform() < 0.6;
        x.uncertainty = std::floor(x.uncertainty * 5.0);
      }
      const std::vector<double> fr = {0.0, 0.05, 0.1, 0.33, 0.5, 0.9, 1.0};
      const CurvePoints c = selective_prediction_curve(r, fr);
      std::vector<int> order(20);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return r[a].uncertainty != r[b].uncertainty ? r[a].uncertainty > r[b].uncertainty : a < b;
      });
      REQUIRE(c.x.size() == 6);  // r = 1 empties the set
      for (std::size_t t = 0; t < c.x.size(); ++t) {
        const int drop = static_cast<int>(std::ceil(fr[t] * 20 - 1e-9));
        int hits = 0;
        for (int k = drop; k < 20; ++k) hits += *r[order[k]].correct;
        CHECK(c.x[t] == fr[t]);
        CHECK(c.y[t] == static_cast<double>(hits) / (20 - drop));
      }
      int all = 0;
      for (auto& x : r) all += *x.correct;
      CHECK(c.y[0] == static_cast<double>(all) / 20.0);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS(selective_prediction_curve({0.1, 0.2}, {true, false}, {0.5, 0.2}));
    CHECK_THROWS(selective_prediction_curve({rec(1, 0, 0, 0)}, {0.0}));
  }
}

TEST_CASE("intervention consistency") {
  const std::vector<double> before = {0.1, 0.5, 0.2, 0.9, 0.3};
  std::vector<double> plus;
  for (double b : before) plus.push_back(b + 1.0);
  CHECK(intervention_consistency(before, plus) == 1.0);
  CHECK(intervention_consistency(before, before) == 0.0);
  CHECK(intervention_consistency(before, {0.2, 0.6, 0.3, 0.8, 0.3}) == doctest::Approx(0.6));
  CHECK_THROWS(intervention_consistency(before, {1.0}));
}

TEST_CASE("credible sets") {
  const Eigen::MatrixXd db = sample_uniform_sphere(3, 200, 5).points;
  const UnitVector mu = UnitVector::normalized(Eigen::Vector3d(0.3, -0.4, 0.8));
  SUBCASE("Dirac query") {
    const std::vector<int> s = credible_set(VonMisesFisher(mu, 1e6), db);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == nearest_neighbor(db, mu.values()));
  }
  SUBCASE("coverage property") {
    for (double kappa : {3.0, 20.0, 80.0}) {
      const VonMisesFisher q(mu, kappa);
      const std::vector<int> set = credible_set(q, db, 0.95, 1024, 9);
      const SampleBatch z = sample_vmf(q, 1024, 9);
      int inside = 0;
      for (int i = 0; i < z.size(); ++i)
        inside += std::binary_search(set.begin(), set.end(), nearest_neighbor(db, z.points.row(i).transpose()));
      CHECK(inside / 1024.0 >= 0.95 - 2.0 / 32.0);
    }
  }
  SUBCASE("uniform query covers a 3-record database") {
    const Eigen::MatrixXd three = (Eigen::MatrixXd(3, 3) << 1, 0, 0, 0, 1, 0, 0, 0, 1).finished();
    CHECK(credible_set(VonMisesFisher(mu, 0.0), three, 0.95, 1024, 1) == std::vector<int>{0, 1, 2});
  }
  SUBCASE("size is monotone in coverage and in ambiguity") {
    const VonMisesFisher q(mu, 10.0);
    std::size_t prev = 0;
    for (double c : {0.1, 0.3, 0.5, 0.8, 0.95, 0.99}) {
      const std::size_t n = credible_set(q, db, c, 1024, 4).size();
      CHECK(n >= prev);
      prev = n;
    }
    CHECK(credible_set(VonMisesFisher(mu, 1.0), db).size() > credible_set(VonMisesFisher(mu, 100.0), db).size());
  }
  SUBCASE("errors") {
    CHECK_THROWS(credible_set(VonMisesFisher(mu, 1.0), db, 1.0));
    CHECK_THROWS(credible_set(VonMisesFisher(mu, 1.0), db, 0.0));
    CHECK_THROWS(credible_set(VonMisesFisher(mu, 1.0), Eigen::MatrixXd(0, 3)));
  }
}
