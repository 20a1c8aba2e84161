#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "suq/bessel.hpp"
#include "suq/parallel.hpp"
#include "suq/sphere.hpp"

using namespace suq;
using std::numbers::pi;

namespace {

// Closed forms for half-integer orders (odd d).
double log_c3(double k) {
  if (k == 0.0) return -std::log(4.0 * pi);
  // log sinh k = k - log 2 + log1p(-e^{-2k})
  return std::log(k) - std::log(2.0 * pi) - k - std::log1p(-std::exp(-2.0 * k));
}

double log_c5(double k) {
  // I_{3/2}(k) = sqrt(2/(pi k)) (cosh k - sinh k / k)
  //            = sqrt(2/(pi k)) e^k / 2 [(1 - 1/k) + e^{-2k}(1 + 1/k)]
  const double log_i = 0.5 * std::log(2.0 / (pi * k)) + k - std::log(2.0) +
                       std::log((1.0 - 1.0 / k) + std::exp(-2.0 * k) * (1.0 + 1.0 / k));
  return 1.5 * std::log(k) - 2.5 * std::log(2.0 * pi) - log_i;
}

double a3(double k) { return 1.0 / std::tanh(k) - 1.0 / k; }

Eigen::VectorXd random_unit(int d, std::uint64_t seed) {
  Rng r(seed);
  return r.uniform_on_sphere(d);
}

}  // namespace

TEST_CASE("UnitVector invariants") {
  CHECK_NOTHROW(UnitVector(Eigen::Vector3d(1, 0, 0)));
  CHECK_THROWS_AS(UnitVector(Eigen::Vector3d(1, 1e-4, 0)), std::invalid_argument);
  CHECK_THROWS_AS(UnitVector(Eigen::VectorXd::Ones(1)), std::invalid_argument);
  const UnitVector u = UnitVector::normalized(Eigen::Vector3d(3, 4, 0));
  CHECK(u[0] == doctest::Approx(0.6));
  CHECK_THROWS(UnitVector::normalized(Eigen::Vector3d::Zero()));
  CHECK_THROWS(VonMisesFisher(u, -1.0));
  CHECK_THROWS(NonIsotropicVMF(u, Eigen::Vector3d(1, 0, 1)));
  CHECK_THROWS(NonIsotropicVMF(u, Eigen::Vector2d(1, 1)));
}

TEST_CASE("log Bessel I against std::cyl_bessel_i") {
  for (double nu : {0.0, 0.5, 1.0, 3.0, 6.5, 7.0}) {
    for (double x : {1e-3, 0.1, 1.0, 5.0, 29.0, 31.0, 80.0, 200.0, 340.0, 600.0}) {
      const double oracle = std::log(std::cyl_bessel_i(nu, x));
      CHECK(log_bessel_i(nu, x) == doctest::Approx(oracle).epsilon(1e-10));
    }
  }
  CHECK(log_bessel_i(0.0, 0.0) == 0.0);
  CHECK(std::isinf(log_bessel_i(2.0, 0.0)));
  CHECK_THROWS_AS(log_bessel_i(1.0, -1.0), std::domain_error);
  CHECK_THROWS_AS(log_bessel_i(1.0, NAN), std::domain_error);
}

TEST_CASE("Bessel branches agree at the switch point") {
  for (double nu : {0.5, 1.0, 2.5, 7.0}) {
    const double s = bessel_switch_point(nu);
    const double below = log_bessel_i(nu, std::nextafter(s, 0.0));
    const double at = log_bessel_i(nu, s);
    CHECK(at == doctest::Approx(below).epsilon(1e-12));
  }
}

TEST_CASE("log_normalizer examples") {
  CHECK(log_normalizer(3, 0.0) == doctest::Approx(-2.53102).epsilon(1e-5));
  CHECK(log_normalizer(3, 0.0) == doctest::Approx(std::log(1.0 / (4.0 * pi))).epsilon(1e-14));
  const double c32 = std::log(2.0 / (4.0 * pi * std::sinh(2.0)));
  CHECK(log_normalizer(3, 2.0) == doctest::Approx(c32).epsilon(1e-12));
  CHECK(c32 == doctest::Approx(-3.1262444390).epsilon(1e-10));
  // d = 8: nu = 3
  const double k = 50.0;
  const double oracle = 3.0 * std::log(k) - 4.0 * std::log(2.0 * pi) - std::log(std::cyl_bessel_i(3.0, k));
  CHECK(std::abs(log_normalizer(8, k) - oracle) <= 1e-8 * std::abs(oracle));
  CHECK_THROWS_AS(log_normalizer(3, -1.0), std::domain_error);
  CHECK_THROWS_AS(log_normalizer(3, INFINITY), std::domain_error);
  CHECK_THROWS_AS(log_normalizer(1, 1.0), std::invalid_argument);
}

TEST_CASE("log_normalizer closed forms up to kappa 1e6") {
  for (double k : {1e-6, 1e-3, 0.5, 2.0, 10.0, 49.0, 51.0, 100.0, 1e3, 1e4, 1e5, 1e6}) {
    CAPTURE(k);
    CHECK(log_normalizer(3, k) == doctest::Approx(log_c3(k)).epsilon(1e-11));
    if (k >= 0.5) CHECK(log_normalizer(5, k) == doctest::Approx(log_c5(k)).epsilon(1e-9));
  }
  // Continuity at 0.
  for (int d : {2, 3, 8, 16}) {
    CHECK(log_normalizer(d, 1e-12) == doctest::Approx(log_normalizer(d, 0.0)).epsilon(1e-10));
    CHECK(log_normalizer(d, 0.0) == doctest::Approx(-log_surface_area(d)).epsilon(1e-14));
  }
}

TEST_CASE("mean resultant length is the Bessel ratio") {
  for (double k : {1e-4, 0.3, 1.0, 10.0, 60.0, 100.0, 1e3, 1e6}) {
    CHECK(mean_resultant_length(3, k) == doctest::Approx(a3(k)).epsilon(1e-9));
  }
  for (int d : {2, 4, 8, 16}) {
    const double nu = d / 2.0 - 1.0;
    for (double k : {0.5, 3.0, 40.0, 120.0, 500.0}) {
      const double oracle = std::cyl_bessel_i(nu + 1.0, k) / std::cyl_bessel_i(nu, k);
      CHECK(mean_resultant_length(d, k) == doctest::Approx(oracle).epsilon(1e-10));
    }
  }
  CHECK(mean_resultant_length(5, 0.0) == 0.0);
  // Derivative of log C_d is -A_d.
  for (int d : {3, 8}) {
    for (double k : {0.5, 5.0, 80.0}) {
      const double h = 1e-5;
      const double fd = (log_normalizer(d, k + h) - log_normalizer(d, k - h)) / (2 * h);
      CHECK(fd == doctest::Approx(-mean_resultant_length(d, k)).epsilon(1e-7));
    }
  }
}

TEST_CASE("vmf_log_density examples") {
  const UnitVector mu = UnitVector::basis(3, 0);
  const UnitVector z = UnitVector::normalized(Eigen::Vector3d(0.3, -0.2, 0.9));
  CHECK(vmf_log_density(VonMisesFisher(mu, 0.0), z) == doctest::Approx(std::log(1.0 / (4 * pi))));
  CHECK(vmf_log_density(VonMisesFisher(mu, 2.0), mu) == doctest::Approx(log_normalizer(3, 2.0) + 2.0));
  CHECK_THROWS_AS(vmf_log_density(VonMisesFisher(mu, 2.0), UnitVector::basis(4, 0)),
                  std::invalid_argument);
}

namespace {

struct McIntegral {
  double mean;
  double se;
  double ess;  // effective sample size of the integrand weights
};

template <typename F>
McIntegral uniform_integral(int d, int n, std::uint64_t seed, F log_f) {
  const SampleBatch u = sample_uniform_sphere(d, n, seed);
  const double area = std::exp(log_surface_area(d));
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = area * std::exp(log_f(Eigen::VectorXd(u.points.row(i))));
    s += v;
    s2 += v * v;
  }
  const double m = s / n;
  return {m, std::sqrt((s2 / n - m * m) / (n - 1)), s * s / s2};
}

}  // namespace

TEST_CASE("vMF density integrates to one") {
  for (int d : {3, 8, 16}) {
    for (double k : {0.0, 1.0, 10.0, 100.0}) {
      CAPTURE(d);
      CAPTURE(k);
      const VonMisesFisher dist(UnitVector(random_unit(d, 5 + d)), k);
      const McIntegral r = uniform_integral(d, 1000000, 11 * d + static_cast<int>(k),
                                            [&](const Eigen::VectorXd& z) { return vmf_log_density(dist, z); });
      if (k == 0.0) {
        CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));
      } else if (r.ess >= 1000.0) {
        CHECK(std::abs(r.mean - 1.0) <= 3.0 * r.se);
      } else {
        // Uniform proposals almost never reach the mode; the quadrature case
        // below covers this cell.
        MESSAGE("uniform MC skipped, effective sample size " << r.ess);
      }
    }
  }
}

TEST_CASE("vMF density integrates to one by radial quadrature") {
  // ∫ f(μᵀz) dz = |S^{d-2}| ∫_{-1}^{1} f(t) (1 - t²)^{(d-3)/2} dt, Simpson on a
  // fine grid in the angle.
  for (int d : {3, 8, 16}) {
    for (double k : {0.0, 1.0, 10.0, 100.0, 1000.0}) {
      const int m = 200000;
      double acc = 0.0;
      for (int i = 0; i <= m; ++i) {
        const double th = pi * i / m;
        const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double t = std::cos(th);
        acc += w * std::exp(log_normalizer(d, k) + k * t + (d - 2) * std::log(std::sin(th) + 1e-300));
      }
      const double integral = std::exp(log_surface_area(d - 1)) * acc * (pi / m) / 3.0;
      CAPTURE(d);
      CAPTURE(k);
      CHECK(integral == doctest::Approx(1.0).epsilon(1e-8));
    }
  }
}

TEST_CASE("nivMF reduces to vMF for constant lambda") {
  for (int d : {3, 8}) {
    for (double c : {1.0, 10.0, 50.0}) {
      const UnitVector mu(random_unit(d, 100 + d));
      const NonIsotropicVMF ni(mu, Eigen::VectorXd::Constant(d, c));
      const VonMisesFisher v(mu, c);
      const NormalizerEstimate norm = nivmf_log_normalizer(ni);
      CHECK(norm.log_standard_error > 0.0);
      for (int i = 0; i < 100; ++i) {
        const Eigen::VectorXd z = random_unit(d, 1000 + i);
        const double diff = nivmf_log_density(ni, z) - vmf_log_density(v, z);
        CHECK(std::abs(diff) <= 3.0 * norm.log_standard_error);
      }
    }
  }
}

TEST_CASE("nivMF density is highest along the concentrated axis") {
  const NonIsotropicVMF ni(UnitVector::basis(3, 0), Eigen::Vector3d(5, 1, 1));
  CHECK(nivmf_log_density(ni, UnitVector::basis(3, 0)) > nivmf_log_density(ni, UnitVector::basis(3, 1)));
  CHECK_THROWS_AS(nivmf_log_density(ni, UnitVector::basis(4, 0)), std::invalid_argument);
}

TEST_CASE("nivMF density integrates to one") {
  struct Case {
    int d;
    Eigen::VectorXd lambda;
  };
  std::vector<Case> cases = {{3, Eigen::Vector3d(5, 1, 1)},
                             {3, Eigen::Vector3d(0.5, 20, 3)},
                             {8, Eigen::VectorXd::LinSpaced(8, 1, 10)},
                             {16, Eigen::VectorXd::LinSpaced(16, 0.5, 4)}};
  for (const auto& c : cases) {
    const NonIsotropicVMF ni(UnitVector(random_unit(c.d, 77)), c.lambda);
    const NormalizerEstimate norm = nivmf_log_normalizer(ni);
    const McIntegral r = uniform_integral(c.d, 1000000, 99 + c.d, [&](const Eigen::VectorXd& z) {
      return nivmf_log_density(ni, z);
    });
    const double se = std::hypot(r.se, norm.log_standard_error);
    CAPTURE(c.d);
    CHECK(std::abs(r.mean - 1.0) <= 3.0 * se);
  }
}

TEST_CASE("nivMF density ratio to vMF is constant for constant lambda") {
  const UnitVector mu(random_unit(5, 3));
  const NonIsotropicVMF ni(mu, Eigen::VectorXd::Constant(5, 7.0));
  const VonMisesFisher v(mu, 7.0);
  const double r0 = nivmf_log_density(ni, random_unit(5, 4)) - vmf_log_density(v, random_unit(5, 4));
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd z = random_unit(5, 50 + i);
    CHECK(nivmf_log_density(ni, z) - vmf_log_density(v, z) == doctest::Approx(r0).epsilon(1e-10));
  }
}

TEST_CASE("sample_vmf examples") {
  const UnitVector mu = UnitVector::basis(3, 2);
  const SampleBatch u = sample_vmf(VonMisesFisher(mu, 0.0), 100000, 1);
  CHECK(u.points.colwise().mean().norm() < 0.02);
  const SampleBatch tight = sample_vmf(VonMisesFisher(mu, 1e6), 10000, 2);
  for (int i = 0; i < tight.size(); ++i) REQUIRE(tight.points.row(i).dot(mu.values()) > 0.9999);
  const UnitVector mu5(random_unit(5, 9));
  const SampleBatch s = sample_vmf(VonMisesFisher(mu5, 10.0), 100000, 3);
  CHECK(std::abs((s.points * mu5.values()).mean() - mean_resultant_length(5, 10.0)) < 0.01);
  for (int i = 0; i < s.size(); ++i) REQUIRE(std::abs(s.points.row(i).norm() - 1.0) < 1e-6);
  CHECK_THROWS(sample_vmf(VonMisesFisher(mu, 1.0), 0, 1));
}

TEST_CASE("sampler law over the grid") {
  for (int d : {3, 8, 16}) {
    for (double k : {0.0, 1.0, 10.0, 100.0}) {
      const UnitVector mu(random_unit(d, 21 + d));
      const SampleBatch s = sample_vmf(VonMisesFisher(mu, k), 100000, 1000 + d);
      const double r = s.points.colwise().mean().norm();
      CAPTURE(d);
      CAPTURE(k);
      CHECK(std::abs(r - mean_resultant_length(d, k)) < 0.01);
    }
  }
}

TEST_CASE("sampling is deterministic and independent of thread count") {
  const VonMisesFisher dist(UnitVector(random_unit(6, 1)), 4.0);
  set_num_threads(1);
  const SampleBatch a = sample_vmf(dist, 5000, 17);
  set_num_threads(4);
  const SampleBatch b = sample_vmf(dist, 5000, 17);
  set_num_threads(1);
  CHECK(a.points == b.points);
  CHECK(sample_vmf(dist, 5000, 18).points != a.points);
}

TEST_CASE("rotation equivariance of the sampler law") {
  const int d = 4;
  const Eigen::MatrixXd q = random_rotation(d, 5);
  const UnitVector mu(random_unit(d, 6));
  const UnitVector qmu(Eigen::VectorXd(q * mu.values()));
  for (double k : {1.0, 10.0}) {
    const SampleBatch a = sample_vmf(VonMisesFisher(mu, k), 100000, 1);
    const SampleBatch b = sample_vmf(VonMisesFisher(qmu, k), 100000, 2);
    const Eigen::MatrixXd qa = a.points * q.transpose();
    CHECK(std::abs(qa.colwise().mean().norm() - b.points.colwise().mean().norm()) < 0.01);
    CHECK(std::abs((qa * qmu.values()).mean() - (b.points * qmu.values()).mean()) < 0.01);
  }
}

TEST_CASE("estimate_kappa") {
  Eigen::MatrixXd same(10, 3);
  same.rowwise() = Eigen::RowVector3d(0, 1, 0);
  const KappaEstimate deg = estimate_kappa(same);
  CHECK(deg.degenerate);
  CHECK(std::isinf(deg.kappa));
  CHECK(estimate_kappa(sample_uniform_sphere(3, 100000, 4)).kappa < 0.05);
  const KappaEstimate k20 = estimate_kappa(sample_vmf(VonMisesFisher(UnitVector::basis(3, 0), 20.0), 100000, 5));
  CHECK(k20.kappa >= 18.0);
  CHECK(k20.kappa <= 22.0);
  CHECK_FALSE(k20.degenerate);
  for (int d : {3, 8, 16}) {
    for (double k : {1.0, 10.0, 100.0}) {
      const KappaEstimate e = estimate_kappa(sample_vmf(VonMisesFisher(UnitVector(random_unit(d, 8)), k), 100000, 9));
      CAPTURE(d);
      CAPTURE(k);
      CHECK(std::abs(e.kappa - k) <= 0.1 * k);
    }
  }
  CHECK_THROWS(estimate_kappa(Eigen::MatrixXd(Eigen::MatrixXd::Identity(1, 3))));
}

TEST_CASE("random_rotation") {
  for (int d : {2, 3, 7}) {
    const Eigen::MatrixXd q = random_rotation(d, 12);
    CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(q.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 10; ++i) CHECK(std::abs((q * random_unit(d, i)).norm() - 1.0) < 1e-9);
    CHECK(random_rotation(d, 12) == q);
  }
  int far = 0;
  for (int s = 0; s < 100; ++s) far += (random_rotation(3, 2 * s) - random_rotation(3, 2 * s + 1)).norm() > 0.1;
  CHECK(far == 100);
}

TEST_CASE("align_rotation") {
  Rng rng(3);
  Eigen::MatrixXd a(200, 3);
  for (int i = 0; i < 200; ++i) a.row(i) = rng.normal_vector(3).transpose();
  const Alignment self = align_rotation(a, a);
  CHECK((self.rotation - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-8);
  CHECK(self.residual < 1e-10);
  const Eigen::MatrixXd r = random_rotation(3, 4);
  CHECK((align_rotation(a, a * r).rotation - r).norm() < 1e-6);
  Eigen::MatrixXd eps(200, 3);
  for (int i = 0; i < 200; ++i) eps.row(i) = 0.05 * rng.normal_vector(3).transpose();
  const Alignment noisy = align_rotation(a, a * r + eps);
  CHECK(std::abs(noisy.residual - eps.norm()) <= 0.1 * eps.norm());
  CHECK_FALSE(noisy.degenerate);
  Eigen::MatrixXd flat = a;
  flat.col(2).setZero();
  const Alignment deg = align_rotation(flat, flat);
  CHECK(deg.degenerate);
  CHECK((deg.rotation.transpose() * deg.rotation - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-10);
  CHECK(deg.residual < 1e-10);
  CHECK_THROWS(align_rotation(a.topRows(2), a.topRows(2)));
}
