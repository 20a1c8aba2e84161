#include "suq/vmf_reparam.hpp"

#include <cmath>
#include <stdexcept>

#include "suq/rng.hpp"
#include "suq/sphere.hpp"

namespace suq::ad {

double wood_dw_dkappa(int d, double kappa, double eps) {
  const double m1 = d - 1.0;
  const double s = std::sqrt(4.0 * kappa * kappa + m1 * m1);
  const double b = wood_b(d, kappa);
  const double den = 1.0 - (1.0 - b) * eps;
  const double dw_db = -eps * (2.0 - 2.0 * eps) / (den * den);
  const double q = 2.0 * kappa + s;
  const double db_dk = -m1 * (2.0 + 4.0 * kappa / s) / (q * q);
  return dw_db * db_dk;
}

Var reparameterized_vmf_sample(const Var& mu, const Var& kappa, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("reparameterized_vmf_sample: k must be >= 1");
  if (mu.tape() != kappa.tape()) throw std::invalid_argument("ops on different tapes");
  const Eigen::Index n = mu.rows();
  const int d = static_cast<int>(mu.cols());
  if (kappa.rows() != n || kappa.cols() != 1) {
    throw std::invalid_argument("reparameterized_vmf_sample: kappa must be n x 1");
  }
  const Matrix& m = mu.value();
  const Matrix& kv = kappa.value();
  const Eigen::Index rows = n * k;
  // Per output row: w, r = sqrt(1 - w^2), eps, xi.
  Eigen::VectorXd w(rows), r(rows), eps(rows);
  Matrix xi(rows, d), out(rows, d);
  const Rng base = Rng(seed).split("vmf_reparam");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(kv(i, 0) >= 0.0) || !std::isfinite(kv(i, 0))) {
      throw std::domain_error("reparameterized_vmf_sample: kappa must be finite and >= 0");
    }
    const Rng row_rng = base.stream(static_cast<std::uint64_t>(i));
    for (int j = 0; j < k; ++j) {
      Rng rng = row_rng.stream(static_cast<std::uint64_t>(j));
      const RadialDraw radial = draw_vmf_radial(d, kv(i, 0), rng);
      const Eigen::Index o = j * n + i;
      w(o) = radial.w;
      r(o) = std::sqrt(radial.one_minus_w * (1.0 + radial.w));
      eps(o) = radial.epsilon;
      xi.row(o) = rng.normal_vector(d).transpose();
      const Eigen::RowVectorXd mi = m.row(i);
      Eigen::RowVectorXd t = xi.row(o) - xi.row(o).dot(mi) * mi;
      const double tn = t.norm();
      out.row(o) = w(o) * mi + (tn > 0.0 ? Eigen::RowVectorXd(r(o) / tn * t) : t);
    }
  }
  const int im = mu.id(), ik = kappa.id();
  return mu.tape()->record(
      std::move(out), {im, ik},
      [im, ik, n, k, d, w = std::move(w), r = std::move(r), eps = std::move(eps),
       xi = std::move(xi)](Tape& tape, const Matrix& g) {
        const Matrix& m = tape.value(im);
        const Matrix& kv = tape.value(ik);
        Matrix gm = Matrix::Zero(n, d);
        Matrix gk = Matrix::Zero(n, 1);
        for (int j = 0; j < k; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index o = j * n + i;
            const Eigen::RowVectorXd mi = m.row(i);
            const Eigen::RowVectorXd x = xi.row(o);
            const Eigen::RowVectorXd go = g.row(o);
            const double a = x.dot(mi);
            const Eigen::RowVectorXd t = x - a * mi;
            const double tn = t.norm();
            if (tn <= 0.0) {
              gm.row(i) += w(o) * go;
              continue;
            }
            const Eigen::RowVectorXd v = t / tn;
            const Eigen::RowVectorXd h = r(o) / tn * (go - v.dot(go) * v);
            gm.row(i) += w(o) * go - h.dot(mi) * x - a * h;
            if (r(o) > 0.0) {
              const double dw = wood_dw_dkappa(d, kv(i, 0), eps(o));
              gk(i, 0) += go.dot(mi - (w(o) / r(o)) * v) * dw;
            }
          }
        }
        tape.accumulate(im, gm);
        tape.accumulate(ik, gk);
      },
      "reparameterized_vmf_sample");
}

}  // namespace suq::ad
