#include <doctest.h>

#include <cmath>

#include "fd.hpp"
#include "suq/encoder.hpp"
#include "suq/optim.hpp"
#include "suq/parallel.hpp"
#include "suq/rng.hpp"
#include "suq/sphere.hpp"
#include "suq/vmf_reparam.hpp"

using namespace suq;
using namespace suq::ad;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

Eigen::MatrixXd positive_matrix(int r, int c, std::uint64_t seed) {
  return random_matrix(r, c, seed).array().abs() + 0.5;
}

}  // namespace

TEST_CASE("sum of parameters has unit gradient") {
  Parameter a{"a", random_matrix(2, 3, 1)};
  Parameter b{"b", random_matrix(4, 1, 2)};
  Parameter unused{"unused", random_matrix(2, 2, 3)};
  Tape tape;
  Var loss = add(sum(tape.parameter(a)), sum(tape.parameter(b)));
  tape.parameter(unused);
  const Gradients g = tape.backward(loss);
  CHECK(g.of(a) == Eigen::MatrixXd::Ones(2, 3));
  CHECK(g.of(b) == Eigen::MatrixXd::Ones(4, 1));
  CHECK(g.of(unused) == Eigen::MatrixXd::Zero(2, 2));
  Parameter never{"never", random_matrix(3, 3, 4)};
  CHECK(g.of(never) == Eigen::MatrixXd::Zero(3, 3));
}

TEST_CASE("quadratic loss gradient is c theta") {
  Parameter p{"p", random_matrix(3, 2, 5)};
  const double c = 2.5;
  Tape tape;
  Var loss = scale(sum(square(tape.parameter(p))), c / 2.0);
  const Gradients g = tape.backward(loss);
  CHECK((g.of(p) - c * p.value).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("backward rejects foreign and non-scalar losses") {
  Tape t1, t2;
  Var x = t1.variable(random_matrix(2, 2, 1));
  CHECK_THROWS_AS(t2.backward(sum(x)), std::invalid_argument);
  CHECK_THROWS_AS(t1.backward(x), std::invalid_argument);
  Var y = t2.variable(random_matrix(2, 2, 1));
  CHECK_THROWS(add(x, y));
}

TEST_CASE("shared subexpressions accumulate") {
  Tape tape;
  Var x = tape.variable(Eigen::MatrixXd::Constant(1, 1, 3.0));
  Var y = mul(x, x);
  Var loss = sum(add(y, mul(y, x)));  // x² + x³
  CHECK(tape.backward(loss).of(x)(0, 0) == doctest::Approx(2 * 3.0 + 3 * 9.0));
}

TEST_CASE("finite differences for every op") {
  struct Case {
    const char* name;
    std::vector<Eigen::MatrixXd> inputs;
    fd::Builder f;
  };
  const Eigen::MatrixXd a = random_matrix(4, 3, 10);
  const Eigen::MatrixXd b = random_matrix(4, 3, 11);
  const Eigen::MatrixXd w = random_matrix(3, 5, 12);
  const Eigen::MatrixXd row = random_matrix(1, 3, 13);
  const Eigen::MatrixXd col = random_matrix(4, 1, 14);
  const Eigen::MatrixXd pos = positive_matrix(4, 3, 15);
  const Eigen::MatrixXd pcol = positive_matrix(4, 1, 16);
  const Eigen::MatrixXd sq = random_matrix(4, 4, 17);
  const Eigen::MatrixXd weights = random_matrix(4, 3, 18);
  auto wsum = [weights](Tape& t, Var v) {
    if (v.rows() == weights.rows() && v.cols() == weights.cols()) {
      return sum(mul(v, t.constant(weights)));
    }
    return sum(mul(v, t.constant(random_matrix(static_cast<int>(v.rows()), static_cast<int>(v.cols()), 99))));
  };
  std::vector<Case> cases = {
      {"add", {a, b}, [&](Tape& t, auto& v) { return wsum(t, add(v[0], v[1])); }},
      {"sub", {a, b}, [&](Tape& t, auto& v) { return wsum(t, sub(v[0], v[1])); }},
      {"mul", {a, b}, [&](Tape& t, auto& v) { return wsum(t, mul(v[0], v[1])); }},
      {"div", {a, pos}, [&](Tape& t, auto& v) { return wsum(t, div(v[0], v[1])); }},
      {"scale", {a}, [&](Tape& t, auto& v) { return wsum(t, scale(v[0], -1.7)); }},
      {"add_scalar", {a}, [&](Tape& t, auto& v) { return wsum(t, add_scalar(v[0], 0.3)); }},
      {"scale_by", {a, Eigen::MatrixXd::Constant(1, 1, 0.7)},
       [&](Tape& t, auto& v) { return wsum(t, scale_by(v[0], v[1])); }},
      {"matmul", {a, w}, [&](Tape& t, auto& v) { return wsum(t, matmul(v[0], v[1])); }},
      {"transpose", {a}, [&](Tape& t, auto& v) { return wsum(t, transpose(v[0])); }},
      {"add_row", {a, row}, [&](Tape& t, auto& v) { return wsum(t, add_row(v[0], v[1])); }},
      {"mul_row", {a, row}, [&](Tape& t, auto& v) { return wsum(t, mul_row(v[0], v[1])); }},
      {"mul_col", {a, col}, [&](Tape& t, auto& v) { return wsum(t, mul_col(v[0], v[1])); }},
      {"div_col", {a, pcol}, [&](Tape& t, auto& v) { return wsum(t, div_col(v[0], v[1])); }},
      {"sub_col", {a, col}, [&](Tape& t, auto& v) { return wsum(t, sub_col(v[0], v[1])); }},
      {"exp", {a}, [&](Tape& t, auto& v) { return wsum(t, exp(v[0])); }},
      {"log", {pos}, [&](Tape& t, auto& v) { return wsum(t, log(v[0])); }},
      {"tanh", {a}, [&](Tape& t, auto& v) { return wsum(t, tanh(v[0])); }},
      {"softplus", {a}, [&](Tape& t, auto& v) { return wsum(t, softplus(v[0])); }},
      {"sqrt", {pos}, [&](Tape& t, auto& v) { return wsum(t, sqrt(v[0])); }},
      {"square", {a}, [&](Tape& t, auto& v) { return wsum(t, square(v[0])); }},
      {"mean", {a}, [&](Tape&, auto& v) { return mean(square(v[0])); }},
      {"row_sum", {a}, [&](Tape& t, auto& v) { return wsum(t, row_sum(v[0])); }},
      {"row_norm", {a}, [&](Tape& t, auto& v) { return wsum(t, row_norm(v[0])); }},
      {"normalize_rows", {a}, [&](Tape& t, auto& v) { return wsum(t, normalize_rows(v[0])); }},
      {"row_dot", {a, b}, [&](Tape& t, auto& v) { return wsum(t, row_dot(v[0], v[1])); }},
      {"row_logsumexp", {a}, [&](Tape& t, auto& v) { return wsum(t, row_logsumexp(v[0])); }},
      {"row_logmeanexp", {a}, [&](Tape& t, auto& v) { return wsum(t, row_logmeanexp(v[0])); }},
      {"pick", {a}, [&](Tape& t, auto& v) { return wsum(t, pick(v[0], {0, 2, 1, 2})); }},
      {"slice_rows", {a}, [&](Tape& t, auto& v) { return wsum(t, slice_rows(v[0], 1, 2)); }},
      {"concat_rows", {a, b}, [&](Tape& t, auto& v) { return wsum(t, concat_rows({v[0], v[1]})); }},
      {"concat_cols", {a, col}, [&](Tape& t, auto& v) { return wsum(t, concat_cols({v[0], v[1]})); }},
      {"set_diagonal", {sq, col}, [&](Tape& t, auto& v) { return wsum(t, set_diagonal(v[0], v[1])); }},
      {"repeat_rows", {a}, [&](Tape& t, auto& v) { return wsum(t, repeat_rows(v[0], 3)); }},
      {"log_vmf_normalizer", {pos * 10.0},
       [&](Tape& t, auto& v) { return wsum(t, log_vmf_normalizer(v[0], 5)); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const fd::Report r = fd::check(c.f, c.inputs);
    CHECK(r.max_rel < 1e-6);
  }
}

TEST_CASE("check_finite names the offending op") {
  Tape tape;
  tape.set_check_finite(true);
  Var x = tape.variable(Eigen::MatrixXd::Constant(1, 1, -1.0));
  try {
    log(x);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("stop_gradient") {
  Tape tape;
  Var x = tape.variable(random_matrix(3, 2, 1));
  Var s = stop_gradient(x);
  CHECK(s.value() == x.value());
  Var loss = add(sum(square(s)), sum(exp(scale(s, 2.0))));
  const Gradients g = tape.backward(loss);
  CHECK(g.of(x) == Eigen::MatrixXd::Zero(3, 2));
  CHECK_FALSE(tape.requires_grad(loss));
}

TEST_CASE("encoder forward") {
  EncoderSpec spec;
  spec.input_dim = 6;
  spec.output_dim = 4;
  spec.hidden = {16, 16};
  EncoderNet net(spec, 3);
  const Eigen::MatrixXd x = random_matrix(9, 6, 4);
  Tape tape;
  EncoderOutput out = net.forward(tape, x);
  for (int i = 0; i < 9; ++i) {
    CHECK(std::abs(out.means.value().row(i).norm() - 1.0) < 1e-6);
    CHECK(out.kappas.value()(i, 0) >= spec.kappa_min);
  }
  CHECK(out.trunk.cols() == 16);
  // Duplicate rows give identical outputs.
  Eigen::MatrixXd dup(2, 6);
  dup.row(0) = x.row(2);
  dup.row(1) = x.row(2);
  Tape t2;
  EncoderOutput o2 = net.forward(t2, dup);
  CHECK(o2.means.value().row(0) == o2.means.value().row(1));
  CHECK(o2.kappas.value()(0, 0) == o2.kappas.value()(1, 0));
  // Degenerate mean head.
  net.param("mean.w").value.setZero();
  net.param("mean.b").value = Eigen::MatrixXd::Zero(1, 4);
  net.param("mean.b").value(0, 0) = 2.0;
  Tape t3;
  EncoderOutput o3 = net.forward(t3, x);
  for (int i = 0; i < 9; ++i) CHECK(o3.means.value().row(i) == Eigen::RowVector4d(1, 0, 0, 0));
  // Non-finite input.
  Eigen::MatrixXd bad = x;
  bad(5, 2) = NAN;
  Tape t4;
  try {
    net.forward(t4, bad);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("row 5") != std::string::npos);
  }
  CHECK_THROWS(net.forward(t4, random_matrix(2, 5, 1)));
}

TEST_CASE("encoder initial kappa and norm source") {
  EncoderSpec spec;
  spec.input_dim = 5;
  spec.kappa_init = 20.0;
  spec.kappa_scale = 4.0;
  EncoderNet net(spec, 1);
  Tape tape;
  EncoderOutput out = net.forward(tape, random_matrix(50, 5, 2));
  CHECK(out.kappas.value().mean() == doctest::Approx(20.0).epsilon(0.2));
  spec.kappa_source = KappaSource::Norm;
  EncoderNet norm_net(spec, 1);
  Tape t2;
  EncoderOutput o2 = norm_net.forward(t2, random_matrix(5, 5, 2));
  CHECK((o2.kappas.value().array() >= spec.kappa_min).all());
  CHECK_THROWS(norm_net.param("kappa.0.w"));
  CHECK(parse_kappa_source("norm") == KappaSource::Norm);
  CHECK_THROWS(parse_kappa_source("exp"));
}

TEST_CASE("exp kappa link starts at kappa_init") {
  EncoderSpec spec;
  spec.input_dim = 5;
  spec.kappa_link = KappaLink::Exp;
  spec.kappa_init = 1.0;
  spec.kappa_scale = 1.0;
  EncoderNet net(spec, 3);
  CHECK(net.param("kappa.1.b").value(0, 0) == doctest::Approx(std::log(1.0 - spec.kappa_min)));
  Tape tape;
  EncoderOutput out = net.forward(tape, random_matrix(50, 5, 2));
  CHECK(out.kappas.value().mean() == doctest::Approx(1.0).epsilon(0.2));
  CHECK(parse_kappa_link("exp") == KappaLink::Exp);
  CHECK(parse_kappa_link("softplus") == KappaLink::Softplus);
  CHECK_THROWS(parse_kappa_link("relu"));
}

TEST_CASE("adding a head leaves the other parameters unchanged") {
  EncoderSpec spec;
  spec.input_dim = 5;
  EncoderNet plain(spec, 9);
  spec.loss_head = true;
  EncoderNet with_head(spec, 9);
  for (const auto& p : plain.parameters()) CHECK(with_head.param(p.name).value == p.value);
}

TEST_CASE("encoder gradients match finite differences") {
  const std::pair<KappaSource, KappaLink> variants[] = {{KappaSource::Head, KappaLink::Softplus},
                                                        {KappaSource::Head, KappaLink::Exp},
                                                        {KappaSource::Norm, KappaLink::Softplus}};
  for (const auto& [src, link] : variants) {
    EncoderSpec spec;
    spec.kappa_link = link;
    spec.input_dim = 4;
    spec.output_dim = 3;
    spec.hidden = {6, 5};
    spec.kappa_hidden = 4;
    spec.kappa_source = src;
    spec.loss_head = true;
    spec.loss_head_hidden = 3;
    EncoderNet net(spec, 2);
    const Eigen::MatrixXd x = random_matrix(5, 4, 3);
    const Eigen::MatrixXd wm = random_matrix(5, 3, 4);
    const Eigen::MatrixXd wk = random_matrix(5, 1, 5);
    auto loss_of = [&](Tape& t) {
      EncoderOutput o = net.forward(t, x);
      Var u = net.predict_loss(t, o.trunk, false);
      return add(add(sum(mul(o.means, t.constant(wm))), sum(mul(log(o.kappas), t.constant(wk)))),
                 sum(square(u)));
    };
    Tape tape;
    const Gradients g = tape.backward(loss_of(tape));
    for (auto& p : net.parameters()) {
      Eigen::MatrixXd num(p.value.rows(), p.value.cols());
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        const double orig = p.value.data()[i];
        p.value.data()[i] = orig + 1e-4;
        Tape tp;
        const double fp = loss_of(tp).scalar();
        p.value.data()[i] = orig - 1e-4;
        Tape tm;
        const double fm = loss_of(tm).scalar();
        p.value.data()[i] = orig;
        num.data()[i] = (fp - fm) / 2e-4;
      }
      CAPTURE(p.name);
      const double scale = std::max(num.cwiseAbs().maxCoeff(), 1e-6);
      CHECK((g.of(p) - num).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
  }
}

TEST_CASE("loss head behind stop_gradient sends nothing to the trunk") {
  EncoderSpec spec;
  spec.input_dim = 4;
  spec.loss_head = true;
  EncoderNet net(spec, 2);
  Tape tape;
  EncoderOutput o = net.forward(tape, random_matrix(6, 4, 1));
  Var loss = sum(square(net.predict_loss(tape, o.trunk)));
  const Gradients g = tape.backward(loss);
  for (auto* p : net.parameter_ptrs("trunk.")) CHECK(g.of(*p) == Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  for (auto* p : net.parameter_ptrs("mean.")) CHECK(g.of(*p).cwiseAbs().maxCoeff() == 0.0);
  double head = 0.0;
  for (auto* p : net.parameter_ptrs("loss.")) head += g.of(*p).cwiseAbs().sum();
  CHECK(head > 0.0);
}

TEST_CASE("Adam") {
  Parameter p{"p", random_matrix(3, 3, 1)};
  SUBCASE("zero gradients leave parameters unchanged") {
    Adam opt;
    const Eigen::MatrixXd before = p.value;
    for (int i = 0; i < 10; ++i) opt.step({&p}, {Eigen::MatrixXd::Zero(3, 3)});
    CHECK(p.value == before);
  }
  SUBCASE("quadratic bowl") {
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt(cfg);
    const double initial = 0.5 * p.value.squaredNorm();
    double prev = initial;
    for (int step = 0; step < 200; ++step) {
      opt.step({&p}, {p.value});
      const double f = 0.5 * p.value.squaredNorm();
      if (step >= 5 && step < 30) CHECK(f < prev);
      prev = f;
    }
    CHECK(prev < 1e-6 * initial);
  }
  SUBCASE("default settings decrease monotonically after warmup") {
    Adam opt;
    double prev = 0.5 * p.value.squaredNorm();
    for (int step = 0; step < 300; ++step) {
      opt.step({&p}, {p.value});
      const double f = 0.5 * p.value.squaredNorm();
      if (step >= 5) CHECK(f < prev);
      prev = f;
    }
  }
  SUBCASE("determinism") {
    Parameter q = p;
    Adam o1, o2;
    for (int i = 0; i < 50; ++i) {
      o1.step({&p}, {Eigen::MatrixXd(p.value.array().sin())});
      o2.step({&q}, {Eigen::MatrixXd(q.value.array().sin())});
    }
    CHECK(p.value == q.value);
  }
  SUBCASE("shape mismatch") {
    Adam opt;
    CHECK_THROWS_AS(opt.step({&p}, {Eigen::MatrixXd::Zero(2, 3)}), std::invalid_argument);
  }
}

TEST_CASE("reparameterized sample: determinism and marginal law") {
  const int d = 4, n = 3, k = 20000;
  Eigen::MatrixXd mu(n, d);
  for (int i = 0; i < n; ++i) mu.row(i) = Rng(i + 1).uniform_on_sphere(d).transpose();
  Eigen::MatrixXd kappa(n, 1);
  kappa << 0.5, 5.0, 50.0;
  Tape tape;
  Var z = reparameterized_vmf_sample(tape.constant(mu), tape.constant(kappa), k, 7);
  Tape t2;
  Var z2 = reparameterized_vmf_sample(t2.constant(mu), t2.constant(kappa), k, 7);
  CHECK(z.value() == z2.value());
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd rows(k, d);
    for (int j = 0; j < k; ++j) rows.row(j) = z.value().row(j * n + i);
    const SampleBatch ref = sample_vmf(VonMisesFisher(UnitVector(Eigen::VectorXd(mu.row(i).transpose())), kappa(i, 0)), k, 3);
    const double r1 = rows.colwise().mean().norm();
    const double r2 = ref.points.colwise().mean().norm();
    CHECK(std::abs(r1 - r2) < 0.01);
    CHECK(std::abs(r1 - mean_resultant_length(d, kappa(i, 0))) < 0.01);
    for (int j = 0; j < k; ++j) REQUIRE(std::abs(rows.row(j).norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("reparameterized sample: kappa gradient of a smooth functional") {
  // E[f(z)] with f(z) = exp(aᵀz); FD under frozen randomness at k = 2048.
  const int d = 3;
  Eigen::MatrixXd mu(1, d);
  mu << 0.6, 0.0, 0.8;
  const Eigen::MatrixXd a = (Eigen::MatrixXd(1, d) << 0.3, -1.1, 0.7).finished();
  for (double kap : {0.5, 3.0, 20.0}) {
    fd::Builder f = [&](Tape& t, const std::vector<Var>& v) {
      Var z = reparameterized_vmf_sample(normalize_rows(v[0]), v[1], 2048, 11);
      Var s = matmul(z, transpose(t.constant(a)));
      return mean(exp(s));
    };
    const fd::Report r = fd::check(f, {mu, Eigen::MatrixXd::Constant(1, 1, kap)}, 1e-5);
    CAPTURE(kap);
    CHECK(r.max_rel < 1e-2);
  }
}

TEST_CASE("reparameterized sample: Dirac limit") {
  const int d = 3;
  Eigen::MatrixXd mu(1, d);
  mu << 0.0, 0.6, 0.8;
  Tape tape;
  Var m = tape.variable(mu);
  Var z = reparameterized_vmf_sample(m, tape.constant(Eigen::MatrixXd::Constant(1, 1, 1e6)), 16, 3);
  // ‖z - μ‖² ≈ 2(1 - w) has mean (d - 1)/κ, so draws sit about 1.4e-3 from μ.
  double sq = 0.0;
  for (int j = 0; j < 16; ++j) {
    CHECK((z.value().row(j) - mu).norm() < 5e-3);
    CHECK(z.value().row(j).dot(mu.row(0)) > 1.0 - 1e-5);
    sq += (z.value().row(j) - mu).squaredNorm() / 16.0;
  }
  CHECK(sq == doctest::Approx(2.0 / 1e6).epsilon(0.6));
  // d(sum_j gᵀz_j)/dμ ≈ 16 g on the tangent space.
  const Eigen::MatrixXd g = (Eigen::MatrixXd(1, d) << 0.4, -0.2, 0.9).finished();
  Var loss = sum(matmul(z, transpose(tape.constant(g))));
  const Eigen::MatrixXd grad = tape.backward(loss).of(m);
  const Eigen::RowVectorXd tangent = g - g.row(0).dot(mu.row(0)) * mu;
  const Eigen::RowVectorXd got = grad.row(0) - grad.row(0).dot(mu.row(0)) * mu.row(0);
  CHECK((got / 16.0 - tangent).norm() < 1e-2);
}

TEST_CASE("thread count does not change sampled values") {
  Eigen::MatrixXd mu(2, 3);
  mu << 1, 0, 0, 0, 1, 0;
  Eigen::MatrixXd kappa(2, 1);
  kappa << 2, 8;
  set_num_threads(1);
  Tape t1;
  const Eigen::MatrixXd a = reparameterized_vmf_sample(t1.constant(mu), t1.constant(kappa), 64, 5).value();
  set_num_threads(6);
  Tape t2;
  const Eigen::MatrixXd b = reparameterized_vmf_sample(t2.constant(mu), t2.constant(kappa), 64, 5).value();
  set_num_threads(1);
  CHECK(a == b);
}
