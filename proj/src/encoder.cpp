#include "suq/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "suq/rng.hpp"

namespace suq {

using ad::Var;

KappaLink parse_kappa_link(const std::string& name) {
  if (name == "softplus") return KappaLink::Softplus;
  if (name == "exp") return KappaLink::Exp;
  throw std::invalid_argument("unknown kappa_link '" + name + "' (expected softplus or exp)");
}

KappaSource parse_kappa_source(const std::string& name) {
  if (name == "head") return KappaSource::Head;
  if (name == "norm") return KappaSource::Norm;
  throw std::invalid_argument("unknown kappa_source '" + name + "' (expected head or norm)");
}

void EncoderNet::add_param(const std::string& name, int rows, int cols, std::uint64_t seed,
                           double stddev) {
  ad::Parameter p;
  p.name = name;
  p.value = Eigen::MatrixXd::Zero(rows, cols);
  if (stddev > 0.0) {
    Rng rng = Rng(seed).split(name);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) p.value(i, j) = stddev * rng.normal();
  }
  params_.push_back(std::move(p));
}

EncoderNet::EncoderNet(EncoderSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.input_dim < 1 || spec_.output_dim < 2) {
    throw std::invalid_argument("EncoderNet: need input_dim >= 1 and output_dim >= 2");
  }
  if (!(spec_.kappa_min > 0.0)) throw std::invalid_argument("EncoderNet: kappa_min must be > 0");
  if (!(spec_.kappa_init > spec_.kappa_min)) {
    throw std::invalid_argument("EncoderNet: kappa_init must exceed kappa_min");
  }
  int in = spec_.input_dim;
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    const std::string pre = "trunk." + std::to_string(l);
    add_param(pre + ".w", in, spec_.hidden[l], seed, 1.0 / std::sqrt(in));
    add_param(pre + ".b", 1, spec_.hidden[l], seed, 0.0);
    in = spec_.hidden[l];
  }
  const int h = in;
  add_param("mean.w", h, spec_.output_dim, seed, 1.0 / std::sqrt(h));
  add_param("mean.b", 1, spec_.output_dim, seed, 0.0);
  if (spec_.kappa_source == KappaSource::Head) {
    add_param("kappa.0.w", h, spec_.kappa_hidden, seed, 1.0 / std::sqrt(h));
    add_param("kappa.0.b", 1, spec_.kappa_hidden, seed, 0.0);
    add_param("kappa.1.w", spec_.kappa_hidden, 1, seed, 0.1 / std::sqrt(spec_.kappa_hidden));
    add_param("kappa.1.b", 1, 1, seed, 0.0);
    // link^{-1}((kappa_init - kappa_min) / scale)
    const double target = (spec_.kappa_init - spec_.kappa_min) / spec_.kappa_scale;
    param("kappa.1.b").value(0, 0) = spec_.kappa_link == KappaLink::Exp ? std::log(target)
                                     : target > 30.0                   ? target
                                                                       : std::log(std::expm1(target));
  }
  if (spec_.loss_head) {
    add_param("loss.0.w", h, spec_.loss_head_hidden, seed, 1.0 / std::sqrt(h));
    add_param("loss.0.b", 1, spec_.loss_head_hidden, seed, 0.0);
    add_param("loss.1.w", spec_.loss_head_hidden, 1, seed, 1.0 / std::sqrt(spec_.loss_head_hidden));
    add_param("loss.1.b", 1, 1, seed, 0.0);
  }
}

ad::Parameter& EncoderNet::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("EncoderNet: no parameter named " + name);
}

const ad::Parameter& EncoderNet::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("EncoderNet: no parameter named " + name);
}

std::vector<ad::Parameter*> EncoderNet::parameter_ptrs() { return parameter_ptrs(""); }

std::vector<ad::Parameter*> EncoderNet::parameter_ptrs(const std::string& prefix) {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(&p);
  return out;
}

Var EncoderNet::dense(ad::Tape& tape, const Var& x, const std::string& prefix) const {
  return ad::add_row(ad::matmul(x, tape.parameter(param(prefix + ".w"))),
                     tape.parameter(param(prefix + ".b")));
}

EncoderOutput EncoderNet::forward(ad::Tape& tape, const Eigen::MatrixXd& batch) const {
  if (batch.cols() != spec_.input_dim) {
    throw std::invalid_argument("EncoderNet::forward: input has " + std::to_string(batch.cols()) +
                                " columns, expected " + std::to_string(spec_.input_dim));
  }
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    if (!batch.row(i).allFinite()) {
      throw std::invalid_argument("EncoderNet::forward: non-finite input in row " +
                                  std::to_string(i));
    }
  }
  Var x = tape.constant(batch);
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    x = ad::tanh(dense(tape, x, "trunk." + std::to_string(l)));
  }
  EncoderOutput out;
  out.trunk = x;
  Var raw = dense(tape, x, "mean");
  out.means = ad::normalize_rows(raw);
  if (spec_.kappa_source == KappaSource::Head) {
    Var hk = ad::tanh(dense(tape, x, "kappa.0"));
    Var pre = dense(tape, hk, "kappa.1");
    Var k = spec_.kappa_link == KappaLink::Exp ? ad::exp(pre) : ad::softplus(pre);
    out.kappas = ad::add_scalar(ad::scale(k, spec_.kappa_scale), spec_.kappa_min);
  } else {
    out.kappas = ad::add_scalar(ad::row_norm(raw), spec_.kappa_min);
  }
  return out;
}

Var EncoderNet::predict_loss(ad::Tape& tape, const Var& trunk, bool stop_grad) const {
  if (!spec_.loss_head) throw std::logic_error("EncoderNet: loss head not configured");
  Var x = stop_grad ? ad::stop_gradient(trunk) : trunk;
  Var h = ad::tanh(dense(tape, x, "loss.0"));
  return dense(tape, h, "loss.1");
}

}  // namespace suq
