#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "suq/autodiff.hpp"

namespace suq {

enum class KappaSource { Head, Norm };
// Output link of the concentration head.
enum class KappaLink { Softplus, Exp };

KappaSource parse_kappa_source(const std::string& name);
KappaLink parse_kappa_link(const std::string& name);

struct EncoderSpec {
  int input_dim = 10;
  std::vector<int> hidden = {64, 64};
  int output_dim = 3;
  KappaSource kappa_source = KappaSource::Head;
  int kappa_hidden = 32;
  double kappa_min = 1e-3;
  // kappa = kappa_min + kappa_scale * link(head); the head's output bias
  // starts where kappa equals kappa_init.
  KappaLink kappa_link = KappaLink::Softplus;
  double kappa_scale = 1.0;
  double kappa_init = 10.0;
  bool loss_head = false;
  int loss_head_hidden = 32;
};

struct EncoderOutput {
  ad::Var means;   // n x d, unit rows
  ad::Var kappas;  // n x 1, >= kappa_min
  ad::Var trunk;   // n x h
};

// MLP trunk with a mean head (normalized onto the sphere), a concentration
// head, and an optional loss-prediction head. Every parameter is initialised
// from its own named stream, so adding a head leaves the others unchanged.
class EncoderNet {
 public:
  EncoderNet(EncoderSpec spec, std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }

  // Rejects non-finite inputs, naming the first offending row.
  EncoderOutput forward(ad::Tape& tape, const Eigen::MatrixXd& batch) const;

  // Loss-prediction head u(x) on trunk features (n x 1). With stop_grad the
  // trunk receives no gradient from anything computed here.
  ad::Var predict_loss(ad::Tape& tape, const ad::Var& trunk, bool stop_grad = true) const;

  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<ad::Parameter*> parameter_ptrs();
  // Parameters whose name starts with `prefix` ("trunk.", "mean.", "kappa.", "loss.").
  std::vector<ad::Parameter*> parameter_ptrs(const std::string& prefix);

  ad::Parameter& param(const std::string& name);
  const ad::Parameter& param(const std::string& name) const;

 private:
  void add_param(const std::string& name, int rows, int cols, std::uint64_t seed, double stddev);
  ad::Var dense(ad::Tape& tape, const ad::Var& x, const std::string& prefix) const;

  EncoderSpec spec_;
  std::vector<ad::Parameter> params_;
};

}  // namespace suq
