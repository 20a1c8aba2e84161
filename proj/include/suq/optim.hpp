#pragma once

#include <vector>

#include "suq/autodiff.hpp"

namespace suq {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. State is tied to the parameter order of the
// first step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<ad::Parameter*>& params, const ad::Gradients& grads);
  void step(const std::vector<ad::Parameter*>& params, const std::vector<Eigen::MatrixXd>& grads);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace suq
