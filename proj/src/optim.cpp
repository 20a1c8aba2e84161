#include "suq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace suq {

void Adam::step(const std::vector<ad::Parameter*>& params, const ad::Gradients& grads) {
  std::vector<Eigen::MatrixXd> g;
  g.reserve(params.size());
  for (const ad::Parameter* p : params) g.push_back(grads.of(*p));
  step(params, g);
}

void Adam::step(const std::vector<ad::Parameter*>& params,
                const std::vector<Eigen::MatrixXd>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads count");
  if (m_.empty()) {
    for (const ad::Parameter* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter set changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k]->value;
    if (grads[k].rows() != p.rows() || grads[k].cols() != p.cols() || m_[k].rows() != p.rows() ||
        m_[k].cols() != p.cols()) {
      throw std::invalid_argument("Adam: shape mismatch for " + params[k]->name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Eigen::ArrayXXd g = grads[k].array();
    m_[k] = (config_.beta1 * m_[k].array() + (1.0 - config_.beta1) * g).matrix();
    v_[k] = (config_.beta2 * v_[k].array() + (1.0 - config_.beta2) * g.square()).matrix();
    const Eigen::ArrayXXd mhat = m_[k].array() / c1;
    const Eigen::ArrayXXd vhat = v_[k].array() / c2;
    params[k]->value.array() -= config_.lr * mhat / (vhat.sqrt() + config_.eps);
  }
}

}  // namespace suq
