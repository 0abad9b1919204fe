#include "vlpre/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace vlpre {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw std::invalid_argument("adam: betas must lie in [0,1)");
  }
}

void Adam::set_lr(double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
  cfg_.lr = lr;
}

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void Adam::step(const std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].data().size(), 0.0);
      v_[i].assign(params[i].data().size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: parameter list changed between steps");
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = const_cast<Tensor&>(params[i]);
    const auto& g = p.grad();
    size_t n = p.data().size();
    if (m_[i].size() != n) throw std::invalid_argument("adam: parameter size changed");
    for (size_t j = 0; j < n; ++j) {
      double gj = g.empty() ? 0.0 : g[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p.data()[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace vlpre
