#pragma once

#include <cstdint>
#include <vector>

#include "vlpre/tensor.hpp"

namespace vlpre {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter order, so
// step() must always be called with the same parameter list.
class Adam {
 public:
  explicit Adam(AdamConfig cfg);

  void step(const std::vector<Tensor>& params);
  void reset();

  int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr);

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace vlpre
