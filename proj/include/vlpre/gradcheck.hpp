#pragma once

// Central finite-difference gradient oracle. Independent of the backward
// implementations: it only re-runs forward passes on perturbed inputs.

#include <cmath>
#include <functional>
#include <vector>

#include "vlpre/tensor.hpp"

namespace gradcheck {

struct Result {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({1e-6, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// loss() must rebuild the graph from the current contents of the input
// tensors and return the scalar loss value. inputs are the leaves to check.
inline Result check(const std::function<vlpre::Tensor()>& loss,
                    const std::vector<vlpre::Tensor>& inputs, double eps = 1e-5) {
  vlpre::Tensor l = loss();
  vlpre::backward(l);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) {
    analytic.push_back(t.grad().empty() ? std::vector<double>(t.data().size(), 0.0) : t.grad());
  }

  Result res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    auto t = inputs[k];
    for (size_t i = 0; i < t.data().size(); ++i) {
      double saved = t.data()[i];
      t.data()[i] = saved + eps;
      double up = loss().item();
      t.data()[i] = saved - eps;
      double down = loss().item();
      t.data()[i] = saved;
      double numeric = (up - down) / (2.0 * eps);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[k][i], numeric));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace gradcheck
