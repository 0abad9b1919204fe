#include "vlpre/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vlpre {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double sigma, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (double& x : t.data()) x = rng.normal() * sigma;
  return t;
}

Tensor Tensor::truncated_normal(std::vector<int> shape, Rng& rng, double sigma,
                                bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (double& x : t.data()) x = rng.truncated_normal(sigma);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

double Tensor::at(int i, int j) const {
  if (ndim() != 2) throw std::invalid_argument("at(i,j) on tensor of shape " + shape_str(shape()));
  return node_->value[static_cast<size_t>(i) * static_cast<size_t>(dim(1)) +
                      static_cast<size_t>(j)];
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detached() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() expects a scalar loss, got shape " +
                                shape_str(loss.shape()));
  }
  auto root = loss.node();

  // Iterative post-order DFS; recursion would overflow on long op chains.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : topo) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

}  // namespace vlpre
