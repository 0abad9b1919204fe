#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlpre/rng.hpp"

namespace vlpre {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily by the backward pass
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;  // accumulates this node's grad into parents
};

}  // namespace detail

std::string shape_str(const std::vector<int>& shape);
int64_t shape_numel(const std::vector<int>& shape);

// Dense row-major tensor of doubles with reverse-mode autodiff. Cheap to copy
// (shared handle). Values are treated as immutable once an op has consumed
// them; only grad buffers mutate after creation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double sigma = 1.0,
                      bool requires_grad = false);
  static Tensor truncated_normal(std::vector<int> shape, Rng& rng, double sigma,
                                 bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const;
  double at(int i, int j) const;  // 2-D convenience

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient buffer; empty vector if backward has not touched this tensor.
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad();

  // Same values, detached from the graph (no grad, no history). Copies data.
  Tensor detached() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse sweep from a scalar loss. Zeroes grads of every node reachable from
// the loss, then accumulates additively in reverse topological order; each
// node's backward runs exactly once.
void backward(const Tensor& loss);

}  // namespace vlpre
