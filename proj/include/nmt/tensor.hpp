#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor<Scalar> is a cheap handle onto a shared node. Every op that reads
// a tensor requiring gradients records its parents and a backward closure on
// the result node; backward() on a scalar root walks that graph in reverse
// topological order and accumulates into the leaves. Scalar is float for
// training and inference, double for gradient checks.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nmt/errors.hpp"

namespace nmt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Thread-local switch; while disabled, ops do not record graph nodes.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

/// RAII scope that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<Scalar>& ensure_grad() {
    if (grad.empty() && !data.empty()) grad.assign(data.size(), Scalar(0));
    return grad;
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;

  Tensor() : node_(std::make_shared<Node>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<Scalar>(static_cast<std::size_t>(n), Scalar(0)),
                  requires_grad);
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    const Index n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<Scalar>(static_cast<std::size_t>(n), value),
                  requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<Scalar>{value}, requires_grad);
  }

  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (checked_numel(shape) != static_cast<Index>(data.size())) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  /// Size of dimension `axis`; negative axes count from the end.
  Index dim(Index axis) const {
    const Index r = rank();
    const Index a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const Scalar> data() const { return node_->data; }
  std::span<Scalar> mutable_data() { return node_->data; }
  Scalar item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  Scalar operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf) throw UsageError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::span<const Scalar> grad() const { return node_->ensure_grad(); }
  std::span<Scalar> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0)); }

  /// Same values, no history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  /// Accumulates d(this)/d(leaf) into every reachable leaf requiring grad.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Graph plumbing used by op implementations.
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    }
    return shape_numel(shape);
  }

  std::shared_ptr<Node> node_;
};

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (numel() != 1) {
    throw UsageError("backward() needs a scalar root, got shape " + shape_str(shape()));
  }
  // Iterative post-order DFS; `order` ends up with every node after its parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior buffers belong to this pass only; leaves keep accumulating.
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), Scalar(0));
  }
  if (!node_->requires_grad) return;
  node_->ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace detail {

/// Builds an op result; attaches history only when a parent needs gradients.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, std::vector<Scalar> data,
                           std::initializer_list<Tensor<Scalar>> parents,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  Tensor<Scalar> out(std::move(shape), std::move(data), false);
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor<Scalar>& p) { return p.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.is_leaf = false;
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

/// Gradient buffer of parent `i` if it participates, else nullptr.
template <typename Scalar>
Scalar* parent_grad(Node<Scalar>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

}  // namespace detail

}  // namespace nmt
