#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nucleigan {

/// NCHW extent. Scalars are 1x1x1x1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Reference-semantics handle to a node of a dynamically built graph.
/// Copies share storage; use `clone()` for a deep copy.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  /// Backpropagates from a scalar, accumulating into leaf grads.
  /// Intermediate grads and closures are released afterwards.
  void backward();

  /// Same storage is not shared: the result is a fresh leaf.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Graph construction switch; thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace nucleigan
