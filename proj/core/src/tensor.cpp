#include "nucleigan/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "nucleigan/errors.hpp"

namespace nucleigan {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->shape = shape;
  node_->value.assign(shape.numel(), fill);
  node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (values.size() != shape.numel())
    throw ArgumentError("tensor value count does not match shape " + shape.str());
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ArgumentError("item() on non-scalar tensor " + shape().str());
  return node_->value[0];
}

template <class T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out(node_->shape, node_->value);
  return out;
}

template <class T>
void Tensor<T>::backward() {
  if (numel() != 1) throw ArgumentError("backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      auto p = top.first->parents[top.second++];
      if (p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->backward_fn) {
      node->backward_fn(*node);
      node->backward_fn = nullptr;
      node->parents.clear();
      std::vector<T>().swap(node->grad);
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace nucleigan
