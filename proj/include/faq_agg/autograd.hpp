#pragma once

// Minimal eager reverse-mode autodiff. Every op computes its value
// immediately and, when gradients are enabled and some input requires them,
// records a closure that pushes the output gradient to its parents.

#include <functional>
#include <memory>
#include <vector>

#include "faq_agg/tensor.hpp"

namespace faq::ag {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !grad.empty(); }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  /// Direct access for leaves (optimizer updates, test perturbations).
  Tensor<T>& value_mut() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int rank() const { return node_->value.rank(); }
  std::size_t numel() const { return node_->value.size(); }
  T item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }
  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  const Tensor<T>& grad() const;
  void zero_grad();

  /// Reverse pass from this scalar node; leaf gradients accumulate.
  void backward() const;

  const NodePtr<T>& node() const noexcept { return node_; }
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

 private:
  NodePtr<T> node_;
};

/// Creates an op result. `fn` runs during backward with the result node,
/// whose `grad` holds dL/d(result) and whose `parents` mirror `inputs`.
template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> fn);

/// Convenience: parent `i` of `self` if it wants a gradient, else nullptr.
template <class T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

}  // namespace faq::ag
