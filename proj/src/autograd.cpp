#include "faq_agg/autograd.hpp"

#include <unordered_set>

namespace faq::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <class T>
T Var<T>::item() const {
  if (node_->value.size() != 1) {
    throw ValidationError("item() on tensor of shape " + shape_str(node_->value.shape()));
  }
  return node_->value[0];
}

template <class T>
const Tensor<T>& Var<T>::grad() const {
  return node_->grad_buffer();
}

template <class T>
void Var<T>::zero_grad() {
  if (node_->has_grad()) node_->grad.fill(T{0});
}

template <class T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ValidationError("backward() requires a scalar, got shape " + shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) {
      n->backward_fn(*n);
      // Interior gradients are not needed after propagation.
      n->grad = Tensor<T>();
    }
  }
}

template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var<T>(std::move(node));
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, const std::vector<Var<float>>&,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, const std::vector<Var<double>>&,
                                 std::function<void(Node<double>&)>);

}  // namespace faq::ag
