#include "faq_agg/nn.hpp"

#include <cmath>

namespace faq {

template <class T>
ag::Var<T> ParameterStore<T>::add(const std::string& name, Shape shape, InitSpec init, Rng& rng) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  Tensor<T> value(shape);
  const std::size_t n = value.size();
  // Fan sizes: linear weights are (in, out); conv weights are (out, in, kh, kw).
  double fan_in = 1.0, fan_out = 1.0;
  if (shape.size() == 2) {
    fan_in = shape[0];
    fan_out = shape[1];
  } else if (shape.size() == 4) {
    const double rf = static_cast<double>(shape[2]) * shape[3];
    fan_in = shape[1] * rf;
    fan_out = shape[0] * rf;
  } else if (!shape.empty()) {
    fan_in = fan_out = shape.back();
  }
  switch (init.kind) {
    case Init::zeros:
      break;
    case Init::ones:
      value.fill(T{1});
      break;
    case Init::constant:
      value.fill(static_cast<T>(init.value));
      break;
    case Init::xavier_uniform: {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < n; ++i) value[i] = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case Init::he_normal: {
      const double sd = std::sqrt(2.0 / fan_in);
      for (std::size_t i = 0; i < n; ++i) value[i] = static_cast<T>(rng.normal(0.0, sd));
      break;
    }
    case Init::normal:
      for (std::size_t i = 0; i < n; ++i) value[i] = static_cast<T>(rng.normal(0.0, init.value));
      break;
  }
  ag::Var<T> var(std::move(value), true);
  index_[name] = entries_.size();
  entries_.push_back({name, var});
  return var;
}

template <class T>
const ag::Var<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return entries_[it->second].var;
}

template <class T>
std::size_t ParameterStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.numel();
  return n;
}

template <class T>
std::size_t ParameterStore<T>::size_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) n += e.var.numel();
  }
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <class T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng,
                      InitSpec weight_init, InitSpec bias_init) {
  Linear<T> l;
  l.weight = store.add(name + ".weight", {in, out}, weight_init, rng);
  l.bias = store.add(name + ".bias", {out}, bias_init, rng);
  return l;
}

template <class T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, int width, Rng& rng) {
  return {store.add(name + ".gamma", {width}, {Init::ones}, rng), store.add(name + ".beta", {width}, {}, rng)};
}

template <class T>
MultiHeadAttention<T> make_attention(ParameterStore<T>& store, const std::string& name, int width, int heads,
                                     Rng& rng) {
  if (heads <= 0 || width % heads != 0) {
    throw ValidationError("attention width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads) + " heads");
  }
  MultiHeadAttention<T> a;
  a.q = make_linear(store, name + ".q", width, width, rng);
  a.k = make_linear(store, name + ".k", width, width, rng);
  a.v = make_linear(store, name + ".v", width, width, rng);
  a.out = make_linear(store, name + ".out", width, width, rng);
  a.heads = heads;
  return a;
}

template <class T>
FeedForward<T> make_feed_forward(ParameterStore<T>& store, const std::string& name, int width, int hidden,
                                 Rng& rng) {
  return {make_linear(store, name + ".up", width, hidden, rng),
          make_linear(store, name + ".down", hidden, width, rng)};
}

#define FAQ_INSTANTIATE_NN(T)                                                                             \
  template class ParameterStore<T>;                                                                       \
  template Linear<T> make_linear(ParameterStore<T>&, const std::string&, int, int, Rng&, InitSpec,        \
                                 InitSpec);                                                               \
  template LayerNorm<T> make_layer_norm(ParameterStore<T>&, const std::string&, int, Rng&);               \
  template MultiHeadAttention<T> make_attention(ParameterStore<T>&, const std::string&, int, int, Rng&);  \
  template FeedForward<T> make_feed_forward(ParameterStore<T>&, const std::string&, int, int, Rng&);

FAQ_INSTANTIATE_NN(float)
FAQ_INSTANTIATE_NN(double)

}  // namespace faq
