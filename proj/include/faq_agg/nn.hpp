#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "faq_agg/ops.hpp"

namespace faq {

/// Seeded random source shared by initializers and samplers. Draws are made
/// in double precision so float and double models initialize identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

enum class Init { zeros, ones, xavier_uniform, he_normal, normal, constant };

struct InitSpec {
  Init kind = Init::zeros;
  double value = 0.0;  // stddev for normal, fill for constant
};

/// Named, ordered parameter registry. Every trainable tensor of a model lives
/// here; the order of registration defines checkpoint layout.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ag::Var<T> var;
  };

  ag::Var<T> add(const std::string& name, Shape shape, InitSpec init, Rng& rng);
  const ag::Var<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t total_size() const;
  /// Sum of element counts over parameters whose names start with `prefix`.
  std::size_t size_with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
struct Linear {
  ag::Var<T> weight;  // (in, out)
  ag::Var<T> bias;    // (out)

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, weight, bias); }
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
};

template <class T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng,
                      InitSpec weight_init = {Init::xavier_uniform, 0.0}, InitSpec bias_init = {});

template <class T>
struct LayerNorm {
  ag::Var<T> gamma;
  ag::Var<T> beta;

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

template <class T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, int width, Rng& rng);

template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, out;
  int heads = 1;

  ag::Var<T> operator()(const ag::Var<T>& query, const ag::Var<T>& key, const ag::Var<T>& value) const {
    return out(ag::attention(q(query), k(key), v(value), heads));
  }
};

template <class T>
MultiHeadAttention<T> make_attention(ParameterStore<T>& store, const std::string& name, int width, int heads,
                                     Rng& rng);

template <class T>
struct FeedForward {
  Linear<T> up, down;

  ag::Var<T> operator()(const ag::Var<T>& x) const { return down(ag::relu(up(x))); }
};

template <class T>
FeedForward<T> make_feed_forward(ParameterStore<T>& store, const std::string& name, int width, int hidden,
                                 Rng& rng);

}  // namespace faq
