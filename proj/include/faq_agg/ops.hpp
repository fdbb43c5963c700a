#pragma once

#include <span>
#include <vector>

#include "faq_agg/autograd.hpp"
#include "faq_agg/box.hpp"

namespace faq::ag {

/// A (prediction index, target index) pair produced by the matcher.
struct MatchPair {
  int query = 0;
  int target = 0;
  bool operator==(const MatchPair&) const = default;
};

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& x, T s);
template <class T>
Var<T> add_n(const std::vector<Var<T>>& xs);
/// Sum of all elements as a scalar.
template <class T>
Var<T> sum(const Var<T>& x);

/// (n, k) x (k, m) -> (n, m).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x W + b with W laid out (in, out). Accepts x of shape (n, in) or (in).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);
/// Normalizes each row (last axis) then applies the affine gamma/beta.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
/// Softmax along the last axis.
template <class T>
Var<T> softmax(const Var<T>& x);

/// Multi-head scaled dot-product attention on already projected inputs.
/// q: (nq, f), k and v: (nk, f); f must be divisible by `heads`.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads);

/// x: (c, h, w); weight: (o, c, kh, kw); bias: (o). Zero padding.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

template <class T>
Var<T> transpose(const Var<T>& x);
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);
/// (c, h, w) -> (c): mean over the spatial positions of each channel.
template <class T>
Var<T> spatial_mean(const Var<T>& x);
/// Flattened concatenation of all inputs into a 1-D tensor.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs);

template <class T>
struct CosineResult {
  Var<T> value;
  bool degenerate = false;
};
/// Cosine of two equal-length vectors. A zero-norm input yields 0 with the
/// degenerate flag set and contributes no gradient.
template <class T>
CosineResult<T> cosine_similarity(const Var<T>& a, const Var<T>& b);

/// sum_i w[i] * xs[i]; all xs share one shape and w has xs.size() entries.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& w);

/// out[g] = sum_j v(j, g) * basic[index[g * r + j]] for basic (n, f), v (r, m).
template <class T>
Var<T> group_combine(const Var<T>& basic, const Var<T>& v, std::span<const int> index);

/// Class-weighted mean cross-entropy over rows of `logits`.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> class_weight);
/// sum over pairs of |box - target|_1, divided by `norm`.
template <class T>
Var<T> matched_l1(const Var<T>& boxes, std::span<const MatchPair> pairs, std::span<const Box> targets,
                  T norm);
/// sum over pairs of (1 - giou(box, target)), divided by `norm`.
template <class T>
Var<T> matched_giou(const Var<T>& boxes, std::span<const MatchPair> pairs, std::span<const Box> targets,
                    T norm);

}  // namespace faq::ag
