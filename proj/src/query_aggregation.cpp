#include "faq_agg/query_aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace faq {

std::string to_string(AggMode m) {
  switch (m) {
    case AggMode::none: return "none";
    case AggMode::vanilla: return "vanilla";
    case AggMode::dynamic: return "dynamic";
  }
  return "?";
}

std::string to_string(AggMethod m) {
  switch (m) {
    case AggMethod::cosine: return "cosine";
    case AggMethod::simple_net: return "simple_net";
    case AggMethod::transformer: return "transformer";
  }
  return "?";
}

std::string to_string(Grouping g) {
  switch (g) {
    case Grouping::consecutive: return "consecutive";
    case Grouping::shuffled: return "shuffled";
    case Grouping::random_cluster: return "random_cluster";
  }
  return "?";
}

AggMode parse_agg_mode(const std::string& s) {
  if (s == "none") return AggMode::none;
  if (s == "vanilla") return AggMode::vanilla;
  if (s == "dynamic") return AggMode::dynamic;
  throw ValidationError("unknown aggregation mode '" + s + "' (none|vanilla|dynamic)");
}

AggMethod parse_agg_method(const std::string& s) {
  if (s == "cosine") return AggMethod::cosine;
  if (s == "simple_net") return AggMethod::simple_net;
  if (s == "transformer") return AggMethod::transformer;
  throw ValidationError("unknown aggregation method '" + s + "' (cosine|simple_net|transformer)");
}

Grouping parse_grouping(const std::string& s) {
  if (s == "consecutive") return Grouping::consecutive;
  if (s == "shuffled") return Grouping::shuffled;
  if (s == "random_cluster") return Grouping::random_cluster;
  throw ValidationError("unknown grouping '" + s + "' (consecutive|shuffled|random_cluster)");
}

void Neighborhood::validate(int num_frames, int max_size) const {
  if (members.empty() || size() > max_size) {
    throw ValidationError("neighborhood size " + std::to_string(size()) + " outside [1, " + std::to_string(max_size) +
                          "]");
  }
  if (members.front() != center) throw ValidationError("neighborhood must list the center first");
  std::vector<int> sorted = members;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("neighborhood members must be distinct");
  }
  if (sorted.front() < 0 || sorted.back() >= num_frames) {
    throw ValidationError("neighborhood member outside clip of " + std::to_string(num_frames) + " frames");
  }
}

Neighborhood sample_neighborhood(int center, int num_frames, int l, int window, Rng& rng) {
  if (center < 0 || center >= num_frames) throw ValidationError("center frame outside clip");
  if (l < 1) throw ValidationError("neighborhood size must be >= 1");
  std::vector<int> pool;
  for (int j = 0; j < num_frames; ++j) {
    if (j != center && (window <= 0 || std::abs(j - center) <= window)) pool.push_back(j);
  }
  const int take = std::min<int>(l - 1, static_cast<int>(pool.size()));
  for (int i = 0; i < take; ++i) {
    const int k = rng.integer(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[k]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  Neighborhood nb{center, {center}};
  nb.members.insert(nb.members.end(), pool.begin(), pool.end());
  return nb;
}

Neighborhood nearest_neighborhood(int center, int num_frames, int l) {
  if (center < 0 || center >= num_frames) throw ValidationError("center frame outside clip");
  if (l < 1) throw ValidationError("neighborhood size must be >= 1");
  std::vector<int> others;
  for (int j = 0; j < num_frames; ++j) {
    if (j != center) others.push_back(j);
  }
  std::stable_sort(others.begin(), others.end(),
                   [center](int a, int b) { return std::abs(a - center) < std::abs(b - center); });
  others.resize(std::min<std::size_t>(others.size(), static_cast<std::size_t>(l - 1)));
  std::sort(others.begin(), others.end());
  Neighborhood nb{center, {center}};
  nb.members.insert(nb.members.end(), others.begin(), others.end());
  return nb;
}

void AggregationConfig::validate() const {
  if (l < 1) throw ValidationError("agg.l must be >= 1");
  if (r < 1) throw ValidationError("agg.r must be >= 1");
  if (m < 1) throw ValidationError("agg.m must be >= 1");
}

std::vector<int> make_grouping_index(Grouping grouping, int m, int r, std::uint64_t seed) {
  if (m < 1 || r < 1) throw ValidationError("grouping needs m >= 1 and r >= 1");
  const int n = m * r;
  std::vector<int> index(n);
  std::iota(index.begin(), index.end(), 0);
  Rng rng(seed);
  switch (grouping) {
    case Grouping::consecutive:
      break;
    case Grouping::shuffled:
      std::shuffle(index.begin(), index.end(), rng.engine());
      break;
    case Grouping::random_cluster: {
      // Member j of every group is drawn from stripe j (rows j*m .. j*m+m-1),
      // so no group holds two neighbouring rows of the consecutive layout.
      for (int j = 0; j < r; ++j) {
        std::vector<int> stripe(m);
        std::iota(stripe.begin(), stripe.end(), j * m);
        std::shuffle(stripe.begin(), stripe.end(), rng.engine());
        for (int g = 0; g < m; ++g) index[g * r + j] = stripe[g];
      }
      break;
    }
  }
  return index;
}

template <class T>
QuerySet<T> aggregate_queries(const std::vector<QuerySet<T>>& sets, const ag::Var<T>& weights) {
  if (sets.empty()) throw ValidationError("aggregate_queries: no query sets");
  if (weights.rank() != 1 || weights.numel() != sets.size()) {
    throw ValidationError("aggregate_queries: " + std::to_string(sets.size()) + " sets but weights of shape " +
                          shape_str(weights.shape()));
  }
  std::vector<ag::Var<T>> xs;
  xs.reserve(sets.size());
  for (const auto& s : sets) {
    if (s.vectors.shape() != sets.front().vectors.shape()) {
      throw ValidationError("aggregate_queries: query set shapes differ: " + shape_str(s.vectors.shape()) + " vs " +
                            shape_str(sets.front().vectors.shape()));
    }
    xs.push_back(s.vectors);
  }
  return {ag::weighted_sum(xs, weights), QueryKind::aggregated, std::nullopt};
}

template <class T>
QuerySet<T> make_dynamic_queries(const QuerySet<T>& basic, const ag::Var<T>& v, const std::vector<int>& index) {
  if (v.rank() != 2) throw ValidationError("make_dynamic_queries: V must be (r, m)");
  const int r = v.dim(0), m = v.dim(1);
  if (basic.size() % r != 0) {
    throw ValidationError("make_dynamic_queries: r = " + std::to_string(r) + " does not divide " +
                          std::to_string(basic.size()) + " basic queries");
  }
  if (basic.size() != m * r) {
    throw ValidationError("make_dynamic_queries: " + std::to_string(basic.size()) + " basic queries for m = " +
                          std::to_string(m) + ", r = " + std::to_string(r));
  }
  if (basic.group_shape && (basic.group_shape->m != m || basic.group_shape->r != r)) {
    throw ValidationError("make_dynamic_queries: basic group shape does not match V");
  }
  if (static_cast<int>(index.size()) != m * r) throw ValidationError("make_dynamic_queries: grouping index size");
  return {ag::group_combine(basic.vectors, v, std::span<const int>(index)), QueryKind::dynamic, std::nullopt};
}

template <class T>
QueryAggregator<T>::QueryAggregator(ParameterStore<T>& store, const AggregationConfig& config, int feature_width,
                                    Rng& rng, const std::string& prefix)
    : config_(config), d_(feature_width) {
  config_.validate();
  if (d_ < 1) throw ValidationError("aggregator: feature width must be positive");
  const bool dynamic = config_.mode == AggMode::dynamic;
  if (config_.mode == AggMode::vanilla || (dynamic && config_.method == AggMethod::cosine)) {
    alpha_ = make_linear(store, prefix + ".alpha", d_, d_, rng);
    beta_ = make_linear(store, prefix + ".beta", d_, d_, rng);
  }
  if (dynamic && config_.method == AggMethod::simple_net) {
    pair_net_ = FeedForward<T>{make_linear(store, prefix + ".pair_net.hidden", 2 * d_, d_, rng),
                               make_linear(store, prefix + ".pair_net.score", d_, 1, rng)};
  }
  if (dynamic && config_.method == AggMethod::transformer) {
    att_q_ = make_linear(store, prefix + ".att.q", d_, d_, rng);
    att_k_ = make_linear(store, prefix + ".att.k", d_, d_, rng);
  }
  if (dynamic) {
    const int rm = config_.r * config_.m;
    g_ = make_linear(store, prefix + ".G", d_, rm, rng, {Init::zeros, 0.0}, {Init::constant, 1.0 / config_.r});
    index_ = make_grouping_index(config_.grouping, config_.m, config_.r, config_.grouping_seed);
  }
}

template <class T>
ag::CosineResult<T> QueryAggregator<T>::similarity_weight(const FrameFeatures<T>& cur,
                                                          const FrameFeatures<T>& nbr) const {
  if (!alpha_) throw ValidationError("similarity_weight: aggregator has no cosine parameters");
  if (cur.pooled.numel() != static_cast<std::size_t>(d_) || nbr.pooled.numel() != static_cast<std::size_t>(d_)) {
    throw ValidationError("similarity_weight: pooled width differs from " + std::to_string(d_));
  }
  return ag::cosine_similarity((*alpha_)(cur.pooled), (*beta_)(nbr.pooled));
}

template <class T>
ag::Var<T> QueryAggregator<T>::weights_impl(const FrameFeatures<T>& center,
                                            const std::vector<FrameFeatures<T>>& members, AggMethod method,
                                            int* degenerate) const {
  if (members.empty()) throw ValidationError("aggregation_weights: empty neighbor list");
  std::vector<ag::Var<T>> scores;
  scores.reserve(members.size());
  switch (method) {
    case AggMethod::cosine:
      for (const auto& nb : members) {
        auto c = similarity_weight(center, nb);
        if (c.degenerate && degenerate) ++*degenerate;
        scores.push_back(ag::reshape(c.value, {1}));
      }
      break;
    case AggMethod::simple_net:
      if (!pair_net_) throw ValidationError("aggregation_weights: aggregator has no simple_net parameters");
      for (const auto& nb : members) scores.push_back((*pair_net_)(ag::concat<T>({center.pooled, nb.pooled})));
      break;
    case AggMethod::transformer: {
      if (!att_q_) throw ValidationError("aggregation_weights: aggregator has no transformer parameters");
      const int l = static_cast<int>(members.size());
      const ag::Var<T> q = ag::reshape((*att_q_)(center.pooled), {d_, 1});
      std::vector<ag::Var<T>> keys;
      keys.reserve(members.size());
      for (const auto& nb : members) keys.push_back((*att_k_)(nb.pooled));
      const ag::Var<T> k = ag::reshape(ag::concat(keys), {l, d_});
      const ag::Var<T> logits = ag::scale(ag::reshape(ag::matmul(k, q), {l}), T(1) / std::sqrt(T(d_)));
      return ag::softmax(logits);
    }
  }
  return ag::softmax(ag::concat(scores));
}

template <class T>
ag::Var<T> QueryAggregator<T>::aggregation_weights(const FrameFeatures<T>& center,
                                                   const std::vector<FrameFeatures<T>>& members,
                                                   AggMethod method) const {
  return weights_impl(center, members, method, nullptr);
}

template <class T>
ag::Var<T> QueryAggregator<T>::group_weights(const FrameFeatures<T>& nbr) const {
  if (!g_) throw ValidationError("group_weights: aggregator is not in dynamic mode");
  if (nbr.pooled.numel() != static_cast<std::size_t>(d_)) {
    throw ValidationError("group_weights: pooled width differs from " + std::to_string(d_));
  }
  return ag::reshape((*g_)(nbr.pooled), {config_.r, config_.m});
}

template <class T>
QuerySet<T> QueryAggregator<T>::make_dynamic_queries(const QuerySet<T>& basic, const ag::Var<T>& v) const {
  return faq::make_dynamic_queries(basic, v, index_);
}

template <class T>
FrameQueries<T> QueryAggregator<T>::build_frame_queries(const std::vector<FrameFeatures<T>>& members,
                                                        const std::vector<QuerySet<T>>& basic,
                                                        bool training) const {
  if (members.empty()) throw ValidationError("build_frame_queries: empty neighborhood");
  if (basic.empty()) throw ValidationError("build_frame_queries: no basic query sets");
  const std::size_t l = members.size();
  FrameQueries<T> out;
  switch (config_.mode) {
    case AggMode::none:
      out.aggregated = basic.front();
      out.weights = ag::constant(Tensor<T>(Shape{1}, T(1)));
      break;
    case AggMode::vanilla: {
      if (basic.size() != l) {
        throw ValidationError("build_frame_queries: vanilla mode needs one query set per member, got " +
                              std::to_string(basic.size()) + " for " + std::to_string(l));
      }
      out.weights = weights_impl(members.front(), members, AggMethod::cosine, &out.degenerate);
      out.aggregated = aggregate_queries(basic, out.weights);
      break;
    }
    case AggMode::dynamic: {
      if (basic.size() != 1 && basic.size() != l) {
        throw ValidationError("build_frame_queries: dynamic mode needs 1 or l basic query sets");
      }
      std::vector<QuerySet<T>> per_member_basic;
      for (std::size_t i = 0; i < l; ++i) {
        const QuerySet<T>& b = basic.size() == 1 ? basic.front() : basic[i];
        ag::Var<T> v = group_weights(members[i]);
        out.dynamic.push_back(make_dynamic_queries(b, v));
        out.group_weights.push_back(v);
        per_member_basic.push_back(b);
      }
      out.weights = weights_impl(members.front(), members, config_.method, &out.degenerate);
      out.aggregated = aggregate_queries(out.dynamic, out.weights);
      if (training) out.basic_aggregated = aggregate_queries(per_member_basic, out.weights);
      break;
    }
  }
  return out;
}

template QuerySet<float> aggregate_queries(const std::vector<QuerySet<float>>&, const ag::Var<float>&);
template QuerySet<double> aggregate_queries(const std::vector<QuerySet<double>>&, const ag::Var<double>&);
template QuerySet<float> make_dynamic_queries(const QuerySet<float>&, const ag::Var<float>&, const std::vector<int>&);
template QuerySet<double> make_dynamic_queries(const QuerySet<double>&, const ag::Var<double>&,
                                               const std::vector<int>&);
template class QueryAggregator<float>;
template class QueryAggregator<double>;

}  // namespace faq
