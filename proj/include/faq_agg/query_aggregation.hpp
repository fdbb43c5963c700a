#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "faq_agg/detr_core.hpp"

namespace faq {

enum class AggMode { none, vanilla, dynamic };
enum class AggMethod { cosine, simple_net, transformer };
enum class Grouping { consecutive, shuffled, random_cluster };

std::string to_string(AggMode m);
std::string to_string(AggMethod m);
std::string to_string(Grouping g);
AggMode parse_agg_mode(const std::string& s);
AggMethod parse_agg_method(const std::string& s);
Grouping parse_grouping(const std::string& s);

/// Frames whose queries are aggregated for one center frame. members[0] is
/// the center; the rest are in temporal order.
struct Neighborhood {
  int center = 0;
  std::vector<int> members;

  int size() const { return static_cast<int>(members.size()); }
  void validate(int num_frames, int max_size) const;
};

/// Center plus l - 1 distinct frames drawn uniformly from the frames within
/// `window` of the center (window <= 0 means the whole clip).
Neighborhood sample_neighborhood(int center, int num_frames, int l, int window, Rng& rng);
/// Center plus its l - 1 temporally nearest frames (earlier frame wins ties).
Neighborhood nearest_neighborhood(int center, int num_frames, int l);

struct AggregationConfig {
  AggMode mode = AggMode::dynamic;
  AggMethod method = AggMethod::transformer;
  int l = 5;
  int r = 4;
  int m = 32;
  Grouping grouping = Grouping::consecutive;
  int window = 0;
  std::uint64_t grouping_seed = 0;

  void validate() const;
};

/// index[g * r + j] is the basic-query row used as member j of group g.
std::vector<int> make_grouping_index(Grouping grouping, int m, int r, std::uint64_t seed);

/// sum_i w[i] * sets[i]; output kind is aggregated.
template <class T>
QuerySet<T> aggregate_queries(const std::vector<QuerySet<T>>& sets, const ag::Var<T>& weights);

/// Group g's dynamic query is sum_j V(j, g) * basic[index[g * r + j]].
template <class T>
QuerySet<T> make_dynamic_queries(const QuerySet<T>& basic, const ag::Var<T>& v, const std::vector<int>& index);

template <class T>
struct FrameQueries {
  QuerySet<T> aggregated;                    // delta Q^v or delta Q^d
  std::optional<QuerySet<T>> basic_aggregated;  // delta Q^b, training only
  ag::Var<T> weights;                        // (l)
  std::vector<QuerySet<T>> dynamic;          // Q_i^d per member (dynamic mode)
  std::vector<ag::Var<T>> group_weights;     // V per member (dynamic mode)
  int degenerate = 0;                        // zero-norm similarity evaluations
};

template <class T>
class QueryAggregator {
 public:
  /// `feature_width` is d, the width of pooled backbone features.
  QueryAggregator(ParameterStore<T>& store, const AggregationConfig& config, int feature_width, Rng& rng,
                  const std::string& prefix = "agg");

  /// cos(alpha(pooled cur), beta(pooled nbr)); degenerate when a mapped vector has zero norm.
  ag::CosineResult<T> similarity_weight(const FrameFeatures<T>& cur, const FrameFeatures<T>& nbr) const;
  /// Softmax-normalized weights over `members` (which include the center).
  ag::Var<T> aggregation_weights(const FrameFeatures<T>& center, const std::vector<FrameFeatures<T>>& members,
                                 AggMethod method) const;
  /// V = G(pooled), reshaped to (r, m).
  ag::Var<T> group_weights(const FrameFeatures<T>& nbr) const;
  QuerySet<T> make_dynamic_queries(const QuerySet<T>& basic, const ag::Var<T>& v) const;

  /// members[0] is the center frame. `basic` holds one set per member in
  /// vanilla mode; in dynamic mode a single shared set may be passed.
  FrameQueries<T> build_frame_queries(const std::vector<FrameFeatures<T>>& members,
                                      const std::vector<QuerySet<T>>& basic, bool training) const;

  const AggregationConfig& config() const { return config_; }
  const std::vector<int>& grouping_index() const { return index_; }

 private:
  AggregationConfig config_;
  int d_;
  std::vector<int> index_;
  std::optional<Linear<T>> alpha_, beta_;           // cosine
  std::optional<FeedForward<T>> pair_net_;          // simple_net hidden layer + score
  std::optional<Linear<T>> att_q_, att_k_;          // transformer
  std::optional<Linear<T>> g_;                      // dynamic query generator G

  ag::Var<T> weights_impl(const FrameFeatures<T>& center, const std::vector<FrameFeatures<T>>& members,
                          AggMethod method, int* degenerate) const;
};

}  // namespace faq
