#pragma once

#include <optional>
#include <vector>

#include "faq_agg/config.hpp"

namespace faq {

/// Pass counters, used to check which decoder branches actually ran.
struct ModelCounters {
  std::size_t backbone = 0;
  std::size_t decoder_single = 0;   // mode none, input-independent queries
  std::size_t decoder_vanilla = 0;  // delta Q^v
  std::size_t decoder_dynamic = 0;  // delta Q^d
  std::size_t decoder_basic = 0;    // delta Q^b or the independent basic set
};

/// Backbone, DETR core, aggregation module and query parameters of one run.
template <class T>
class FaqModel {
 public:
  /// Parameters are initialized from config.seed.
  explicit FaqModel(const RunConfig& config);
  FaqModel(const FaqModel&) = delete;
  FaqModel& operator=(const FaqModel&) = delete;

  const RunConfig& config() const { return config_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const DetrCore<T>& detr() const { return detr_; }
  const QueryAggregator<T>& aggregator() const { return aggregator_; }

  /// Maximum neighborhood size used by this model's mode.
  int neighborhood_size() const;
  /// Basic query sets for a neighborhood of `members` frames: one per slot in
  /// vanilla mode, otherwise the single shared set.
  std::vector<QuerySet<T>> basic_sets(int members) const;
  /// Input-independent second query set (only mode none with dual loss).
  std::optional<QuerySet<T>> extra_basic() const;

  FrameFeatures<T> features(const Image& frame) const;

  struct Output {
    PredictionSet<T> primary;
    std::optional<PredictionSet<T>> basic;
    FrameQueries<T> queries;
  };
  /// members[0] is the center frame. The basic branch runs only when
  /// `training` is set and the dual loss is enabled.
  Output forward(const std::vector<FrameFeatures<T>>& members, bool training) const;
  /// Queries for the center frame without decoding (used by exports).
  FrameQueries<T> frame_queries(const std::vector<FrameFeatures<T>>& members, bool training) const;

  /// Per-frame predictions on a clip with nearest-frame neighborhoods. Never
  /// runs the basic branch.
  std::vector<PredictionSet<T>> infer_clip(const VideoClip& clip) const;

  ModelCounters& counters() const { return counters_; }

 private:
  RunConfig config_;
  ParameterStore<T> store_;
  Rng init_rng_;
  Backbone<T> backbone_;
  DetrCore<T> detr_;
  QueryAggregator<T> aggregator_;
  std::vector<ag::Var<T>> query_params_;
  ag::Var<T> extra_basic_;
  mutable ModelCounters counters_;
};

}  // namespace faq
