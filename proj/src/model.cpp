#include "faq_agg/model.hpp"

namespace faq {

namespace {

const RunConfig& validated(const RunConfig& c) {
  c.validate();
  return c;
}

}  // namespace

template <class T>
FaqModel<T>::FaqModel(const RunConfig& config)
    : config_(validated(config)),
      init_rng_(config.seed),
      backbone_(store_, config_.backbone(), init_rng_),
      detr_(store_, config_.detr, init_rng_),
      aggregator_(store_, config_.agg, config_.backbone().feature_width(), init_rng_) {
  const int f = config_.detr.width, m = config_.agg.m, r = config_.agg.r;
  const InitSpec init{Init::normal, 1.0};
  switch (config_.agg.mode) {
    case AggMode::none:
      query_params_.push_back(store_.add("queries.base", {m, f}, init, init_rng_));
      if (config_.dual) extra_basic_ = store_.add("queries.extra_basic", {m * r, f}, init, init_rng_);
      break;
    case AggMode::vanilla:
      for (int i = 0; i < config_.agg.l; ++i) {
        query_params_.push_back(store_.add("queries.slot" + std::to_string(i), {m, f}, init, init_rng_));
      }
      break;
    case AggMode::dynamic:
      query_params_.push_back(store_.add("queries.basic", {m * r, f}, init, init_rng_));
      break;
  }
}

template <class T>
int FaqModel<T>::neighborhood_size() const {
  return config_.agg.mode == AggMode::none ? 1 : config_.agg.l;
}

template <class T>
std::vector<QuerySet<T>> FaqModel<T>::basic_sets(int members) const {
  std::vector<QuerySet<T>> out;
  switch (config_.agg.mode) {
    case AggMode::none:
      out.push_back({query_params_[0], QueryKind::basic, std::nullopt});
      break;
    case AggMode::vanilla:
      if (members < 1 || members > static_cast<int>(query_params_.size())) {
        throw ValidationError("vanilla model has " + std::to_string(query_params_.size()) +
                              " query slots, neighborhood has " + std::to_string(members));
      }
      for (int i = 0; i < members; ++i) out.push_back({query_params_[i], QueryKind::basic, std::nullopt});
      break;
    case AggMode::dynamic:
      out.push_back({query_params_[0], QueryKind::basic, GroupShape{config_.agg.m, config_.agg.r}});
      break;
  }
  return out;
}

template <class T>
std::optional<QuerySet<T>> FaqModel<T>::extra_basic() const {
  if (!extra_basic_.defined()) return std::nullopt;
  return QuerySet<T>{extra_basic_, QueryKind::basic, GroupShape{config_.agg.m, config_.agg.r}};
}

template <class T>
FrameFeatures<T> FaqModel<T>::features(const Image& frame) const {
  ++counters_.backbone;
  return backbone_.extract_features(frame);
}

template <class T>
FrameQueries<T> FaqModel<T>::frame_queries(const std::vector<FrameFeatures<T>>& members, bool training) const {
  if (members.empty()) throw ValidationError("forward: empty neighborhood");
  if (static_cast<int>(members.size()) > neighborhood_size()) {
    throw ValidationError("forward: neighborhood of " + std::to_string(members.size()) + " exceeds model size " +
                          std::to_string(neighborhood_size()));
  }
  const bool with_basic = training && config_.dual && config_.agg.mode == AggMode::dynamic;
  return aggregator_.build_frame_queries(members, basic_sets(static_cast<int>(members.size())), with_basic);
}

template <class T>
typename FaqModel<T>::Output FaqModel<T>::forward(const std::vector<FrameFeatures<T>>& members, bool training) const {
  Output out;
  out.queries = frame_queries(members, training);
  const EncodedMemory<T> memory = detr_.encode(members.front());
  out.primary = detr_.predict_heads(detr_.decode(memory, out.queries.aggregated));
  switch (config_.agg.mode) {
    case AggMode::none: ++counters_.decoder_single; break;
    case AggMode::vanilla: ++counters_.decoder_vanilla; break;
    case AggMode::dynamic: ++counters_.decoder_dynamic; break;
  }
  if (training && config_.dual) {
    const QuerySet<T> basic = config_.agg.mode == AggMode::none ? *extra_basic() : *out.queries.basic_aggregated;
    out.basic = detr_.predict_heads(detr_.decode(memory, basic));
    ++counters_.decoder_basic;
  }
  return out;
}

template <class T>
std::vector<PredictionSet<T>> FaqModel<T>::infer_clip(const VideoClip& clip) const {
  ag::NoGradGuard guard;
  const int n = clip.num_frames();
  std::vector<FrameFeatures<T>> feats;
  feats.reserve(static_cast<std::size_t>(n));
  for (const auto& frame : clip.frames) feats.push_back(features(frame));
  std::vector<PredictionSet<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const Neighborhood nb = nearest_neighborhood(t, n, neighborhood_size());
    std::vector<FrameFeatures<T>> members;
    for (int idx : nb.members) members.push_back(feats[static_cast<std::size_t>(idx)]);
    out.push_back(forward(members, false).primary);
  }
  return out;
}

template class FaqModel<float>;
template class FaqModel<double>;

}  // namespace faq
