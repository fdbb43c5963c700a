#include "faq_agg/detr_core.hpp"

#include <cmath>
#include <numbers>

namespace faq {

template <class T>
void QuerySet<T>::validate(int f) const {
  if (!vectors.defined() || vectors.rank() != 2) throw ValidationError("query set must be a (k, f) array");
  if (size() < 1) throw ValidationError("query set is empty");
  if (width() != f) {
    throw ValidationError("query width " + std::to_string(width()) + " differs from model width " + std::to_string(f));
  }
  if (kind == QueryKind::basic && group_shape && group_shape->m * group_shape->r != size()) {
    throw ValidationError("basic query set of size " + std::to_string(size()) + " does not match group shape " +
                          std::to_string(group_shape->m) + "x" + std::to_string(group_shape->r));
  }
}

void DetrConfig::validate() const {
  if (width <= 0 || heads <= 0 || width % heads != 0) throw ValidationError("detr: width must be divisible by heads");
  if (width % 2 != 0) throw ValidationError("detr: width must be even for the positional encoding");
  if (encoder_layers < 0 || decoder_layers < 1) throw ValidationError("detr: invalid layer counts");
  if (ffn_width <= 0 || num_classes <= 0) throw ValidationError("detr: invalid head sizes");
}

template <class T>
Tensor<T> sine_position_encoding(int h, int w, int f) {
  const int npf = f / 2;
  Tensor<T> pos(Shape{h * w, f});
  const double two_pi = 2.0 * std::numbers::pi;
  const double eps = 1e-6;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ye = (y + 1) / (h + eps) * two_pi;
      const double xe = (x + 1) / (w + eps) * two_pi;
      for (int k = 0; k < npf; ++k) {
        const double dim_t = std::pow(10000.0, 2.0 * (k / 2) / npf);
        const double py = ye / dim_t, px = xe / dim_t;
        pos(y * w + x, k) = static_cast<T>(k % 2 == 0 ? std::sin(py) : std::cos(py));
        pos(y * w + x, npf + k) = static_cast<T>(k % 2 == 0 ? std::sin(px) : std::cos(px));
      }
    }
  }
  return pos;
}

template <class T>
DetrCore<T>::DetrCore(ParameterStore<T>& store, const DetrConfig& config, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const int f = config_.width;
  for (int i = 0; i < config_.encoder_layers; ++i) {
    const std::string n = prefix + ".enc" + std::to_string(i);
    EncoderLayer l;
    l.self_attn = make_attention(store, n + ".self_attn", f, config_.heads, rng);
    l.norm1 = make_layer_norm(store, n + ".norm1", f, rng);
    l.ffn = make_feed_forward(store, n + ".ffn", f, config_.ffn_width, rng);
    l.norm2 = make_layer_norm(store, n + ".norm2", f, rng);
    encoder_.push_back(l);
  }
  for (int i = 0; i < config_.decoder_layers; ++i) {
    const std::string n = prefix + ".dec" + std::to_string(i);
    DecoderLayer l;
    l.self_attn = make_attention(store, n + ".self_attn", f, config_.heads, rng);
    l.norm1 = make_layer_norm(store, n + ".norm1", f, rng);
    l.cross_attn = make_attention(store, n + ".cross_attn", f, config_.heads, rng);
    l.norm2 = make_layer_norm(store, n + ".norm2", f, rng);
    l.ffn = make_feed_forward(store, n + ".ffn", f, config_.ffn_width, rng);
    l.norm3 = make_layer_norm(store, n + ".norm3", f, rng);
    decoder_.push_back(l);
  }
  decoder_norm_ = make_layer_norm(store, prefix + ".dec_norm", f, rng);
  box1_ = make_linear(store, prefix + ".box.0", f, f, rng);
  box2_ = make_linear(store, prefix + ".box.1", f, f, rng);
  box3_ = make_linear(store, prefix + ".box.2", f, 4, rng);
  cls_ = make_linear(store, prefix + ".cls", f, config_.num_classes + 1, rng);
}

template <class T>
EncodedMemory<T> DetrCore<T>::encode(const FrameFeatures<T>& features) const {
  const auto& sp = features.spatial;
  if (sp.rank() != 3) throw ValidationError("encode: features must be (d, h, w)");
  const int d = sp.dim(0), h = sp.dim(1), w = sp.dim(2);
  if (d != config_.width) {
    throw ValidationError("encode: feature width " + std::to_string(d) + " differs from model width " +
                          std::to_string(config_.width));
  }
  ag::Var<T> tokens = ag::transpose(ag::reshape(sp, {d, h * w}));
  ag::Var<T> x = ag::add(tokens, ag::constant(sine_position_encoding<T>(h, w, d)));
  for (const auto& l : encoder_) {
    x = l.norm1(ag::add(x, l.self_attn(x, x, x)));
    x = l.norm2(ag::add(x, l.ffn(x)));
  }
  return {x};
}

template <class T>
ag::Var<T> DetrCore<T>::decode(const EncodedMemory<T>& memory, const QuerySet<T>& queries) const {
  queries.validate(config_.width);
  if (memory.tokens.rank() != 2 || memory.tokens.dim(1) != config_.width) {
    throw ValidationError("decode: memory width differs from model width");
  }
  const ag::Var<T>& qpos = queries.vectors;
  // Content starts at zero; the query vectors act as per-query positions.
  ag::Var<T> tgt = ag::constant(Tensor<T>(qpos.shape()));
  for (const auto& l : decoder_) {
    const ag::Var<T> q = ag::add(tgt, qpos);
    tgt = l.norm1(ag::add(tgt, l.self_attn(q, q, tgt)));
    tgt = l.norm2(ag::add(tgt, l.cross_attn(ag::add(tgt, qpos), memory.tokens, memory.tokens)));
    tgt = l.norm3(ag::add(tgt, l.ffn(tgt)));
  }
  return decoder_norm_(tgt);
}

template <class T>
PredictionSet<T> DetrCore<T>::predict_heads(const ag::Var<T>& decoded) const {
  if (decoded.rank() != 2 || decoded.dim(1) != config_.width) {
    throw ValidationError("predict_heads: expected (k, " + std::to_string(config_.width) + "), got " +
                          shape_str(decoded.shape()));
  }
  ag::Var<T> b = ag::relu(box1_(decoded));
  b = ag::relu(box2_(b));
  return {ag::sigmoid(box3_(b)), cls_(decoded)};
}

template <class T>
PredictionSet<T> forward_detect(const Image& frame, const QuerySet<T>& queries, const Backbone<T>& backbone,
                                const DetrCore<T>& detr) {
  const auto features = backbone.extract_features(frame);
  return detr.predict_heads(detr.decode(detr.encode(features), queries));
}

template struct QuerySet<float>;
template struct QuerySet<double>;
template Tensor<float> sine_position_encoding(int, int, int);
template Tensor<double> sine_position_encoding(int, int, int);
template class DetrCore<float>;
template class DetrCore<double>;
template PredictionSet<float> forward_detect(const Image&, const QuerySet<float>&, const Backbone<float>&,
                                             const DetrCore<float>&);
template PredictionSet<double> forward_detect(const Image&, const QuerySet<double>&, const Backbone<double>&,
                                              const DetrCore<double>&);

}  // namespace faq
