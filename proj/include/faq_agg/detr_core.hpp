#pragma once

#include <optional>
#include <vector>

#include "faq_agg/backbone.hpp"

namespace faq {

enum class QueryKind { basic, dynamic, aggregated };

/// m groups of r basic queries each; a grouped basic set holds m * r rows.
struct GroupShape {
  int m = 0;
  int r = 0;
  bool operator==(const GroupShape&) const = default;
};

template <class T>
struct QuerySet {
  ag::Var<T> vectors;  // (k, f)
  QueryKind kind = QueryKind::basic;
  std::optional<GroupShape> group_shape;

  int size() const { return vectors.dim(0); }
  int width() const { return vectors.dim(1); }
  /// Throws ValidationError unless the set is well formed for width `f`.
  void validate(int f) const;
};

template <class T>
struct PredictionSet {
  ag::Var<T> boxes;         // (k, 4), center format, each entry in (0, 1)
  ag::Var<T> class_logits;  // (k, C + 1); index C is no-object

  int size() const { return boxes.dim(0); }
  int num_classes() const { return class_logits.dim(1) - 1; }
};

template <class T>
struct EncodedMemory {
  ag::Var<T> tokens;  // (h' * w', f) with positional encoding added
};

struct DetrConfig {
  int width = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ffn_width = 128;
  int num_classes = 3;

  void validate() const;
};

/// Fixed 2-D sinusoidal encoding, (h * w, f): first half of the channels
/// encodes the row, second half the column.
template <class T>
Tensor<T> sine_position_encoding(int h, int w, int f);

/// Transformer encoder, decoder and prediction heads of a DETR-style detector.
template <class T>
class DetrCore {
 public:
  DetrCore(ParameterStore<T>& store, const DetrConfig& config, Rng& rng, const std::string& prefix = "detr");

  EncodedMemory<T> encode(const FrameFeatures<T>& features) const;
  /// Refined query embeddings, one row per input query.
  ag::Var<T> decode(const EncodedMemory<T>& memory, const QuerySet<T>& queries) const;
  PredictionSet<T> predict_heads(const ag::Var<T>& decoded) const;

  const DetrConfig& config() const { return config_; }

 private:
  struct EncoderLayer {
    MultiHeadAttention<T> self_attn;
    LayerNorm<T> norm1, norm2;
    FeedForward<T> ffn;
  };
  struct DecoderLayer {
    MultiHeadAttention<T> self_attn, cross_attn;
    LayerNorm<T> norm1, norm2, norm3;
    FeedForward<T> ffn;
  };

  DetrConfig config_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm<T> decoder_norm_;
  Linear<T> box1_, box2_, box3_, cls_;
};

/// Single-frame detection: heads(decode(encode(backbone(frame)), queries)).
template <class T>
PredictionSet<T> forward_detect(const Image& frame, const QuerySet<T>& queries, const Backbone<T>& backbone,
                                const DetrCore<T>& detr);

}  // namespace faq
