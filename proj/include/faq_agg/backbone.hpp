#pragma once

#include <vector>

#include "faq_agg/image.hpp"
#include "faq_agg/nn.hpp"

namespace faq {

/// Strided convolutional stack. Each stage is a 3x3 stride-2 convolution;
/// all but the last are followed by ReLU. Total stride is 2^stages.
struct BackboneConfig {
  int image_size = 96;
  std::vector<int> channels{16, 32, 64, 64};  // last entry is the feature width d

  int stride() const { return 1 << channels.size(); }
  int feature_width() const { return channels.back(); }
  int feature_side() const { return image_size / stride(); }
  void validate() const;
};

template <class T>
struct FrameFeatures {
  ag::Var<T> spatial;  // (d, h', w')
  ag::Var<T> pooled;   // (d)

  int width() const { return spatial.dim(0); }
};

/// Channel-wise mean over all spatial positions of a (d, h', w') map.
template <class T>
ag::Var<T> global_pool(const ag::Var<T>& spatial);

template <class T>
ag::Var<T> global_pool(const FrameFeatures<T>& features) {
  return global_pool(features.spatial);
}

/// Frame pixels scaled to [0, 1] as a (3, H, W) tensor.
template <class T>
Tensor<T> image_to_tensor(const Image& frame);

template <class T>
class Backbone {
 public:
  Backbone(ParameterStore<T>& store, const BackboneConfig& config, Rng& rng, const std::string& prefix = "backbone");

  FrameFeatures<T> extract_features(const Image& frame) const;
  FrameFeatures<T> extract_features(const ag::Var<T>& input) const;

  const BackboneConfig& config() const { return config_; }

 private:
  struct Stage {
    ag::Var<T> weight;
    ag::Var<T> bias;
  };
  BackboneConfig config_;
  std::vector<Stage> stages_;
};

}  // namespace faq
