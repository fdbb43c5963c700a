#include "faq_agg/backbone.hpp"

#include <cmath>

namespace faq {

void BackboneConfig::validate() const {
  if (channels.empty()) throw ValidationError("backbone: at least one stage required");
  for (int c : channels) {
    if (c <= 0) throw ValidationError("backbone: channel counts must be positive");
  }
  if (image_size <= 0 || image_size % stride() != 0) {
    throw ValidationError("backbone: image size " + std::to_string(image_size) + " not divisible by stride " +
                          std::to_string(stride()));
  }
}

template <class T>
ag::Var<T> global_pool(const ag::Var<T>& spatial) {
  if (spatial.rank() != 3) throw ValidationError("global_pool: expected (d, h, w), got " + shape_str(spatial.shape()));
  if (spatial.dim(1) * spatial.dim(2) == 0) throw ValidationError("global_pool: empty spatial extent");
  return ag::spatial_mean(spatial);
}

template <class T>
Tensor<T> image_to_tensor(const Image& frame) {
  Tensor<T> t(Shape{3, frame.height, frame.width});
  const T inv = T{1} / T{255};
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      for (int c = 0; c < 3; ++c) t(c, y, x) = static_cast<T>(frame.at(y, x, c)) * inv;
    }
  }
  return t;
}

template <class T>
Backbone<T>::Backbone(ParameterStore<T>& store, const BackboneConfig& config, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  int in = 3;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const int out = config_.channels[i];
    const std::string name = prefix + ".conv" + std::to_string(i);
    Stage s;
    s.weight = store.add(name + ".weight", {out, in, 3, 3}, {Init::he_normal}, rng);
    s.bias = store.add(name + ".bias", {out}, {Init::zeros}, rng);
    stages_.push_back(s);
    in = out;
  }
}

template <class T>
FrameFeatures<T> Backbone<T>::extract_features(const Image& frame) const {
  if (frame.width != config_.image_size || frame.height != config_.image_size) {
    throw ValidationError("backbone: frame is " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                          ", configured for " + std::to_string(config_.image_size));
  }
  return extract_features(ag::constant(image_to_tensor<T>(frame)));
}

template <class T>
FrameFeatures<T> Backbone<T>::extract_features(const ag::Var<T>& input) const {
  if (input.rank() != 3 || input.dim(0) != 3 || input.dim(1) != config_.image_size ||
      input.dim(2) != config_.image_size) {
    throw ValidationError("backbone: input shape " + shape_str(input.shape()) + " does not match configuration");
  }
  ag::Var<T> x = input;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = ag::conv2d(x, stages_[i].weight, stages_[i].bias, 2, 1);
    if (i + 1 < stages_.size()) x = ag::relu(x);
  }
  return {x, global_pool(x)};
}

template ag::Var<float> global_pool(const ag::Var<float>&);
template ag::Var<double> global_pool(const ag::Var<double>&);
template Tensor<float> image_to_tensor(const Image&);
template Tensor<double> image_to_tensor(const Image&);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace faq
