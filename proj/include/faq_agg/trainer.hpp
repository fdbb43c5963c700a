#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "faq_agg/checkpoint.hpp"
#include "faq_agg/evaluation.hpp"
#include "faq_agg/model.hpp"

namespace faq {

struct LogRow {
  int step = 0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_l1 = 0.0;
  double loss_giou = 0.0;
  std::string branch;
  double lr = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const LogRow&) const = default;
};

std::string log_csv_header();
std::string to_csv(const LogRow& row);

/// Decoupled-weight-decay Adam with per-parameter learning-rate multipliers.
template <class T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& store, const OptimConfig& config);
  /// Clips the global gradient norm, updates every parameter, and returns the pre-clip norm.
  double step(double lr);

 private:
  ParameterStore<T>& store_;
  OptimConfig config_;
  std::vector<Tensor<T>> m_, v_;
  std::vector<double> mult_;
  long t_ = 0;
};

struct TrainOptions {
  std::filesystem::path log_path;         // empty: no CSV log
  std::filesystem::path checkpoint_path;  // empty: no checkpoint
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  std::vector<LogRow> log;
  int steps = 0;
};

/// Runs config.optim.steps optimizer steps on `data`. Each step draws
/// batch_frames (clip, center, neighborhood) samples and averages their losses.
template <class T>
TrainResult train(FaqModel<T>& model, const std::vector<VideoClip>& data, const TrainOptions& options = {});

/// Per-frame predictions for one clip (delegates to FaqModel::infer_clip).
template <class T>
std::vector<PredictionSet<T>> infer_video(const FaqModel<T>& model, const VideoClip& clip);

template <class T>
MetricsReport evaluate_model(const FaqModel<T>& model, const std::vector<VideoClip>& data);

/// Rebuilds a float model from a checkpoint's config and payload.
std::unique_ptr<FaqModel<float>> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace faq
