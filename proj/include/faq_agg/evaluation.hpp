#pragma once

#include <optional>
#include <string>
#include <vector>

#include "faq_agg/detr_core.hpp"
#include "faq_agg/synthetic_video.hpp"

namespace faq {

struct ScoredBox {
  Box box;
  double score = 0.0;
};

/// COCO-style single-class AP at one IoU threshold: greedy matching per image
/// in descending score order, 101-point interpolation. Absent when there are
/// no ground-truth boxes.
std::optional<double> average_precision(const std::vector<std::vector<ScoredBox>>& dets,
                                        const std::vector<std::vector<Box>>& gts, double iou_thr);

struct Detection {
  Box box;
  int cls = 0;
  double score = 0.0;
};
using FrameDetections = std::vector<Detection>;

/// One detection per query: the most probable real class under a softmax
/// that includes the no-object logit. Queries scoring below `score_thr` are dropped.
template <class T>
FrameDetections to_detections(const PredictionSet<T>& preds, double score_thr = 0.0);

/// Area boundaries in square pixels between small/medium and medium/large.
struct SizeSplits {
  double small = 32.0 * 32.0;
  double medium = 96.0 * 96.0;

  /// The usual 32^2 / 96^2 splits rescaled from a 640-pixel reference side.
  static SizeSplits for_image(int image_size);
};

struct EvalOptions {
  double score_thr = 0.0;
  std::optional<SizeSplits> splits;  // defaults to SizeSplits::for_image
};

struct ClassMetrics {
  int class_id = 0;
  int num_gt = 0;
  std::optional<double> map, ap50, ap75;
};

struct MetricsReport {
  std::optional<double> map, ap50, ap75, ap_s, ap_m, ap_l;
  std::vector<ClassMetrics> per_class;
  int num_frames = 0;
  int num_gt = 0;
  int num_detections = 0;
};

/// `preds[c][t]` holds the detections of frame t of clip c.
MetricsReport evaluate(const std::vector<std::vector<FrameDetections>>& preds, const std::vector<VideoClip>& dataset,
                       int num_classes, const EvalOptions& options = {});

std::string metrics_to_json(const MetricsReport& report);
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& run_id, const std::string& config_hash, const MetricsReport& report,
                            std::uint64_t seed);

}  // namespace faq
