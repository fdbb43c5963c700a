#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "faq_agg/backbone.hpp"
#include "faq_agg/detr_core.hpp"
#include "faq_agg/matching.hpp"
#include "faq_agg/query_aggregation.hpp"

namespace faq {

struct OptimConfig {
  double lr = 3e-4;
  double backbone_lr_mult = 1.0;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;  // max global gradient norm; 0 disables
  int steps = 6000;
  int batch_frames = 16;   // center frames accumulated per optimizer step
  double lr_drop = 0.0;    // fraction of steps after which lr is divided by 10; 0 disables
};

/// Everything a run depends on. Keys are dotted ("agg.r"); see keys().
struct RunConfig {
  int image_size = 96;
  std::vector<int> backbone_channels{16, 32, 64, 64};
  DetrConfig detr;
  AggregationConfig agg;
  LossWeights loss;
  double gamma = 1.0;
  bool dual = true;
  OptimConfig optim;
  double score_thr = 0.0;
  std::uint64_t seed = 0;
  std::string train_data;
  std::string eval_data;
  std::string out_dir = "runs/default";

  BackboneConfig backbone() const { return {image_size, backbone_channels}; }

  /// Throws ValidationError on any inconsistent setting.
  void validate() const;

  /// Sets one key from its textual value; unknown keys and bad values throw ValidationError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// "key = value" lines in keys() order.
  std::string serialize() const;
  /// 16 hex digits of FNV-1a over serialize().
  std::string hash() const;

  bool operator==(const RunConfig& other) const { return serialize() == other.serialize(); }
};

/// Parses "key = value" lines; '#' starts a comment. A "[section]" line
/// prefixes the following keys with "section.".
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Applies "k=v" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace faq
