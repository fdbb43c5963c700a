#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "faq_agg/trainer.hpp"

namespace faq {

struct AblationCell {
  std::string name;
  std::vector<std::string> overrides;  // "key=value"
};

/// Named grids: table2 (cells A-E), table4 (aggregation method), r, m, l.
std::vector<AblationCell> ablation_preset(const std::string& name);
/// Cartesian product of axes given as "key=v1,v2,...".
std::vector<AblationCell> ablation_grid(const std::vector<std::string>& axes);

struct AblationRow {
  std::string preset;
  std::string cell;
  std::string overrides;  // ';'-joined
  std::string config_hash;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double final_loss = 0.0;
  double seconds = 0.0;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
};

std::string ablation_csv_header();
std::string to_csv(const AblationRow& row);

struct AblationOptions {
  std::string preset = "custom";
  std::filesystem::path out_dir;  // per-cell logs and checkpoints when non-empty
  std::filesystem::path csv_path;  // rows appended as they finish when non-empty
  std::function<void(const AblationRow&)> on_row;
};

/// Trains and evaluates every (cell, seed). A failing cell is recorded with
/// status "failed" and the sweep continues.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells,
                                      const std::vector<std::uint64_t>& seeds, const std::vector<VideoClip>& train_data,
                                      const std::vector<VideoClip>& eval_data, const AblationOptions& options = {});

}  // namespace faq
