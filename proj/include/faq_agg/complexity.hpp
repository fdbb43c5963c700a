#pragma once

#include <string>
#include <vector>

#include "faq_agg/config.hpp"

namespace faq {

/// Analytic multiply-accumulate counts for one center frame.
struct ComplexityReport {
  int l = 1;                       // frames through the backbone per center frame
  double backbone_per_frame = 0.0;
  double backbone_total = 0.0;     // l frames
  double encoder = 0.0;            // center frame only
  int train_queries = 0;           // decoder query tokens while training
  int infer_queries = 0;           // decoder query tokens at inference
  double decoder_train = 0.0;
  double decoder_infer = 0.0;
  double heads_train = 0.0;
  double heads_infer = 0.0;
  double aggregation = 0.0;        // M: weights, V, dynamic queries, aggregation (inference)
  double aggregation_train = 0.0;  // adds the basic-query aggregation
  double m_over_encoder = 0.0;

  struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
  };
  std::vector<Check> checks;
};

ComplexityReport complexity_report(const RunConfig& config);
std::string complexity_to_json(const ComplexityReport& report);

}  // namespace faq
