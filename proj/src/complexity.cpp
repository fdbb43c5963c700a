#include "faq_agg/complexity.hpp"

#include "json.hpp"

namespace faq {

namespace {

double decoder_macs(const DetrConfig& c, double k, double tokens) {
  const double f = c.width;
  const double self_attn = 4 * k * f * f + 2 * k * k * f;
  const double cross_attn = 2 * k * f * f + 2 * tokens * f * f + 2 * k * tokens * f;
  const double ffn = 2 * k * f * c.ffn_width;
  return c.decoder_layers * (self_attn + cross_attn + ffn);
}

double head_macs(const DetrConfig& c, double k) {
  const double f = c.width;
  return k * (2 * f * f + 4 * f) + k * f * (c.num_classes + 1);
}

}  // namespace

ComplexityReport complexity_report(const RunConfig& config) {
  config.validate();
  ComplexityReport rep;
  const BackboneConfig bb = config.backbone();
  const DetrConfig& dc = config.detr;
  const AggregationConfig& ag = config.agg;
  const double f = dc.width, d = bb.feature_width(), m = ag.m, r = ag.r;

  int side = bb.image_size, in = 3;
  for (int out : bb.channels) {
    side /= 2;
    rep.backbone_per_frame += static_cast<double>(out) * in * 9 * side * side;
    in = out;
  }
  rep.l = config.agg.mode == AggMode::none ? 1 : ag.l;
  rep.backbone_total = rep.backbone_per_frame * rep.l;

  const double tokens = static_cast<double>(side) * side;
  rep.encoder = dc.encoder_layers * (4 * tokens * f * f + 2 * tokens * tokens * f + 2 * tokens * f * dc.ffn_width);

  rep.infer_queries = ag.m;
  rep.train_queries = ag.m + (config.dual ? ag.m * ag.r : 0);
  rep.decoder_infer = decoder_macs(dc, rep.infer_queries, tokens);
  rep.decoder_train = decoder_macs(dc, ag.m, tokens) + (config.dual ? decoder_macs(dc, m * r, tokens) : 0.0);
  rep.heads_infer = head_macs(dc, rep.infer_queries);
  rep.heads_train = head_macs(dc, ag.m) + (config.dual ? head_macs(dc, m * r) : 0.0);

  const double l = rep.l;
  switch (ag.mode) {
    case AggMode::none:
      break;
    case AggMode::vanilla:
      // alpha on the center, beta on every member, cosines, weighted sum of l sets.
      rep.aggregation = d * d + l * d * d + l * 3 * d + l * m * f;
      rep.aggregation_train = rep.aggregation;
      break;
    case AggMode::dynamic: {
      double weights = 0.0;
      switch (ag.method) {
        case AggMethod::cosine: weights = d * d + l * d * d + l * 3 * d; break;
        case AggMethod::simple_net: weights = l * (2 * d * d + d); break;
        case AggMethod::transformer: weights = d * d + l * d * d + l * d; break;
      }
      const double generate = l * (d * r * m + r * m * f);  // G and the group combination
      rep.aggregation = weights + generate + l * m * f;
      rep.aggregation_train = rep.aggregation + (config.dual ? l * r * m * f : 0.0);
      break;
    }
  }
  rep.m_over_encoder = rep.encoder > 0 ? rep.aggregation / rep.encoder : 0.0;

  if (ag.mode == AggMode::dynamic && config.dual) {
    const int expect = (ag.r + 1) * ag.m;
    rep.checks.push_back({"train_decoder_queries == (r+1)*m", rep.train_queries == expect,
                          std::to_string(rep.train_queries) + " vs " + std::to_string(expect)});
  }
  rep.checks.push_back({"infer_decoder_queries == m", rep.infer_queries == ag.m,
                        std::to_string(rep.infer_queries) + " vs " + std::to_string(ag.m)});
  if (ag.mode != AggMode::none) {
    rep.checks.push_back({"count(M) / count(N_enc) < 0.05", rep.m_over_encoder < 0.05,
                          std::to_string(rep.m_over_encoder)});
  }
  return rep;
}

std::string complexity_to_json(const ComplexityReport& r) {
  nlohmann::json j;
  j["l"] = r.l;
  j["macs"] = {{"backbone_per_frame", r.backbone_per_frame},
               {"backbone_total", r.backbone_total},
               {"encoder", r.encoder},
               {"decoder_train", r.decoder_train},
               {"decoder_infer", r.decoder_infer},
               {"heads_train", r.heads_train},
               {"heads_infer", r.heads_infer},
               {"aggregation", r.aggregation},
               {"aggregation_train", r.aggregation_train}};
  j["decoder_queries"] = {{"train", r.train_queries}, {"infer", r.infer_queries}};
  j["ratios"] = {{"aggregation_over_encoder", r.m_over_encoder}};
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  j["checks"] = checks;
  return j.dump(2);
}

}  // namespace faq
