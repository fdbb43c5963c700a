#include "faq_agg/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace faq {

std::vector<AblationCell> ablation_preset(const std::string& name) {
  if (name == "table2") {
    return {{"A", {"agg.mode=none", "loss.dual=false"}},
            {"B", {"agg.mode=vanilla", "loss.dual=false"}},
            {"C", {"agg.mode=dynamic", "loss.dual=false"}},
            {"D", {"agg.mode=none", "loss.dual=true"}},
            {"E", {"agg.mode=dynamic", "loss.dual=true"}}};
  }
  if (name == "table4") {
    return {{"cosine", {"agg.mode=dynamic", "agg.method=cosine"}},
            {"simple_net", {"agg.mode=dynamic", "agg.method=simple_net"}},
            {"transformer", {"agg.mode=dynamic", "agg.method=transformer"}}};
  }
  if (name == "r") return ablation_grid({"agg.r=1,2,4,8"});
  if (name == "m") return ablation_grid({"agg.m=8,16,32,64"});
  if (name == "l") return ablation_grid({"agg.l=1,2,3,5,8"});
  throw ValidationError("unknown ablation preset '" + name + "' (table2|table4|r|m|l)");
}

std::vector<AblationCell> ablation_grid(const std::vector<std::string>& axes) {
  std::vector<AblationCell> cells{{"", {}}};
  for (const auto& axis : axes) {
    const auto eq = axis.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("grid axis '" + axis + "' is not key=v1,v2,...");
    const std::string key = axis.substr(0, eq);
    std::vector<std::string> values;
    std::stringstream ss(axis.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ',')) values.push_back(v);
    if (values.empty()) throw ValidationError("grid axis '" + key + "' has no values");
    std::vector<AblationCell> next;
    for (const auto& c : cells) {
      for (const auto& value : values) {
        AblationCell n = c;
        n.name += (n.name.empty() ? "" : ",") + key + "=" + value;
        n.overrides.push_back(key + "=" + value);
        next.push_back(std::move(n));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

std::string ablation_csv_header() {
  return "preset,cell,overrides,config_hash,seed,map,ap50,ap75,ap_s,ap_m,ap_l,final_loss,seconds,status,error";
}

namespace {

std::string opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::string to_csv(const AblationRow& r) {
  char num[64];
  std::ostringstream os;
  os << csv_escape(r.preset) << ',' << csv_escape(r.cell) << ',' << csv_escape(r.overrides) << ',' << r.config_hash
     << ',' << r.seed << ',' << opt(r.metrics.map) << ',' << opt(r.metrics.ap50) << ',' << opt(r.metrics.ap75) << ','
     << opt(r.metrics.ap_s) << ',' << opt(r.metrics.ap_m) << ',' << opt(r.metrics.ap_l) << ',';
  std::snprintf(num, sizeof num, "%.6f,%.1f", r.final_loss, r.seconds);
  os << num << ',' << r.status << ',' << csv_escape(r.error);
  return os.str();
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells,
                                      const std::vector<std::uint64_t>& seeds, const std::vector<VideoClip>& train_data,
                                      const std::vector<VideoClip>& eval_data, const AblationOptions& options) {
  base.validate();
  std::ofstream csv;
  if (!options.csv_path.empty()) {
    if (options.csv_path.has_parent_path()) std::filesystem::create_directories(options.csv_path.parent_path());
    csv.open(options.csv_path, std::ios::trunc);
    if (!csv) throw StorageError("cannot write " + options.csv_path.string());
    csv << ablation_csv_header() << '\n' << std::flush;
  }
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    for (std::uint64_t seed : seeds) {
      AblationRow row;
      row.preset = options.preset;
      row.cell = cell.name;
      row.seed = seed;
      for (std::size_t i = 0; i < cell.overrides.size(); ++i) row.overrides += (i ? ";" : "") + cell.overrides[i];
      const auto start = std::chrono::steady_clock::now();
      try {
        RunConfig cfg = base;
        apply_overrides(cfg, cell.overrides);
        cfg.seed = seed;
        cfg.validate();
        row.config_hash = cfg.hash();
        FaqModel<float> model(cfg);
        TrainOptions topts;
        if (!options.out_dir.empty()) {
          const auto dir = options.out_dir / (cell.name + "_seed" + std::to_string(seed));
          topts.log_path = dir / "train_log.csv";
          topts.checkpoint_path = dir / "model.ckpt";
        }
        const TrainResult tr = train(model, train_data, topts);
        if (!tr.log.empty()) row.final_loss = tr.log.back().loss_total;
        row.metrics = evaluate_model(model, eval_data);
      } catch (const std::exception& e) {
        row.status = "failed";
        row.error = e.what();
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (csv) csv << to_csv(row) << '\n' << std::flush;
      if (options.on_row) options.on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace faq
