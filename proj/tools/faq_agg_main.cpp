// faq-agg: data generation, training, evaluation, inference, ablation sweeps,
// embedding export and complexity accounting for the query-aggregation detector.

#include <Eigen/Core>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "faq_agg/ablation.hpp"
#include "faq_agg/complexity.hpp"
#include "faq_agg/embeddings.hpp"
#include "json.hpp"

using namespace faq;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : load_config(file);
    apply_overrides(c, overrides);
    c.validate();
    return c;
  }
};

void add_config_args(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.file, "Config file (key = value lines)");
  cmd->add_option("--set", args.overrides, "Override a config key, k=v (repeatable)");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out << text;
  if (!out) throw StorageError("failed writing " + path.string());
}

std::vector<VideoClip> load_required(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("no ") + what + " dataset given");
  return load_dataset(path);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "absent";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << *v;
  return os.str();
}

int cmd_gen_data(const DatasetSpec& spec, const std::string& out) {
  const auto clips = generate_dataset(spec);
  const auto manifest = write_dataset(clips, out);
  std::cout << "wrote " << manifest.clips.size() << " clips, " << manifest.total_frames() << " frames to " << out
            << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& args) {
  const RunConfig cfg = args.resolve();
  const auto data = load_required(cfg.train_data, "training (data.train)");
  const std::filesystem::path dir = cfg.out_dir;
  write_text(dir / "config.txt", cfg.serialize());
  FaqModel<float> model(cfg);
  TrainOptions opts;
  opts.log_path = dir / "train_log.csv";
  opts.checkpoint_path = dir / "model.ckpt";
  const int every = std::max(1, cfg.optim.steps / 20);
  opts.on_step = [&](const LogRow& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.optim.steps) {
      std::cerr << "step " << r.step << " loss " << r.loss_total << " (cls " << r.loss_cls << ", l1 " << r.loss_l1
                << ", giou " << r.loss_giou << ")\n";
    }
  };
  train(model, data, opts);
  std::cout << "checkpoint " << opts.checkpoint_path.string() << " (config " << cfg.hash() << ")\n";
  if (!cfg.eval_data.empty()) {
    const auto report = evaluate_model(model, load_dataset(cfg.eval_data));
    write_text(dir / "metrics.json", metrics_to_json(report));
    std::cout << "eval ap50 " << fmt(report.ap50) << " map " << fmt(report.map) << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, std::string data, const std::string& out, const std::string& run_id) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto model = model_from_checkpoint(ckpt);
  if (data.empty()) data = ckpt.config.eval_data;
  const auto report = evaluate_model(*model, load_required(data, "evaluation"));
  const std::string json = metrics_to_json(report);
  if (!out.empty()) {
    write_text(out, json);
    const std::filesystem::path csv = std::filesystem::path(out).replace_extension(".csv");
    write_text(csv, metrics_csv_header() + "\n" + metrics_csv_row(run_id, ckpt.config.hash(), report, ckpt.config.seed) +
                        "\n");
  }
  std::cout << json << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data, const std::string& clip_id, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto model = model_from_checkpoint(ckpt);
  const auto clips = load_required(data, "input");
  nlohmann::json j = nlohmann::json::array();
  for (const auto& clip : clips) {
    if (!clip_id.empty() && clip.id != clip_id) continue;
    const auto preds = infer_video(*model, clip);
    for (std::size_t t = 0; t < preds.size(); ++t) {
      nlohmann::json dets = nlohmann::json::array();
      for (const auto& d : to_detections(preds[t], model->config().score_thr)) {
        dets.push_back({{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}}, {"class", d.cls}, {"score", d.score}});
      }
      j.push_back({{"clip", clip.id}, {"frame", t}, {"detections", dets}});
    }
  }
  if (j.empty()) throw ValidationError("no clip matched '" + clip_id + "'");
  const auto& c = model->counters();
  std::cerr << "decoder passes: dynamic " << c.decoder_dynamic << ", vanilla " << c.decoder_vanilla << ", single "
            << c.decoder_single << ", basic " << c.decoder_basic << "\n";
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text(out, j.dump(2));
  }
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) throw ValidationError("no seeds given");
  return out;
}

int cmd_ablate(const ConfigArgs& args, const std::string& preset, const std::vector<std::string>& axes,
               const std::string& seeds, const std::string& out) {
  const RunConfig base = args.resolve();
  std::vector<AblationCell> cells = axes.empty() ? ablation_preset(preset) : ablation_grid(axes);
  const auto train_data = load_required(base.train_data, "training (data.train)");
  const auto eval_data = load_required(base.eval_data, "evaluation (data.eval)");
  AblationOptions opts;
  opts.preset = axes.empty() ? preset : "custom";
  opts.out_dir = out;
  opts.csv_path = std::filesystem::path(out) / "ablation.csv";
  opts.on_row = [](const AblationRow& r) {
    std::cerr << r.cell << " seed " << r.seed << ": " << r.status << " ap50 " << fmt(r.metrics.ap50) << " ("
              << r.seconds << " s)" << (r.error.empty() ? "" : " " + r.error) << "\n";
  };
  run_ablation(base, cells, parse_seeds(seeds), train_data, eval_data, opts);
  std::cout << "wrote " << opts.csv_path.string() << "\n";
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& data, int num_clips, int frames, const std::string& out,
               std::size_t max_points) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto trained = model_from_checkpoint(ckpt);
  auto clips = load_required(data, "input");
  if (num_clips > 0 && static_cast<int>(clips.size()) > num_clips) clips.resize(static_cast<std::size_t>(num_clips));
  const EmbeddingTable table = export_dynamic_queries(*trained, clips, frames);
  const std::filesystem::path dir = out;
  write_embedding_csv(table, dir / "embeddings.csv");
  TsneOptions topts;
  topts.seed = ckpt.config.seed;
  write_embedding_plot(table, dir / "tsne.png", max_points, topts);

  FaqModel<float> untrained(ckpt.config);
  const SimilarityGap g = similarity_gap(table);
  const SimilarityGap g0 = similarity_gap(export_dynamic_queries(untrained, clips, frames));
  nlohmann::json j{{"rows", table.rows.size()},
                   {"trained", {{"intra", g.intra}, {"inter", g.inter}, {"gap", g.gap}}},
                   {"untrained", {{"intra", g0.intra}, {"inter", g0.inter}, {"gap", g0.gap}}}};
  write_text(dir / "similarity.json", j.dump(2));
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* d = std::getenv("FAQ_AGG_DETERMINISTIC"); d && std::string(d) == "1") {
    Eigen::setNbThreads(1);
    std::cerr << "deterministic kernels: single-threaded Eigen\n";
  }

  CLI::App app{"Video object detection with query aggregation"};
  app.require_subcommand(1);

  DatasetSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic video dataset");
  gen->add_option("--clips", spec.num_clips, "Number of clips");
  gen->add_option("--frames", spec.num_frames, "Frames per clip");
  gen->add_option("--size", spec.image_size, "Image side in pixels");
  gen->add_option("--classes", spec.num_classes, "Number of shape classes (1-3)");
  gen->add_option("--max-objects", spec.max_objects, "Maximum objects per clip");
  gen->add_option("--degradation", spec.degradation, "Blur/occlusion severity in [0, 1]");
  gen->add_option("--seed", spec.seed, "Random seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  ConfigArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_config_args(train_cmd, train_args);

  std::string ckpt, data, out, run_id = "eval", clip_id;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset directory (defaults to the checkpoint's data.eval)");
  eval_cmd->add_option("--out", out, "Report path (.json; a .csv row is written alongside)");
  eval_cmd->add_option("--run-id", run_id, "Run id for the CSV row");

  auto* infer_cmd = app.add_subcommand("infer", "Per-frame detections for a dataset or one clip");
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--data", data, "Dataset directory")->required();
  infer_cmd->add_option("--clip", clip_id, "Only this clip id");
  infer_cmd->add_option("--out", out, "Output JSON (stdout when omitted)");

  ConfigArgs ablate_args;
  std::string preset = "table2", seeds = "0,1,2";
  std::vector<std::string> axes;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate a grid of configurations");
  add_config_args(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--preset", preset, "table2 | table4 | r | m | l");
  ablate_cmd->add_option("--axis", axes, "Custom axis key=v1,v2 (repeatable; replaces the preset)");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate_cmd->add_option("--out", out, "Output directory")->required();

  int num_clips = 10, frames = 0;
  std::size_t max_points = 1500;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Export dynamic queries and a t-SNE plot");
  export_cmd->add_option("--ckpt", ckpt, "Dynamic-mode checkpoint")->required();
  export_cmd->add_option("--data", data, "Dataset directory")->required();
  export_cmd->add_option("--clips", num_clips, "Number of clips to export (0 = all)");
  export_cmd->add_option("--frames-per-clip", frames, "Frames per clip (0 = all)");
  export_cmd->add_option("--max-points", max_points, "Rows projected in the plot");
  export_cmd->add_option("--out", out, "Output directory")->required();

  ConfigArgs cx_args;
  auto* cx_cmd = app.add_subcommand("complexity", "Analytic operation counts");
  add_config_args(cx_cmd, cx_args);

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(spec, gen_out);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(ckpt, data, out, run_id);
    if (infer_cmd->parsed()) return cmd_infer(ckpt, data, clip_id, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, preset, axes, seeds, out);
    if (export_cmd->parsed()) return cmd_export(ckpt, data, num_clips, frames, out, max_points);
    if (cx_cmd->parsed()) {
      const ComplexityReport rep = complexity_report(cx_args.resolve());
      std::cout << complexity_to_json(rep) << "\n";
      for (const auto& c : rep.checks) {
        if (!c.passed) return 1;
      }
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
