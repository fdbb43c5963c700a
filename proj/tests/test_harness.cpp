#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "faq_agg/ablation.hpp"
#include "faq_agg/complexity.hpp"
#include "faq_agg/embeddings.hpp"
#include "faq_agg/trainer.hpp"

using namespace faq;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& mode = "dynamic") {
  RunConfig c;
  apply_overrides(c, {"model.image_size=32", "model.backbone_channels=8,16", "model.width=16", "model.heads=2",
                      "model.ffn_width=32", "model.encoder_layers=1", "model.decoder_layers=1", "agg.m=8",
                      "agg.r=2", "agg.l=3", "optim.steps=3", "optim.batch_frames=2", "agg.mode=" + mode,
                      "seed=5"});
  if (mode == "vanilla") c.dual = false;
  return c;
}

std::vector<VideoClip> tiny_data(int clips = 3, std::uint64_t seed = 1) {
  DatasetSpec s;
  s.num_clips = clips;
  s.num_frames = 4;
  s.image_size = 32;
  s.seed = seed;
  return generate_dataset(s);
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("faq_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<float> vals(const ag::Var<float>& v) {
  const auto s = v.value().values();
  return {s.begin(), s.end()};
}

}  // namespace

TEST(Config, SetGetAndSerializeRoundTrip) {
  RunConfig c = tiny_config();
  EXPECT_EQ(c.get("agg.m"), "8");
  EXPECT_EQ(c.get("model.backbone_channels"), "8,16");
  const RunConfig back = parse_config(c.serialize());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  RunConfig d = c;
  d.set("agg.r", "4");
  EXPECT_NE(d.hash(), c.hash());
}

TEST(Config, SectionsCommentsAndErrors) {
  const RunConfig c = parse_config("# comment\n[agg]\nm = 16  # trailing\nmode = vanilla\n[optim]\nlr = 0.002\n");
  EXPECT_EQ(c.agg.m, 16);
  EXPECT_EQ(c.agg.mode, AggMode::vanilla);
  EXPECT_DOUBLE_EQ(c.optim.lr, 0.002);
  RunConfig x;
  EXPECT_THROW(x.set("agg.nope", "1"), ValidationError);
  EXPECT_THROW(x.set("agg.m", "eight"), ValidationError);
  EXPECT_THROW(x.set("loss.dual", "maybe"), ValidationError);
  EXPECT_THROW(apply_overrides(x, {"agg.m"}), ValidationError);
  RunConfig bad;
  bad.optim.lr = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.set("agg.mode", "vanilla");
  bad.dual = true;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.backbone_channels = {16, 32};
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  const RunConfig c = tiny_config();
  FaqModel<float> model(c);
  const auto dir = scratch("ckpt");
  save_checkpoint(Checkpoint::capture(model.params(), c, 7), dir / "m.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.step, 7);
  EXPECT_EQ(loaded.config, c);
  auto rebuilt = model_from_checkpoint(loaded);
  const auto& a = model.params().entries();
  const auto& b = rebuilt->params().entries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(vals(a[i].var), vals(b[i].var)) << a[i].name;
  }
  const auto clip = tiny_data(1)[0];
  const auto pa = infer_video(model, clip), pb = infer_video(*rebuilt, clip);
  EXPECT_EQ(vals(pa[2].boxes), vals(pb[2].boxes));

  FaqModel<float> other(tiny_config("vanilla"));
  EXPECT_THROW(loaded.restore(other.params()), ValidationError);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto dir = scratch("corrupt");
  { std::ofstream(dir / "junk.ckpt") << "NOTACKPT"; }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), ParseError);
  const RunConfig c = tiny_config();
  FaqModel<float> model(c);
  save_checkpoint(Checkpoint::capture(model.params(), c, 0), dir / "ok.ckpt");
  const auto size = fs::file_size(dir / "ok.ckpt");
  fs::resize_file(dir / "ok.ckpt", size - 10);
  EXPECT_THROW(load_checkpoint(dir / "ok.ckpt"), ParseError);
}

TEST(Trainer, WritesLogAndIsDeterministic) {
  const RunConfig c = tiny_config();
  const auto data = tiny_data();
  const auto dir = scratch("train");
  FaqModel<float> a(c), b(c);
  TrainOptions opts;
  opts.log_path = dir / "log.csv";
  opts.checkpoint_path = dir / "final.ckpt";
  const auto ra = train(a, data, opts);
  const auto rb = train(b, data);
  EXPECT_EQ(ra.steps, 3);
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(ra.log[i], rb.log[i]);
  for (const auto& row : ra.log) {
    EXPECT_TRUE(std::isfinite(row.loss_total));
    EXPECT_EQ(row.branch, "dynamic+basic");
    EXPECT_EQ(row.seed, 5u);
  }
  const auto lines = lines_of(opts.log_path);
  ASSERT_EQ(lines.size(), ra.log.size() + 1);
  EXPECT_EQ(lines[0], log_csv_header());
  EXPECT_EQ(lines[1], to_csv(ra.log[0]));
  EXPECT_TRUE(fs::exists(opts.checkpoint_path));
  EXPECT_EQ(load_checkpoint(opts.checkpoint_path).step, 3);
}

TEST(Trainer, RejectsEmptyData) {
  FaqModel<float> m(tiny_config());
  EXPECT_THROW(train(m, {}), ValidationError);
}

TEST(Trainer, ZeroStepsLeavesParametersUntouched) {
  RunConfig c = tiny_config();
  c.optim.steps = 0;
  FaqModel<float> m(c), ref(c);
  train(m, tiny_data());
  for (std::size_t i = 0; i < m.params().entries().size(); ++i) {
    EXPECT_EQ(vals(m.params().entries()[i].var), vals(ref.params().entries()[i].var));
  }
}

TEST(Inference, BasicBranchSkippedAndCoversEveryFrame) {
  FaqModel<float> m(tiny_config());
  const auto clip = tiny_data(1)[0];
  m.counters() = {};
  const auto preds = infer_video(m, clip);
  ASSERT_EQ(static_cast<int>(preds.size()), clip.num_frames());
  EXPECT_EQ(m.counters().decoder_basic, 0u);
  EXPECT_EQ(m.counters().decoder_dynamic, static_cast<std::size_t>(clip.num_frames()));
  for (const auto& p : preds) EXPECT_EQ(p.size(), 8);
  const auto report = evaluate_model(m, {clip});
  EXPECT_EQ(report.num_frames, clip.num_frames());
}

TEST(Inference, TrainingForwardRunsBasicBranch) {
  FaqModel<float> m(tiny_config());
  const auto clip = tiny_data(1)[0];
  std::vector<FrameFeatures<float>> members;
  for (int t = 0; t < 3; ++t) members.push_back(m.features(clip.frames[t]));
  m.counters() = {};
  const auto out = m.forward(members, true);
  ASSERT_TRUE(out.basic.has_value());
  EXPECT_EQ(out.basic->size(), 8 * 2);
  EXPECT_EQ(m.counters().decoder_basic, 1u);
  EXPECT_FALSE(m.forward(members, false).basic.has_value());
}

TEST(Ablation, PresetsAndGrid) {
  const auto t2 = ablation_preset("table2");
  ASSERT_EQ(t2.size(), 5u);
  EXPECT_EQ(t2[4].name, "E");
  EXPECT_EQ(ablation_preset("r").size(), 4u);
  const auto g = ablation_grid({"agg.r=1,2", "agg.m=8,16,32"});
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[1].name, "agg.r=1,agg.m=16");
  EXPECT_THROW(ablation_preset("nope"), ValidationError);
  EXPECT_THROW(ablation_grid({"agg.r"}), ValidationError);
}

TEST(Ablation, FailedCellIsRecordedAndSweepContinues) {
  RunConfig base = tiny_config();
  base.optim.steps = 1;
  const std::vector<AblationCell> cells{{"bad", {"agg.l=0"}}, {"ok", {"agg.method=cosine"}}};
  const auto dir = scratch("ablate");
  AblationOptions opts;
  opts.preset = "unit";
  opts.csv_path = dir / "rows.csv";
  const auto rows = run_ablation(base, cells, {1, 2}, tiny_data(2), tiny_data(1, 9), opts);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].status, "failed");
  EXPECT_FALSE(rows[0].error.empty());
  EXPECT_EQ(rows[2].status, "ok");
  EXPECT_EQ(rows[3].seed, 2u);
  EXPECT_TRUE(rows[2].metrics.map.has_value());
  const auto lines = lines_of(opts.csv_path);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], ablation_csv_header());
  EXPECT_EQ(lines[3], to_csv(rows[2]));
}

TEST(Complexity, CountsFollowConfiguration) {
  RunConfig c;
  const auto r = complexity_report(c);
  EXPECT_EQ(r.infer_queries, c.agg.m);
  EXPECT_EQ(r.train_queries, (c.agg.r + 1) * c.agg.m);
  EXPECT_EQ(r.l, c.agg.l);
  EXPECT_DOUBLE_EQ(r.backbone_total, r.l * r.backbone_per_frame);
  EXPECT_NEAR(r.m_over_encoder, r.aggregation / r.encoder, 1e-15);
  for (const auto& check : r.checks) EXPECT_TRUE(check.passed) << check.name << " " << check.detail;
  // First conv stage by hand: 96 -> 48 output side, 3 -> 16 channels.
  double first = 16.0 * 3 * 9 * 48 * 48;
  EXPECT_GT(r.backbone_per_frame, first);
  c.set("agg.mode", "none");
  const auto n = complexity_report(c);
  EXPECT_EQ(n.aggregation, 0.0);
  EXPECT_EQ(n.l, 1);
  EXPECT_EQ(n.encoder, r.encoder);
}

TEST(Embeddings, ExportCsvRoundTripAndGap) {
  FaqModel<float> m(tiny_config());
  const auto data = tiny_data(2);
  const auto table = export_dynamic_queries(m, data, 2);
  EXPECT_EQ(table.width, 16);
  ASSERT_EQ(table.rows.size(), 2u * 2u * 8u);
  const auto dir = scratch("emb");
  write_embedding_csv(table, dir / "q.csv");
  const auto back = read_embedding_csv(dir / "q.csv");
  ASSERT_EQ(back.rows.size(), table.rows.size());
  EXPECT_EQ(back.rows[9].clip_id, table.rows[9].clip_id);
  for (std::size_t k = 0; k < table.rows[9].vec.size(); ++k) EXPECT_NEAR(back.rows[9].vec[k], table.rows[9].vec[k], 1e-6);
  FaqModel<float> none(tiny_config("none"));
  EXPECT_THROW(export_dynamic_queries(none, data), ValidationError);
}

TEST(Embeddings, SimilarityGapHandCase) {
  // Two clips, two frames, one query; clip a points along x, clip b along y.
  EmbeddingTable t;
  t.width = 2;
  t.rows = {{"a", 0, 0, {1, 0}}, {"a", 1, 0, {1, 0}}, {"b", 0, 0, {0, 1}}, {"b", 1, 0, {0, 1}}};
  const auto raw = similarity_gap(t, false);
  EXPECT_EQ(raw.intra_pairs, 2u);
  EXPECT_EQ(raw.inter_pairs, 4u);
  EXPECT_NEAR(raw.intra, 1.0, 1e-12);
  EXPECT_NEAR(raw.inter, 0.0, 1e-12);
  EXPECT_NEAR(raw.gap, 1.0, 1e-12);
  // Centered rows are (+-0.5, -+0.5): same clip cosine 1, across clips -1.
  const auto centered = similarity_gap(t, true);
  EXPECT_NEAR(centered.intra, 1.0, 1e-12);
  EXPECT_NEAR(centered.inter, -1.0, 1e-12);
}
