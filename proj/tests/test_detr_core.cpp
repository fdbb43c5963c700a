#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "faq_agg/backbone.hpp"
#include "faq_agg/detr_core.hpp"
#include "faq_agg/evaluation.hpp"
#include "faq_agg/trainer.hpp"
#include "grad_check.hpp"

using namespace faq;
using ag::Var;

namespace {

Var<double> random_var(Shape shape, std::mt19937_64& gen, bool grad = false) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : t.values()) x = n(gen);
  return Var<double>(t, grad);
}

void zero_params(ParameterStore<double>& store, const std::string& prefix) {
  for (auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) == 0) e.var.value_mut().fill(0.0);
  }
}

DetrConfig small_detr(int width = 16) {
  DetrConfig c;
  c.width = width;
  c.heads = 2;
  c.ffn_width = 24;
  c.encoder_layers = 1;
  c.decoder_layers = 2;
  return c;
}

}  // namespace

TEST(Backbone, ZeroFrameGivesZeroFeatures) {
  ParameterStore<double> store;
  Rng rng(1);
  Backbone<double> bb(store, BackboneConfig{}, rng);
  const auto f = bb.extract_features(Image(96, 96, 0));
  for (double v : f.spatial.value().values()) EXPECT_EQ(v, 0.0);
  for (double v : f.pooled.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ShapeArithmetic) {
  ParameterStore<float> store;
  Rng rng(1);
  BackboneConfig cfg;
  cfg.image_size = 128;
  Backbone<float> bb(store, cfg, rng);
  EXPECT_EQ(cfg.stride(), 16);
  Image img(128, 128, 40);
  const auto f = bb.extract_features(img);
  EXPECT_EQ(f.spatial.shape(), (Shape{64, 8, 8}));
  EXPECT_EQ(f.pooled.shape(), (Shape{64}));
  EXPECT_THROW(bb.extract_features(Image(96, 96)), ValidationError);
}

TEST(Backbone, PooledIsSpatialMean) {
  ParameterStore<double> store;
  Rng rng(3);
  Backbone<double> bb(store, BackboneConfig{}, rng);
  Image img(96, 96);
  std::mt19937_64 gen(2);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen() % 256);
  const auto f = bb.extract_features(img);
  const auto& sp = f.spatial.value();
  const int d = sp.dim(0), h = sp.dim(1), w = sp.dim(2);
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc += sp(c, y, x);
    EXPECT_NEAR(f.pooled.value()[c], acc / (h * w), 1e-12);
  }
}

TEST(GlobalPool, ConstantAndSinglePosition) {
  Var<double> c(Tensor<double>(Shape{3, 2, 2}, 4.5));
  const auto pooled = global_pool(c);
  ASSERT_EQ(pooled.shape(), (Shape{3}));
  for (double v : pooled.value().values()) EXPECT_EQ(v, 4.5);
  Var<double> s(Tensor<double>(Shape{2, 1, 1}, {3.0, 5.0}));
  const auto p = global_pool(s).value();
  EXPECT_EQ(p[0], 3.0);
  EXPECT_EQ(p[1], 5.0);
}

TEST(GlobalPool, RandomMapMatchesLoop) {
  std::mt19937_64 gen(8);
  auto x = random_var({4, 3, 3}, gen);
  const auto p = global_pool(x).value();
  for (int c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (int i = 0; i < 9; ++i) acc += x.value()[c * 9 + i];
    EXPECT_NEAR(p[c], acc / 9.0, 1e-12);
  }
}

TEST(PositionEncoding, MatchesClosedForm) {
  const int h = 3, w = 4, f = 8;
  const auto pe = sine_position_encoding<double>(h, w, f);
  ASSERT_EQ(pe.shape(), (Shape{12, 8}));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < f / 2; ++k) {
        const double freq = std::pow(10000.0, 2.0 * (k / 2) / (f / 2));
        const double ay = (y + 1) / (h + 1e-6) * 2 * std::numbers::pi / freq;
        const double ax = (x + 1) / (w + 1e-6) * 2 * std::numbers::pi / freq;
        EXPECT_NEAR(pe(y * w + x, k), k % 2 ? std::cos(ay) : std::sin(ay), 1e-12);
        EXPECT_NEAR(pe(y * w + x, f / 2 + k), k % 2 ? std::cos(ax) : std::sin(ax), 1e-12);
      }
    }
  }
}

TEST(Encode, TokenShape) {
  ParameterStore<double> store;
  Rng rng(1);
  DetrCore<double> detr(store, small_detr(32), rng);
  std::mt19937_64 gen(1);
  FrameFeatures<double> feats{random_var({32, 4, 4}, gen), {}};
  EXPECT_EQ(detr.encode(feats).tokens.shape(), (Shape{16, 32}));
}

TEST(Encode, ZeroLayersIsFeaturesPlusPositions) {
  ParameterStore<double> store;
  Rng rng(1);
  auto cfg = small_detr();
  cfg.encoder_layers = 0;
  DetrCore<double> detr(store, cfg, rng);
  std::mt19937_64 gen(1);
  FrameFeatures<double> feats{random_var({16, 2, 3}, gen), {}};
  const auto mem = detr.encode(feats).tokens.value();
  const auto pe = sine_position_encoding<double>(2, 3, 16);
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 16; ++c) EXPECT_NEAR(mem(t, c), feats.spatial.value()[c * 6 + t] + pe(t, c), 1e-12);
}

TEST(Encode, SwappingPositionsChangesOutput) {
  ParameterStore<double> store;
  Rng rng(1);
  DetrCore<double> detr(store, small_detr(), rng);
  std::mt19937_64 gen(4);
  auto sp = random_var({16, 2, 2}, gen);
  Tensor<double> swapped = sp.value();
  for (int c = 0; c < 16; ++c) std::swap(swapped[c * 4 + 0], swapped[c * 4 + 3]);
  const auto a = detr.encode(FrameFeatures<double>{sp, {}}).tokens.value();
  const auto b = detr.encode(FrameFeatures<double>{Var<double>(swapped), {}}).tokens.value();
  double diff = 0.0;
  // Compare token 0 of a with the swapped-in token 3 of b: a permutation-invariant
  // encoder would make them equal.
  for (int c = 0; c < 16; ++c) diff = std::max(diff, std::abs(a(0, c) - b(3, c)));
  EXPECT_GT(diff, 1e-3);
}

class DecodeTest : public ::testing::Test {
 protected:
  ParameterStore<double> store;
  Rng rng{5};
  DetrCore<double> detr{store, small_detr(), rng};
  std::mt19937_64 gen{6};
  EncodedMemory<double> memory() { return detr.encode(FrameFeatures<double>{random_var({16, 3, 3}, gen), {}}); }
};

TEST_F(DecodeTest, SingleQueryShape) {
  QuerySet<double> q{random_var({1, 16}, gen), QueryKind::basic, std::nullopt};
  EXPECT_EQ(detr.decode(memory(), q).shape(), (Shape{1, 16}));
}

TEST_F(DecodeTest, PermutingQueriesPermutesRows) {
  const auto mem = memory();
  auto qv = random_var({5, 16}, gen);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  Tensor<double> pq(Shape{5, 16});
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 16; ++c) pq(i, c) = qv.value()(perm[i], c);
  const auto a = detr.decode(mem, QuerySet<double>{qv, QueryKind::basic, std::nullopt}).value();
  const auto b = detr.decode(mem, QuerySet<double>{Var<double>(pq), QueryKind::basic, std::nullopt}).value();
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 16; ++c) EXPECT_NEAR(b(i, c), a(perm[i], c), 1e-10);
}

TEST_F(DecodeTest, QueryGradientMatchesFiniteDifferences) {
  const auto mem = memory();
  auto qv = random_var({3, 16}, gen, true);
  auto loss = [&] {
    const auto out = detr.decode(mem, QuerySet<double>{qv, QueryKind::basic, std::nullopt});
    // One output coordinate.
    Tensor<double> sel(Shape{16, 1});
    sel[5] = 1.0;
    return ag::sum(ag::matmul(ag::reshape(ag::matmul(ag::constant(Tensor<double>(Shape{1, 3}, {0.0, 1.0, 0.0})), out),
                                          Shape{1, 16}),
                              ag::constant(sel)));
  };
  EXPECT_LE(faq::testing::check_gradient(qv, loss).max_rel, 1e-4);
}

TEST(PredictHeads, ZeroInputsAndZeroHeads) {
  ParameterStore<double> store;
  Rng rng(1);
  DetrCore<double> detr(store, small_detr(), rng);
  zero_params(store, "detr.box.");
  zero_params(store, "detr.cls");
  const auto p = detr.predict_heads(Var<double>(Tensor<double>(Shape{4, 16})));
  for (double v : p.boxes.value().values()) EXPECT_EQ(v, 0.5);
  for (double v : p.class_logits.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(PredictHeads, ShapesAndBoxRange) {
  ParameterStore<double> store;
  Rng rng(1);
  DetrCore<double> detr(store, small_detr(), rng);
  std::mt19937_64 gen(2);
  const auto big = detr.predict_heads(random_var({300, 16}, gen));
  EXPECT_EQ(big.boxes.shape(), (Shape{300, 4}));
  EXPECT_EQ(big.class_logits.shape(), (Shape{300, 4}));
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = detr.predict_heads(random_var({2, 16}, gen));
    for (double v : p.boxes.value().values()) ASSERT_TRUE(v > 0.0 && v < 1.0);
  }
}

TEST(ForwardDetect, DeterministicAndEqualsComposition) {
  ParameterStore<double> store;
  Rng rng(1);
  BackboneConfig bc;
  bc.image_size = 32;
  bc.channels = {8, 16};
  Backbone<double> bb(store, bc, rng);
  DetrCore<double> detr(store, small_detr(), rng);
  std::mt19937_64 gen(3);
  Image img(32, 32);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen() % 256);
  QuerySet<double> q{random_var({4, 16}, gen), QueryKind::basic, std::nullopt};
  const auto a = forward_detect(img, q, bb, detr), b = forward_detect(img, q, bb, detr);
  EXPECT_EQ(a.boxes.value(), b.boxes.value());
  EXPECT_EQ(a.class_logits.value(), b.class_logits.value());
  const auto manual = detr.predict_heads(detr.decode(detr.encode(bb.extract_features(img)), q));
  EXPECT_EQ(a.boxes.value(), manual.boxes.value());
  EXPECT_EQ(a.class_logits.value(), manual.class_logits.value());
}

TEST(ForwardDetect, OverfitsOneFrame) {
  ClipSpec spec;
  spec.num_frames = 1;
  spec.num_objects = 1;
  spec.degradation = 0.0;
  spec.seed = 7;
  const VideoClip clip = generate_clip(spec);
  RunConfig cfg;
  cfg.agg.mode = AggMode::none;
  cfg.dual = false;
  cfg.optim.steps = 600;
  cfg.optim.lr = 1e-3;
  cfg.optim.backbone_lr_mult = 1.0;
  FaqModel<float> model(cfg);
  train(model, std::vector<VideoClip>{clip});
  const auto preds = infer_video(model, clip);
  const auto dets = to_detections(preds[0]);
  const auto best = std::max_element(dets.begin(), dets.end(),
                                     [](const Detection& a, const Detection& b) { return a.score < b.score; });
  ASSERT_NE(best, dets.end());
  EXPECT_GE(iou_giou(best->box, clip.annotations[0].boxes[0]).iou, 0.9);
}
