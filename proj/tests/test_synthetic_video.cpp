#include <gtest/gtest.h>

#include <filesystem>

#include "faq_agg/synthetic_video.hpp"
#include "faq_agg/tensor.hpp"

using namespace faq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("faq_video_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(GenerateClip, SingleFrameBoxEnclosesShape) {
  ClipSpec spec;
  spec.num_frames = 1;
  spec.num_objects = 1;
  spec.degradation = 0.0;
  spec.seed = 7;
  const VideoClip clip = generate_clip(spec);
  ASSERT_EQ(clip.num_frames(), 1);
  ASSERT_EQ(clip.annotations[0].boxes.size(), 1u);

  // Background stays below 100 in every channel while object colors start at 120.
  const Image& img = clip.frames[0];
  int x0 = img.width, y0 = img.height, x1 = -1, y1 = -1;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int peak = std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      if (peak < 100) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  ASSERT_GE(x1, x0);
  const Box expect = Box::from_corners(x0 / 96.0, y0 / 96.0, (x1 + 1) / 96.0, (y1 + 1) / 96.0);
  const Box& got = clip.annotations[0].boxes[0];
  EXPECT_NEAR(got.cx, expect.cx, 1e-12);
  EXPECT_NEAR(got.cy, expect.cy, 1e-12);
  EXPECT_NEAR(got.w, expect.w, 1e-12);
  EXPECT_NEAR(got.h, expect.h, 1e-12);
}

TEST(GenerateClip, DeterministicInSeed) {
  ClipSpec spec;
  spec.num_objects = 2;
  spec.degradation = 0.7;
  spec.seed = 99;
  const VideoClip a = generate_clip(spec), b = generate_clip(spec);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.annotations, b.annotations);
  spec.seed = 100;
  EXPECT_NE(generate_clip(spec).frames, a.frames);
}

TEST(GenerateClip, LinearMotionMatchesMotionModel) {
  ClipSpec spec;
  spec.num_frames = 10;
  spec.num_objects = 1;
  spec.degradation = 0.0;
  ObjectMotion o;
  o.shape = ShapeClass::square;
  o.x0 = 20.0;
  o.y0 = 40.0;
  o.vx = 2.0;
  o.vy = 0.0;
  o.size = 16.0;
  spec.objects = {o};
  const VideoClip clip = generate_clip(spec);
  for (int t = 0; t < 10; ++t) {
    // Motion-model oracle, independent of the renderer.
    EXPECT_DOUBLE_EQ(clip.placements[t][0][0], o.x0 + o.vx * t);
    EXPECT_DOUBLE_EQ(clip.placements[t][0][1], o.y0);
    if (t > 0) {
      const double dx = clip.annotations[t].boxes[0].cx - clip.annotations[t - 1].boxes[0].cx;
      EXPECT_NEAR(dx, 2.0 / 96.0, 1e-12);
      EXPECT_NEAR(clip.annotations[t].boxes[0].cy, clip.annotations[0].boxes[0].cy, 1e-12);
    }
    EXPECT_NEAR(clip.annotations[t].boxes[0].w, 16.0 / 96.0, 1e-12);
  }
}

TEST(GenerateClip, RejectsBadSpecs) {
  ClipSpec spec;
  spec.num_frames = 0;
  EXPECT_THROW(generate_clip(spec), ValidationError);
  spec = {};
  spec.degradation = 1.5;
  EXPECT_THROW(generate_clip(spec), ValidationError);
  spec = {};
  spec.num_objects = 1;
  spec.objects = {ObjectMotion{}, ObjectMotion{}};
  EXPECT_THROW(generate_clip(spec), ValidationError);
}

TEST(GenerateDataset, ObjectCountsAndDeterminism) {
  DatasetSpec spec;
  spec.num_clips = 6;
  spec.num_frames = 3;
  spec.max_objects = 3;
  spec.seed = 4;
  const auto a = generate_dataset(spec);
  ASSERT_EQ(a.size(), 6u);
  for (const auto& c : a) {
    EXPECT_EQ(c.num_frames(), 3);
    const auto n = c.annotations[0].boxes.size();
    EXPECT_GE(n, 1u);
    EXPECT_LE(n, 3u);
    for (const auto& ann : c.annotations) {
      for (int cls : ann.classes) EXPECT_TRUE(cls >= 0 && cls < 3);
      for (const auto& b : ann.boxes) EXPECT_TRUE(b.w > 0 && b.h > 0 && b.cx > 0 && b.cx < 1);
    }
  }
  const auto b = generate_dataset(spec);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].frames, b[i].frames);
}

TEST(Dataset, EmptyListWritesValidManifest) {
  const auto root = scratch("empty");
  const DatasetManifest m = write_dataset({}, root);
  EXPECT_TRUE(m.clips.empty());
  EXPECT_TRUE(fs::exists(root / "manifest.json"));
  EXPECT_TRUE(load_dataset(root).empty());
}

TEST(Dataset, RoundTripReproducesClips) {
  DatasetSpec spec;
  spec.num_clips = 2;
  spec.num_frames = 5;
  spec.seed = 21;
  const auto clips = generate_dataset(spec);
  const auto root = scratch("roundtrip");
  const DatasetManifest m = write_dataset(clips, root);
  EXPECT_EQ(m.clips.size(), 2u);
  EXPECT_EQ(m.total_frames(), 10);
  const auto loaded = load_dataset(root);
  ASSERT_EQ(loaded.size(), clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(loaded[i].id, clips[i].id);
    EXPECT_EQ(loaded[i].frames, clips[i].frames);
    EXPECT_EQ(loaded[i].annotations, clips[i].annotations);
  }
}

TEST(Dataset, MissingManifestIsParseError) {
  const auto root = scratch("nomanifest");
  fs::create_directories(root);
  EXPECT_THROW(load_dataset(root), ParseError);
}

TEST(Dataset, DeletedFrameIsNamed) {
  DatasetSpec spec;
  spec.num_clips = 1;
  spec.num_frames = 3;
  const auto root = scratch("deleted");
  write_dataset(generate_dataset(spec), root);
  fs::remove(root / "clip_0000" / "frame_1.png");
  try {
    load_dataset(root);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("frame_1.png"), std::string::npos) << e.what();
  }
}

TEST(Dataset, PngRoundTrip) {
  Image img(5, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const auto p = scratch("png");
  fs::create_directories(p);
  write_png(p / "x.png", img);
  EXPECT_EQ(read_png(p / "x.png"), img);
  EXPECT_THROW(read_png(p / "missing.png"), ParseError);
}
