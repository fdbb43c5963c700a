#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faq_agg/box.hpp"
#include "faq_agg/image.hpp"

namespace faq {

/// Shape categories; the enum value is the class id written to annotations.
enum class ShapeClass : int { disk = 0, square = 1, triangle = 2 };

std::string shape_name(ShapeClass s);

/// One object's linear motion. Positions are pixel coordinates of the shape
/// center at frame 0; velocity is in pixels per frame.
struct ObjectMotion {
  ShapeClass shape = ShapeClass::disk;
  double x0 = 0.0;
  double y0 = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double size = 16.0;  // diameter / side length in pixels
  std::array<std::uint8_t, 3> color{230, 230, 230};
};

struct ClipSpec {
  int num_frames = 8;
  int image_size = 96;
  int num_objects = 2;
  std::vector<ShapeClass> classes{ShapeClass::disk, ShapeClass::square, ShapeClass::triangle};
  /// Explicit motion per object. When empty, objects are drawn from `seed`.
  std::vector<ObjectMotion> objects;
  double degradation = 0.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError when a field is out of range.
  void validate() const;
};

struct FrameAnnotation {
  std::vector<Box> boxes;
  std::vector<int> classes;
  bool operator==(const FrameAnnotation&) const = default;
};

struct VideoClip {
  std::string id;
  std::vector<Image> frames;
  std::vector<FrameAnnotation> annotations;
  /// Per frame, per object center in pixels as placed by the renderer.
  /// Filled by generate_clip only; not persisted.
  std::vector<std::vector<std::array<double, 2>>> placements;

  int num_frames() const { return static_cast<int>(frames.size()); }
};

/// Deterministic in `spec` (including the seed).
VideoClip generate_clip(const ClipSpec& spec, const std::string& id = "clip_0000");

struct DatasetSpec {
  int num_clips = 200;
  int num_frames = 8;
  int image_size = 96;
  int num_classes = 3;
  int max_objects = 2;
  double degradation = 0.5;
  std::uint64_t seed = 0;
};

/// Clip i uses a seed derived from (spec.seed, i) and between 1 and
/// max_objects objects.
std::vector<VideoClip> generate_dataset(const DatasetSpec& spec);

struct DatasetManifest {
  struct Entry {
    std::string id;
    int frames = 0;
  };
  std::vector<Entry> clips;
  int total_frames() const;
};

/// Layout: root/manifest.json, root/<clip>/frame_<k>.png, root/annotations.json.
DatasetManifest write_dataset(const std::vector<VideoClip>& clips, const std::filesystem::path& root);
std::vector<VideoClip> load_dataset(const std::filesystem::path& root);

}  // namespace faq
