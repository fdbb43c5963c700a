#include "faq_agg/synthetic_video.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include "json.hpp"

#include "faq_agg/nn.hpp"
#include "faq_agg/tensor.hpp"

namespace faq {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string shape_name(ShapeClass s) {
  switch (s) {
    case ShapeClass::disk:
      return "disk";
    case ShapeClass::square:
      return "square";
    case ShapeClass::triangle:
      return "triangle";
  }
  return "unknown";
}

void ClipSpec::validate() const {
  if (num_frames < 1) throw ValidationError("ClipSpec: num_frames must be >= 1");
  if (image_size < 8) throw ValidationError("ClipSpec: image_size must be >= 8");
  if (num_objects < 0) throw ValidationError("ClipSpec: num_objects must be >= 0");
  if (classes.empty()) throw ValidationError("ClipSpec: class list is empty");
  if (!(degradation >= 0.0 && degradation <= 1.0)) throw ValidationError("ClipSpec: degradation must be in [0, 1]");
  if (!objects.empty() && static_cast<int>(objects.size()) != num_objects) {
    throw ValidationError("ClipSpec: explicit objects do not match num_objects");
  }
  for (const auto& o : objects) {
    if (!(o.size >= 4.0) || o.size > image_size) throw ValidationError("ClipSpec: object size out of range");
    if (std::find(classes.begin(), classes.end(), o.shape) == classes.end()) {
      throw ValidationError("ClipSpec: object shape not in class list");
    }
  }
}

namespace {

bool covers(ShapeClass shape, double cx, double cy, double size, double px, double py) {
  const double half = 0.5 * size;
  switch (shape) {
    case ShapeClass::disk:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= half * half;
    case ShapeClass::square:
      return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
    case ShapeClass::triangle: {
      const double top = cy - half;
      if (py < top || py > cy + half) return false;
      return std::abs(px - cx) <= 0.5 * (py - top);
    }
  }
  return false;
}

struct Mask {
  int size = 0;
  std::vector<float> alpha;
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive pixel extents of the coverage
};

Mask rasterize(const ObjectMotion& o, double cx, double cy, int s) {
  Mask m;
  m.size = s;
  m.alpha.assign(static_cast<std::size_t>(s) * s, 0.0f);
  m.x0 = s;
  m.y0 = s;
  const int lo_x = std::max(0, static_cast<int>(std::floor(cx - o.size)));
  const int hi_x = std::min(s - 1, static_cast<int>(std::ceil(cx + o.size)));
  const int lo_y = std::max(0, static_cast<int>(std::floor(cy - o.size)));
  const int hi_y = std::min(s - 1, static_cast<int>(std::ceil(cy + o.size)));
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      if (covers(o.shape, cx, cy, o.size, x + 0.5, y + 0.5)) {
        m.alpha[static_cast<std::size_t>(y) * s + x] = 1.0f;
        m.x0 = std::min(m.x0, x);
        m.x1 = std::max(m.x1, x);
        m.y0 = std::min(m.y0, y);
        m.y1 = std::max(m.y1, y);
      }
    }
  }
  return m;
}

// Averages the mask along the motion direction over `length` taps.
std::vector<float> motion_blur(const Mask& m, double dx, double dy, int length) {
  if (length <= 1) return m.alpha;
  const int s = m.size;
  std::vector<float> out(m.alpha.size(), 0.0f);
  const double center = 0.5 * (length - 1);
  for (int k = 0; k < length; ++k) {
    const int ox = static_cast<int>(std::lround((k - center) * dx));
    const int oy = static_cast<int>(std::lround((k - center) * dy));
    for (int y = 0; y < s; ++y) {
      const int sy = y - oy;
      if (sy < 0 || sy >= s) continue;
      for (int x = 0; x < s; ++x) {
        const int sx = x - ox;
        if (sx < 0 || sx >= s) continue;
        out[static_cast<std::size_t>(y) * s + x] += m.alpha[static_cast<std::size_t>(sy) * s + sx];
      }
    }
  }
  for (auto& v : out) v /= static_cast<float>(length);
  return out;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

VideoClip generate_clip(const ClipSpec& spec, const std::string& id) {
  spec.validate();
  Rng rng(spec.seed);
  const int s = spec.image_size;
  const double scale = s / 96.0;

  std::vector<ObjectMotion> objects = spec.objects;
  if (objects.empty()) {
    for (int i = 0; i < spec.num_objects; ++i) {
      ObjectMotion o;
      o.shape = spec.classes[static_cast<std::size_t>(rng.integer(0, static_cast<int>(spec.classes.size()) - 1))];
      o.size = std::max(4.0, rng.uniform(0.16, 0.32) * s);
      o.x0 = rng.uniform(0.5 * o.size, s - 0.5 * o.size);
      o.y0 = rng.uniform(0.5 * o.size, s - 0.5 * o.size);
      o.vx = rng.uniform(-3.0, 3.0) * scale;
      o.vy = rng.uniform(-3.0, 3.0) * scale;
      for (auto& c : o.color) c = static_cast<std::uint8_t>(rng.integer(120, 255));
      objects.push_back(o);
    }
  }
  const int base_gray = rng.integer(20, 70);
  std::array<int, 3> tint{};
  for (auto& t : tint) t = rng.integer(-10, 10);

  VideoClip clip;
  clip.id = id;
  clip.frames.reserve(static_cast<std::size_t>(spec.num_frames));
  for (int t = 0; t < spec.num_frames; ++t) {
    Image img(s, s);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double noise = rng.uniform(-8.0, 8.0);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_byte(base_gray + tint[static_cast<std::size_t>(c)] + noise);
      }
    }
    FrameAnnotation ann;
    std::vector<std::array<double, 2>> placed;
    for (const auto& o : objects) {
      const double half = 0.5 * o.size;
      const double cx = std::clamp(o.x0 + o.vx * t, half, s - half);
      const double cy = std::clamp(o.y0 + o.vy * t, half, s - half);
      placed.push_back({cx, cy});
      const Mask mask = rasterize(o, cx, cy, s);
      if (mask.x1 < mask.x0) throw ValidationError("generate_clip: object rasterized to an empty mask");
      ann.boxes.push_back(Box::from_corners(static_cast<double>(mask.x0) / s, static_cast<double>(mask.y0) / s,
                                            static_cast<double>(mask.x1 + 1) / s,
                                            static_cast<double>(mask.y1 + 1) / s));
      ann.classes.push_back(static_cast<int>(o.shape));

      // Degradation draws happen unconditionally so the random stream does
      // not depend on the severity.
      const double blur_draw = rng.uniform(0.0, 1.0);
      const double occ_draw = rng.uniform(0.0, 1.0);
      const double occ_w = rng.uniform(0.3, 0.6), occ_h = rng.uniform(0.3, 0.6);
      const double occ_u = rng.uniform(0.0, 1.0), occ_v = rng.uniform(0.0, 1.0);
      const int occ_gray = rng.integer(20, 70);

      const double speed = std::hypot(o.vx, o.vy);
      int blur_len = 1;
      if (speed > 0.0) blur_len = 1 + static_cast<int>(std::lround(spec.degradation * blur_draw * 0.8 * o.size));
      const std::vector<float> alpha =
          speed > 0.0 ? motion_blur(mask, o.vx / speed, o.vy / speed, blur_len) : mask.alpha;
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          const float a = alpha[static_cast<std::size_t>(y) * s + x];
          if (a <= 0.0f) continue;
          for (int c = 0; c < 3; ++c) {
            const double bg = img.at(y, x, c);
            img.at(y, x, c) = clamp_byte((1.0 - a) * bg + a * o.color[static_cast<std::size_t>(c)]);
          }
        }
      }
      if (occ_draw < 0.6 * spec.degradation) {
        const int bw = mask.x1 - mask.x0 + 1, bh = mask.y1 - mask.y0 + 1;
        const int ow = std::max(1, static_cast<int>(std::lround(occ_w * bw)));
        const int oh = std::max(1, static_cast<int>(std::lround(occ_h * bh)));
        const int ox = mask.x0 + static_cast<int>(occ_u * (bw - ow));
        const int oy = mask.y0 + static_cast<int>(occ_v * (bh - oh));
        for (int y = oy; y < std::min(s, oy + oh); ++y) {
          for (int x = ox; x < std::min(s, ox + ow); ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(occ_gray);
          }
        }
      }
    }
    clip.frames.push_back(std::move(img));
    clip.annotations.push_back(std::move(ann));
    clip.placements.push_back(std::move(placed));
  }
  return clip;
}

std::vector<VideoClip> generate_dataset(const DatasetSpec& spec) {
  if (spec.num_clips < 0) throw ValidationError("dataset: negative clip count");
  if (spec.num_classes < 1 || spec.num_classes > 3) throw ValidationError("dataset: classes must be in [1, 3]");
  if (spec.max_objects < 1) throw ValidationError("dataset: max_objects must be >= 1");
  std::vector<ShapeClass> classes;
  for (int k = 0; k < spec.num_classes; ++k) classes.push_back(static_cast<ShapeClass>(k));
  std::vector<VideoClip> clips;
  for (int i = 0; i < spec.num_clips; ++i) {
    const std::uint64_t seed = splitmix64(spec.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(i));
    ClipSpec cs;
    cs.num_frames = spec.num_frames;
    cs.image_size = spec.image_size;
    cs.classes = classes;
    cs.degradation = spec.degradation;
    cs.seed = seed;
    cs.num_objects = 1 + static_cast<int>(splitmix64(seed) % static_cast<std::uint64_t>(spec.max_objects));
    char id[32];
    std::snprintf(id, sizeof(id), "clip_%04d", i);
    clips.push_back(generate_clip(cs, id));
  }
  return clips;
}

int DatasetManifest::total_frames() const {
  int n = 0;
  for (const auto& c : clips) n += c.frames;
  return n;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw StorageError("failed writing " + path.string());
}

json read_json(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ParseError("missing " + what + ": " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("malformed " + what + " " + path.string() + ": " + e.what());
  }
}

}  // namespace

DatasetManifest write_dataset(const std::vector<VideoClip>& clips, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw StorageError("cannot create " + root.string() + ": " + ec.message());
  DatasetManifest manifest;
  json mclips = json::array();
  json records = json::array();
  for (const auto& clip : clips) {
    if (clip.annotations.size() != clip.frames.size()) {
      throw ValidationError("clip " + clip.id + ": annotation count differs from frame count");
    }
    const fs::path dir = root / clip.id;
    fs::create_directories(dir, ec);
    if (ec) throw StorageError("cannot create " + dir.string() + ": " + ec.message());
    for (int k = 0; k < clip.num_frames(); ++k) {
      const auto& frame = clip.frames[static_cast<std::size_t>(k)];
      write_png(dir / ("frame_" + std::to_string(k) + ".png"), frame);
      const auto& ann = clip.annotations[static_cast<std::size_t>(k)];
      json boxes = json::array();
      for (const auto& b : ann.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
      records.push_back({{"clip", clip.id}, {"frame", k}, {"boxes", boxes}, {"classes", ann.classes}});
    }
    const int width = clip.frames.empty() ? 0 : clip.frames.front().width;
    const int height = clip.frames.empty() ? 0 : clip.frames.front().height;
    mclips.push_back({{"id", clip.id}, {"frames", clip.num_frames()}, {"width", width}, {"height", height}});
    manifest.clips.push_back({clip.id, clip.num_frames()});
  }
  json mj = {{"format", "faq-agg-dataset"},
             {"version", 1},
             {"num_clips", manifest.clips.size()},
             {"total_frames", manifest.total_frames()},
             {"clips", mclips}};
  write_text(root / "annotations.json", records.dump() + "\n");
  write_text(root / "manifest.json", mj.dump(2) + "\n");
  return manifest;
}

std::vector<VideoClip> load_dataset(const fs::path& root) {
  const json mj = read_json(root / "manifest.json", "dataset manifest");
  const json records = read_json(root / "annotations.json", "annotation file");
  if (!mj.contains("clips") || !mj["clips"].is_array()) throw ParseError("manifest has no clip list");
  if (!records.is_array()) throw ParseError("annotations.json must hold an array of frame records");

  std::map<std::pair<std::string, int>, const json*> by_frame;
  for (const auto& r : records) {
    if (!r.is_object() || !r.contains("clip") || !r.contains("frame") || !r["clip"].is_string() ||
        !r["frame"].is_number_integer()) {
      throw ParseError("malformed annotation record: " + r.dump());
    }
    by_frame[{r["clip"].get<std::string>(), r["frame"].get<int>()}] = &r;
  }

  std::vector<VideoClip> clips;
  for (const auto& entry : mj["clips"]) {
    if (!entry.contains("id") || !entry.contains("frames")) throw ParseError("malformed manifest entry: " + entry.dump());
    VideoClip clip;
    clip.id = entry["id"].get<std::string>();
    const int frames = entry["frames"].get<int>();
    for (int k = 0; k < frames; ++k) {
      const std::string where = "clip " + clip.id + " frame " + std::to_string(k);
      const fs::path png = root / clip.id / ("frame_" + std::to_string(k) + ".png");
      if (!fs::exists(png)) throw ParseError("missing frame file for " + where + ": " + png.string());
      clip.frames.push_back(read_png(png));
      auto it = by_frame.find({clip.id, k});
      if (it == by_frame.end()) throw ParseError("no annotation record for " + where);
      const json& r = *it->second;
      FrameAnnotation ann;
      try {
        for (const auto& b : r.at("boxes")) {
          if (!b.is_array() || b.size() != 4) throw ParseError("box must have 4 numbers");
          ann.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
        }
        for (const auto& c : r.at("classes")) ann.classes.push_back(c.get<int>());
      } catch (const std::exception& e) {
        throw ParseError("malformed annotation for " + where + ": " + e.what());
      }
      if (ann.boxes.size() != ann.classes.size()) {
        throw ParseError("malformed annotation for " + where + ": box and class counts differ");
      }
      for (const auto& b : ann.boxes) {
        const bool ok = b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1 && b.w > 0 && b.w <= 1 && b.h > 0 && b.h <= 1;
        if (!ok) throw ParseError("malformed annotation for " + where + ": box outside [0,1] or empty");
      }
      clip.annotations.push_back(std::move(ann));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace faq
