#include "faq_agg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace faq {

namespace {

double box_iou(const Box& a, const Box& b) {
  const double ix = std::min(a.cx + 0.5 * a.w, b.cx + 0.5 * b.w) - std::max(a.cx - 0.5 * a.w, b.cx - 0.5 * b.w);
  const double iy = std::min(a.cy + 0.5 * a.h, b.cy + 0.5 * b.h) - std::max(a.cy - 0.5 * a.h, b.cy - 0.5 * b.h);
  const double inter = std::max(0.0, ix) * std::max(0.0, iy);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct GtEntry {
  Box box;
  bool ignore = false;
};
struct DetEntry {
  Box box;
  double score = 0.0;
  double area = 0.0;  // pixels, for the out-of-range rule
};
struct ImageEntry {
  std::vector<DetEntry> dets;
  std::vector<GtEntry> gts;
};

// Detections whose area falls outside [lo, hi] and that match nothing are
// ignored, as are detections matched to ignored ground truth.
std::optional<double> ap_core(const std::vector<ImageEntry>& images, double thr, double lo, double hi) {
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  int npig = 0;
  for (const auto& img : images) {
    std::vector<int> gorder(img.gts.size());
    std::iota(gorder.begin(), gorder.end(), 0);
    std::stable_sort(gorder.begin(), gorder.end(),
                     [&](int a, int b) { return !img.gts[a].ignore && img.gts[b].ignore; });
    for (const auto& g : img.gts) npig += g.ignore ? 0 : 1;
    std::vector<int> dorder(img.dets.size());
    std::iota(dorder.begin(), dorder.end(), 0);
    std::stable_sort(dorder.begin(), dorder.end(),
                     [&](int a, int b) { return img.dets[a].score > img.dets[b].score; });
    std::vector<char> gmatched(img.gts.size(), 0);
    for (int di : dorder) {
      const DetEntry& d = img.dets[di];
      double best = std::min(thr, 1.0 - 1e-10);
      int m = -1;
      for (int gi : gorder) {
        if (gmatched[gi]) continue;
        if (m > -1 && !img.gts[m].ignore && img.gts[gi].ignore) break;
        const double iou = box_iou(d.box, img.gts[gi].box);
        if (iou < best) continue;
        best = iou;
        m = gi;
      }
      bool ignore;
      bool tp = false;
      if (m > -1) {
        gmatched[m] = 1;
        ignore = img.gts[m].ignore;
        tp = true;
      } else {
        ignore = d.area < lo || d.area > hi;
      }
      if (!ignore) all.push_back({d.score, tp});
    }
  }
  if (npig == 0) return std::nullopt;
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  const std::size_t n = all.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (all[i].tp ? tp : fp) += 1;
    recall[i] = tp / npig;
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double rt = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), rt);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : xs) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

constexpr double kHuge = 1e10;

}  // namespace

std::optional<double> average_precision(const std::vector<std::vector<ScoredBox>>& dets,
                                        const std::vector<std::vector<Box>>& gts, double iou_thr) {
  if (dets.size() != gts.size()) throw ValidationError("average_precision: detection and ground-truth image counts differ");
  std::vector<ImageEntry> images(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (const auto& d : dets[i]) {
      if (!std::isfinite(d.score)) throw ValidationError("average_precision: non-finite score");
      images[i].dets.push_back({d.box, d.score, 0.0});
    }
    for (const auto& g : gts[i]) images[i].gts.push_back({g, false});
  }
  return ap_core(images, iou_thr, -kHuge, kHuge);
}

template <class T>
FrameDetections to_detections(const PredictionSet<T>& preds, double score_thr) {
  FrameDetections out;
  const int k = preds.size(), nc = preds.num_classes();
  const Tensor<T>& lv = preds.class_logits.value();
  const Tensor<T>& bv = preds.boxes.value();
  for (int i = 0; i < k; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c <= nc; ++c) mx = std::max(mx, static_cast<double>(lv(i, c)));
    double s = 0.0;
    for (int c = 0; c <= nc; ++c) s += std::exp(static_cast<double>(lv(i, c)) - mx);
    int best = 0;
    for (int c = 1; c < nc; ++c) {
      if (lv(i, c) > lv(i, best)) best = c;
    }
    const double score = std::exp(static_cast<double>(lv(i, best)) - mx) / s;
    if (score < score_thr) continue;
    out.push_back({Box{bv(i, 0), bv(i, 1), bv(i, 2), bv(i, 3)}, best, score});
  }
  return out;
}

SizeSplits SizeSplits::for_image(int image_size) {
  const double s = image_size / 640.0;
  return {32.0 * 32.0 * s * s, 96.0 * 96.0 * s * s};
}

MetricsReport evaluate(const std::vector<std::vector<FrameDetections>>& preds, const std::vector<VideoClip>& dataset,
                       int num_classes, const EvalOptions& options) {
  if (preds.size() != dataset.size()) {
    throw ValidationError("evaluate: predictions cover " + std::to_string(preds.size()) + " clips, dataset has " +
                          std::to_string(dataset.size()));
  }
  if (num_classes < 1) throw ValidationError("evaluate: num_classes must be positive");
  MetricsReport report;
  // Flatten to frames once; each frame keeps its pixel area scale.
  struct Frame {
    const FrameDetections* dets;
    const FrameAnnotation* ann;
    double pixel_area;
  };
  std::vector<Frame> frames;
  std::optional<SizeSplits> splits = options.splits;
  for (std::size_t c = 0; c < dataset.size(); ++c) {
    const VideoClip& clip = dataset[c];
    if (static_cast<int>(preds[c].size()) != clip.num_frames()) {
      throw ValidationError("evaluate: clip " + clip.id + " has " + std::to_string(clip.num_frames()) +
                            " frames but " + std::to_string(preds[c].size()) + " predictions");
    }
    for (int t = 0; t < clip.num_frames(); ++t) {
      const Image& img = clip.frames[static_cast<std::size_t>(t)];
      frames.push_back({&preds[c][static_cast<std::size_t>(t)], &clip.annotations[static_cast<std::size_t>(t)],
                        static_cast<double>(img.width) * img.height});
      if (!splits) splits = SizeSplits::for_image(img.width);
    }
  }
  if (!splits) splits = SizeSplits::for_image(96);
  report.num_frames = static_cast<int>(frames.size());

  const std::vector<std::pair<double, double>> ranges{
      {-kHuge, kHuge}, {0.0, splits->small}, {splits->small, splits->medium}, {splits->medium, kHuge}};
  std::vector<double> thresholds;
  for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);

  // ap[range][class][threshold]
  std::vector<std::vector<std::vector<std::optional<double>>>> ap(
      ranges.size(), std::vector<std::vector<std::optional<double>>>(static_cast<std::size_t>(num_classes)));
  for (int cls = 0; cls < num_classes; ++cls) {
    ClassMetrics cm;
    cm.class_id = cls;
    for (std::size_t ri = 0; ri < ranges.size(); ++ri) {
      const auto [lo, hi] = ranges[ri];
      std::vector<ImageEntry> images;
      images.reserve(frames.size());
      for (const auto& f : frames) {
        ImageEntry e;
        for (const auto& d : *f.dets) {
          if (d.cls == cls && d.score >= options.score_thr) e.dets.push_back({d.box, d.score, d.box.area() * f.pixel_area});
        }
        for (std::size_t j = 0; j < f.ann->boxes.size(); ++j) {
          if (f.ann->classes[j] != cls) continue;
          const double area = f.ann->boxes[j].area() * f.pixel_area;
          e.gts.push_back({f.ann->boxes[j], area < lo || area > hi});
          if (ri == 0) ++cm.num_gt;
        }
        images.push_back(std::move(e));
      }
      for (double thr : thresholds) ap[ri][static_cast<std::size_t>(cls)].push_back(ap_core(images, thr, lo, hi));
    }
    const auto& all = ap[0][static_cast<std::size_t>(cls)];
    cm.map = mean_of(all);
    cm.ap50 = all[0];
    cm.ap75 = all[5];
    report.num_gt += cm.num_gt;
    report.per_class.push_back(cm);
  }
  for (const auto& f : frames) {
    for (const auto& d : *f.dets) report.num_detections += d.score >= options.score_thr ? 1 : 0;
  }

  auto collect = [&](std::size_t ri, std::optional<std::size_t> ti) {
    std::vector<std::optional<double>> xs;
    for (const auto& per_class : ap[ri]) {
      for (std::size_t t = 0; t < per_class.size(); ++t) {
        if (!ti || *ti == t) xs.push_back(per_class[t]);
      }
    }
    return mean_of(xs);
  };
  report.map = collect(0, std::nullopt);
  report.ap50 = collect(0, 0);
  report.ap75 = collect(0, 5);
  report.ap_s = collect(1, std::nullopt);
  report.ap_m = collect(2, std::nullopt);
  report.ap_l = collect(3, std::nullopt);
  return report;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string opt_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << *v;
  return os.str();
}

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["map"] = opt_json(report.map);
  j["ap50"] = opt_json(report.ap50);
  j["ap75"] = opt_json(report.ap75);
  j["ap_s"] = opt_json(report.ap_s);
  j["ap_m"] = opt_json(report.ap_m);
  j["ap_l"] = opt_json(report.ap_l);
  j["num_frames"] = report.num_frames;
  j["num_gt"] = report.num_gt;
  j["num_detections"] = report.num_detections;
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    pc.push_back({{"class_id", c.class_id},
                  {"num_gt", c.num_gt},
                  {"map", opt_json(c.map)},
                  {"ap50", opt_json(c.ap50)},
                  {"ap75", opt_json(c.ap75)}});
  }
  j["per_class"] = pc;
  return j.dump(2);
}

std::string metrics_csv_header() { return "run_id,config_hash,map,ap50,ap75,ap_s,ap_m,ap_l,seed"; }

std::string metrics_csv_row(const std::string& run_id, const std::string& config_hash, const MetricsReport& report,
                            std::uint64_t seed) {
  std::ostringstream os;
  os << run_id << ',' << config_hash << ',' << opt_csv(report.map) << ',' << opt_csv(report.ap50) << ','
     << opt_csv(report.ap75) << ',' << opt_csv(report.ap_s) << ',' << opt_csv(report.ap_m) << ','
     << opt_csv(report.ap_l) << ',' << seed;
  return os.str();
}

template FrameDetections to_detections(const PredictionSet<float>&, double);
template FrameDetections to_detections(const PredictionSet<double>&, double);

}  // namespace faq
