#include "faq_agg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace faq {

std::string log_csv_header() { return "step,loss_total,loss_cls,loss_l1,loss_giou,branch,lr,seed"; }

std::string to_csv(const LogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%s,%.9g,%llu", row.step, row.loss_total, row.loss_cls,
                row.loss_l1, row.loss_giou, row.branch.c_str(), row.lr, static_cast<unsigned long long>(row.seed));
  return buf;
}

template <class T>
AdamW<T>::AdamW(ParameterStore<T>& store, const OptimConfig& config) : store_(store), config_(config) {
  for (const auto& e : store_.entries()) {
    m_.emplace_back(e.var.shape());
    v_.emplace_back(e.var.shape());
    mult_.push_back(e.name.rfind("backbone.", 0) == 0 ? config_.backbone_lr_mult : 1.0);
  }
}

template <class T>
double AdamW<T>::step(double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto& entries = store_.entries();
  double sq = 0.0;
  for (const auto& e : entries) {
    if (!e.var.has_grad()) continue;
    for (T g : e.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  const double clip = config_.grad_clip > 0.0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& var = entries[i].var;
    const double plr = lr * mult_[i];
    const double decay = 1.0 - plr * config_.weight_decay;
    Tensor<T>& p = var.value_mut();
    const T* grad = var.has_grad() ? var.grad().data() : nullptr;
    T* m = m_[i].data();
    T* v = v_[i].data();
    T* w = p.data();
    const std::size_t n = p.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double g = grad ? static_cast<double>(grad[k]) * clip : 0.0;
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(static_cast<double>(w[k]) * decay - plr * (mk / c1) / (std::sqrt(vk / c2) + eps));
    }
    var.zero_grad();
  }
  return norm;
}

namespace {

std::string branch_tag(const RunConfig& c) {
  if (c.dual) return "dynamic+basic";
  switch (c.agg.mode) {
    case AggMode::none: return "single";
    case AggMode::vanilla: return "vanilla";
    case AggMode::dynamic: return "dynamic";
  }
  return "?";
}

void check_finite(double v, const char* term, const std::string& branch, int step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(step) + ": term " + term + " (branch " +
                             branch + ") = " + std::to_string(v));
  }
}

template <class T>
void check_breakdown(const LossBreakdown<T>& b, int step) {
  for (const auto& part : b.parts) check_breakdown(part, step);
  check_finite(b.classification, "classification", b.branch, step);
  check_finite(b.box_l1, "box_l1", b.branch, step);
  check_finite(b.giou, "giou", b.branch, step);
  check_finite(b.total_value(), "total", b.branch, step);
}

}  // namespace

template <class T>
TrainResult train(FaqModel<T>& model, const std::vector<VideoClip>& data, const TrainOptions& options) {
  const RunConfig& cfg = model.config();
  if (data.empty()) throw ValidationError("train: empty dataset");
  for (const auto& clip : data) {
    if (clip.num_frames() < 1) throw ValidationError("train: clip " + clip.id + " has no frames");
    if (clip.frames.front().width != cfg.image_size || clip.frames.front().height != cfg.image_size) {
      throw ValidationError("train: clip " + clip.id + " frame size differs from model.image_size");
    }
  }
  std::ofstream log;
  if (!options.log_path.empty()) {
    if (options.log_path.has_parent_path()) std::filesystem::create_directories(options.log_path.parent_path());
    log.open(options.log_path, std::ios::trunc);
    if (!log) throw StorageError("cannot open log " + options.log_path.string());
    log << log_csv_header() << '\n';
  }

  AdamW<T> opt(model.params(), cfg.optim);
  model.params().zero_grad();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::string branch = branch_tag(cfg);
  const int l = model.neighborhood_size();
  const int b = cfg.optim.batch_frames;
  const int drop_at = cfg.optim.lr_drop > 0.0 ? static_cast<int>(cfg.optim.lr_drop * cfg.optim.steps) : -1;

  TrainResult result;
  for (int step = 0; step < cfg.optim.steps; ++step) {
    LogRow row;
    row.step = step;
    row.branch = branch;
    row.seed = cfg.seed;
    row.lr = drop_at >= 0 && step >= drop_at ? cfg.optim.lr * 0.1 : cfg.optim.lr;
    for (int s = 0; s < b; ++s) {
      const VideoClip& clip = data[static_cast<std::size_t>(rng.integer(0, static_cast<int>(data.size()) - 1))];
      const int center = rng.integer(0, clip.num_frames() - 1);
      const Neighborhood nb = sample_neighborhood(center, clip.num_frames(), l, cfg.agg.window, rng);
      std::vector<FrameFeatures<T>> members;
      for (int idx : nb.members) members.push_back(model.features(clip.frames[static_cast<std::size_t>(idx)]));
      const auto out = model.forward(members, true);
      const FrameAnnotation& gts = clip.annotations[static_cast<std::size_t>(center)];
      const LossBreakdown<T> loss = cfg.dual ? dual_loss(out.primary, *out.basic, gts, cfg.gamma, cfg.loss)
                                             : hungarian_loss(out.primary, gts, cfg.loss, branch);
      check_breakdown(loss, step);
      ag::scale(loss.total, static_cast<T>(1.0 / b)).backward();
      row.loss_total += loss.total_value() / b;
      row.loss_cls += loss.classification / b;
      row.loss_l1 += loss.box_l1 / b;
      row.loss_giou += loss.giou / b;
    }
    opt.step(row.lr);
    if (log) log << to_csv(row) << '\n';
    if (options.on_step) options.on_step(row);
    result.log.push_back(row);
  }
  result.steps = cfg.optim.steps;
  if (log) {
    log.flush();
    if (!log) throw StorageError("failed writing log " + options.log_path.string());
  }
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(Checkpoint::capture(model.params(), cfg, cfg.optim.steps), options.checkpoint_path);
  }
  return result;
}

template <class T>
std::vector<PredictionSet<T>> infer_video(const FaqModel<T>& model, const VideoClip& clip) {
  return model.infer_clip(clip);
}

template <class T>
MetricsReport evaluate_model(const FaqModel<T>& model, const std::vector<VideoClip>& data) {
  std::vector<std::vector<FrameDetections>> dets;
  dets.reserve(data.size());
  for (const auto& clip : data) {
    std::vector<FrameDetections> per_frame;
    for (const auto& p : model.infer_clip(clip)) per_frame.push_back(to_detections(p, model.config().score_thr));
    dets.push_back(std::move(per_frame));
  }
  EvalOptions opts;
  opts.score_thr = model.config().score_thr;
  return evaluate(dets, data, model.config().detr.num_classes, opts);
}

std::unique_ptr<FaqModel<float>> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<FaqModel<float>>(ckpt.config);
  ckpt.restore(model->params());
  return model;
}

template class AdamW<float>;
template class AdamW<double>;
template TrainResult train(FaqModel<float>&, const std::vector<VideoClip>&, const TrainOptions&);
template TrainResult train(FaqModel<double>&, const std::vector<VideoClip>&, const TrainOptions&);
template std::vector<PredictionSet<float>> infer_video(const FaqModel<float>&, const VideoClip&);
template std::vector<PredictionSet<double>> infer_video(const FaqModel<double>&, const VideoClip&);
template MetricsReport evaluate_model(const FaqModel<float>&, const std::vector<VideoClip>&);
template MetricsReport evaluate_model(const FaqModel<double>&, const std::vector<VideoClip>&);

}  // namespace faq
