#include "faq_agg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace faq {

IouGiou iou_giou(const Box& a, const Box& b) {
  if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) {
    throw ValidationError("iou_giou: boxes must have positive width and height");
  }
  const auto r = detail::iou_giou_generic<double>({a.cx, a.cy, a.w, a.h}, {b.cx, b.cy, b.w, b.h});
  return {r[0], r[1]};
}

void LossWeights::validate() const {
  if (cls < 0 || l1 < 0 || giou < 0) throw ValidationError("loss weights must be non-negative");
  if (!(noobj > 0)) throw ValidationError("loss.noobj_weight must be positive");
}

namespace {

template <class T>
std::vector<double> row_softmax(const Tensor<T>& logits, int row) {
  const int nc = logits.dim(1);
  std::vector<double> p(static_cast<std::size_t>(nc));
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < nc; ++c) mx = std::max(mx, static_cast<double>(logits(row, c)));
  double s = 0.0;
  for (int c = 0; c < nc; ++c) s += p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits(row, c)) - mx);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

template <class T>
Eigen::MatrixXd pairwise_cost(const PredictionSet<T>& preds, const FrameAnnotation& gts, const LossWeights& w) {
  const int k = preds.size();
  const int g = static_cast<int>(gts.boxes.size());
  if (gts.classes.size() != gts.boxes.size()) throw ValidationError("pairwise_cost: boxes and classes differ in length");
  Eigen::MatrixXd cost(k, g);
  const Tensor<T>& bv = preds.boxes.value();
  const Tensor<T>& lv = preds.class_logits.value();
  for (int i = 0; i < k; ++i) {
    const auto p = row_softmax(lv, i);
    const Box bi{bv(i, 0), bv(i, 1), bv(i, 2), bv(i, 3)};
    for (int j = 0; j < g; ++j) {
      const Box& bj = gts.boxes[static_cast<std::size_t>(j)];
      const int cj = gts.classes[static_cast<std::size_t>(j)];
      if (cj < 0 || cj >= preds.num_classes()) throw ValidationError("pairwise_cost: class id out of range");
      const double l1 = std::abs(bi.cx - bj.cx) + std::abs(bi.cy - bj.cy) + std::abs(bi.w - bj.w) + std::abs(bi.h - bj.h);
      const double giou = detail::iou_giou_generic<double>({bi.cx, bi.cy, bi.w, bi.h}, {bj.cx, bj.cy, bj.w, bj.h})[1];
      cost(i, j) = -w.cls * p[static_cast<std::size_t>(cj)] + w.l1 * l1 + w.giou * (1.0 - giou);
    }
  }
  return cost;
}

Assignment hungarian(const Eigen::MatrixXd& cost) {
  Assignment out;
  const bool transposed = cost.rows() > cost.cols();
  const Eigen::MatrixXd a = transposed ? Eigen::MatrixXd(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  if (n == 0) return out;
  // Shortest augmenting paths with potentials; rows are matched one at a time.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int row = p[j] - 1, col = j - 1;
    out.pairs.push_back(transposed ? ag::MatchPair{col, row} : ag::MatchPair{row, col});
    out.total_cost += cost(transposed ? col : row, transposed ? row : col);
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& x, const auto& y) { return x.query < y.query; });
  return out;
}

template <class T>
LossBreakdown<T> assignment_loss(const PredictionSet<T>& preds, const FrameAnnotation& gts,
                                 const std::vector<ag::MatchPair>& pairs, const LossWeights& w,
                                 const std::string& branch) {
  const int k = preds.size();
  const int nc = preds.num_classes();
  std::vector<int> targets(static_cast<std::size_t>(k), nc);
  for (const auto& pr : pairs) {
    if (pr.query < 0 || pr.query >= k || pr.target < 0 || pr.target >= static_cast<int>(gts.boxes.size())) {
      throw ValidationError("assignment_loss: pair out of range");
    }
    targets[static_cast<std::size_t>(pr.query)] = gts.classes[static_cast<std::size_t>(pr.target)];
  }
  std::vector<T> class_weight(static_cast<std::size_t>(nc + 1), T(1));
  class_weight.back() = static_cast<T>(w.noobj);
  const T norm = static_cast<T>(std::max<std::size_t>(gts.boxes.size(), 1));

  const ag::Var<T> ce = ag::cross_entropy(preds.class_logits, std::span<const int>(targets),
                                          std::span<const T>(class_weight));
  const ag::Var<T> l1 = ag::matched_l1(preds.boxes, std::span<const ag::MatchPair>(pairs),
                                       std::span<const Box>(gts.boxes), norm);
  const ag::Var<T> giou = ag::matched_giou(preds.boxes, std::span<const ag::MatchPair>(pairs),
                                           std::span<const Box>(gts.boxes), norm);
  LossBreakdown<T> out;
  out.total = ag::add_n<T>({ag::scale(ce, static_cast<T>(w.cls)), ag::scale(l1, static_cast<T>(w.l1)),
                            ag::scale(giou, static_cast<T>(w.giou))});
  out.classification = static_cast<double>(ce.item());
  out.box_l1 = static_cast<double>(l1.item());
  out.giou = static_cast<double>(giou.item());
  out.branch = branch;
  return out;
}

template <class T>
LossBreakdown<T> hungarian_loss(const PredictionSet<T>& preds, const FrameAnnotation& gts, const LossWeights& w,
                                const std::string& branch) {
  const Assignment a = hungarian(pairwise_cost(preds, gts, w));
  return assignment_loss(preds, gts, a.pairs, w, branch);
}

template <class T>
LossBreakdown<T> dual_loss(const PredictionSet<T>& p_dynamic, const PredictionSet<T>& p_basic,
                           const FrameAnnotation& gts, double gamma, const LossWeights& w) {
  if (!(gamma >= 0.0)) throw ValidationError("dual_loss: gamma must be non-negative");
  LossBreakdown<T> d = hungarian_loss(p_dynamic, gts, w, "dynamic");
  LossBreakdown<T> b = hungarian_loss(p_basic, gts, w, "basic");
  LossBreakdown<T> out;
  out.total = ag::add(d.total, ag::scale(b.total, static_cast<T>(gamma)));
  out.classification = d.classification + gamma * b.classification;
  out.box_l1 = d.box_l1 + gamma * b.box_l1;
  out.giou = d.giou + gamma * b.giou;
  out.branch = "dynamic+basic";
  out.parts = {std::move(d), std::move(b)};
  return out;
}

#define FAQ_INSTANTIATE_MATCHING(T)                                                                              \
  template Eigen::MatrixXd pairwise_cost(const PredictionSet<T>&, const FrameAnnotation&, const LossWeights&);   \
  template LossBreakdown<T> assignment_loss(const PredictionSet<T>&, const FrameAnnotation&,                     \
                                            const std::vector<ag::MatchPair>&, const LossWeights&,               \
                                            const std::string&);                                                 \
  template LossBreakdown<T> hungarian_loss(const PredictionSet<T>&, const FrameAnnotation&, const LossWeights&, \
                                           const std::string&);                                                  \
  template LossBreakdown<T> dual_loss(const PredictionSet<T>&, const PredictionSet<T>&, const FrameAnnotation&,  \
                                      double, const LossWeights&);

FAQ_INSTANTIATE_MATCHING(float)
FAQ_INSTANTIATE_MATCHING(double)

}  // namespace faq
