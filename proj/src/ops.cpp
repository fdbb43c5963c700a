#include "faq_agg/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>

namespace faq::ag {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;
template <class T>
using StridedM = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedM = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <class T>
MapM<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return MapM<T>(t.data(), rows, cols);
}
template <class T>
CMapM<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return CMapM<T>(t.data(), rows, cols);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// Rows and columns when treating the tensor as a matrix over its last axis.
template <class T>
std::pair<int, int> rows_cols(const Tensor<T>& t) {
  if (t.rank() == 0) return {1, 1};
  const int cols = t.dim(t.rank() - 1);
  const int rows = cols == 0 ? 0 : static_cast<int>(t.size() / static_cast<std::size_t>(cols));
  return {rows, cols};
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= s;
  return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

template <class T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "add_n: empty input");
  Tensor<T> out = xs[0].value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(xs[0], xs[k], "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xs[k].value()[i];
  }
  return make_result<T>(std::move(out), xs, [](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : g->values()) v += self.grad[0];
    }
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Tensor<T> out(Shape{n, m});
  as_mat(out, n, m).noalias() = as_mat(a.value(), n, k) * as_mat(b.value(), k, m);
  return make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    auto dc = as_mat(std::as_const(self.grad), n, m);
    if (auto* g = parent_grad(self, 0)) {
      as_mat(*g, n, k).noalias() += dc * as_mat(std::as_const(self.parents[1]->value), k, m).transpose();
    }
    if (auto* g = parent_grad(self, 1)) {
      as_mat(*g, k, m).noalias() += as_mat(std::as_const(self.parents[0]->value), n, k).transpose() * dc;
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require(weight.rank() == 2, "linear: weight must be (in, out)");
  const int in = weight.dim(0), outd = weight.dim(1);
  require(bias.numel() == static_cast<std::size_t>(outd), "linear: bias size mismatch");
  const bool vec = x.rank() == 1;
  require(x.value().size() % static_cast<std::size_t>(in) == 0 && (vec ? x.dim(0) == in : x.dim(x.rank() - 1) == in),
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  const int n = vec ? 1 : static_cast<int>(x.numel() / static_cast<std::size_t>(in));
  Shape shape = vec ? Shape{outd} : Shape{n, outd};
  Tensor<T> out(shape);
  auto y = as_mat(out, n, outd);
  y.noalias() = as_mat(x.value(), n, in) * as_mat(weight.value(), in, outd);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), outd);
  return make_result<T>(std::move(out), {x, weight, bias}, [n, in, outd](Node<T>& self) {
    auto dy = as_mat(std::as_const(self.grad), n, outd);
    if (auto* g = parent_grad(self, 0)) {
      as_mat(*g, n, in).noalias() += dy * as_mat(std::as_const(self.parents[1]->value), in, outd).transpose();
    }
    if (auto* g = parent_grad(self, 1)) {
      as_mat(*g, in, outd).noalias() += as_mat(std::as_const(self.parents[0]->value), n, in).transpose() * dy;
    }
    if (auto* g = parent_grad(self, 2)) {
      as_mat(*g, 1, outd) += dy.colwise().sum();
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (self.value[i] > T{0}) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T y = self.value[i];
        (*g)[i] += self.grad[i] * y * (T{1} - y);
      }
    }
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto [rows, cols] = rows_cols(x.value());
  require(gamma.numel() == static_cast<std::size_t>(cols) && beta.numel() == static_cast<std::size_t>(cols),
          "layer_norm: affine size mismatch");
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  const T* xs = x.value().data();
  for (int r = 0; r < rows; ++r) {
    const T* row = xs + static_cast<std::size_t>(r) * cols;
    T mean{0};
    for (int c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<T>(cols);
    T var{0};
    for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(cols);
    const T rs = T{1} / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const T h = (row[c] - mean) * rs;
      (*xhat)[i] = h;
      out[i] = h * gamma.value()[static_cast<std::size_t>(c)] + beta.value()[static_cast<std::size_t>(c)];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [rows, cols, xhat, rstd](Node<T>& self) {
    const Tensor<T>& g = self.parents[1]->value;
    auto* gx = parent_grad(self, 0);
    auto* gg = parent_grad(self, 1);
    auto* gb = parent_grad(self, 2);
    std::vector<T> dxhat(static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      T mean_d{0}, mean_dx{0};
      for (int c = 0; c < cols; ++c) {
        const T dy = self.grad[base + c];
        if (gg) (*gg)[static_cast<std::size_t>(c)] += dy * (*xhat)[base + c];
        if (gb) (*gb)[static_cast<std::size_t>(c)] += dy;
        dxhat[static_cast<std::size_t>(c)] = dy * g[static_cast<std::size_t>(c)];
        mean_d += dxhat[static_cast<std::size_t>(c)];
        mean_dx += dxhat[static_cast<std::size_t>(c)] * (*xhat)[base + c];
      }
      if (!gx) continue;
      mean_d /= static_cast<T>(cols);
      mean_dx /= static_cast<T>(cols);
      const T rs = (*rstd)[static_cast<std::size_t>(r)];
      for (int c = 0; c < cols; ++c) {
        (*gx)[base + c] += rs * (dxhat[static_cast<std::size_t>(c)] - mean_d - (*xhat)[base + c] * mean_dx);
      }
    }
  });
}

template <class T>
Var<T> softmax(const Var<T>& x) {
  const auto [rows, cols] = rows_cols(x.value());
  Tensor<T> out(x.shape());
  for (int r = 0; r < rows; ++r) {
    const T* in = x.value().data() + static_cast<std::size_t>(r) * cols;
    T* o = out.data() + static_cast<std::size_t>(r) * cols;
    T mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    T s{0};
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    for (int c = 0; c < cols; ++c) o[c] /= s;
  }
  return make_result<T>(std::move(out), {x}, [rows, cols](Node<T>& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      T dot{0};
      for (int c = 0; c < cols; ++c) dot += self.grad[base + c] * self.value[base + c];
      for (int c = 0; c < cols; ++c) (*g)[base + c] += self.value[base + c] * (self.grad[base + c] - dot);
    }
  });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: rank-2 inputs required");
  const int nq = q.dim(0), nk = k.dim(0), f = q.dim(1);
  require(k.dim(1) == f && v.dim(1) == f && v.dim(0) == nk, "attention: width or length mismatch");
  require(heads > 0 && f % heads == 0, "attention: width not divisible by heads");
  const int dh = f / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(heads));
  Tensor<T> out(Shape{nq, f});
  const Eigen::OuterStride<> stride(f);
  for (int h = 0; h < heads; ++h) {
    CStridedM<T> qh(q.value().data() + h * dh, nq, dh, stride);
    CStridedM<T> kh(k.value().data() + h * dh, nk, dh, stride);
    CStridedM<T> vh(v.value().data() + h * dh, nk, dh, stride);
    Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
    p.noalias() = (qh * kh.transpose()) * sc;
    for (int i = 0; i < nq; ++i) {
      const T mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    StridedM<T> oh(out.data() + h * dh, nq, dh, stride);
    oh.noalias() = p * vh;
  }
  return make_result<T>(std::move(out), {q, k, v}, [=](Node<T>& self) {
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    const Eigen::OuterStride<> st(f);
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
      CStridedM<T> dout(self.grad.data() + h * dh, nq, dh, st);
      CStridedM<T> qh(self.parents[0]->value.data() + h * dh, nq, dh, st);
      CStridedM<T> kh(self.parents[1]->value.data() + h * dh, nk, dh, st);
      CStridedM<T> vh(self.parents[2]->value.data() + h * dh, nk, dh, st);
      if (gv) {
        StridedM<T> dv(gv->data() + h * dh, nk, dh, st);
        dv.noalias() += p.transpose() * dout;
      }
      if (!gq && !gk) continue;
      Mat<T> dp = dout * vh.transpose();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
      Mat<T> ds = p.array() * (dp.colwise() - rowdot).array();
      ds *= sc;
      if (gq) {
        StridedM<T> dq(gq->data() + h * dh, nq, dh, st);
        dq.noalias() += ds * kh;
      }
      if (gk) {
        StridedM<T> dk(gk->data() + h * dh, nk, dh, st);
        dk.noalias() += ds.transpose() * qh;
      }
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  require(x.rank() == 3 && weight.rank() == 4, "conv2d: expects x (c,h,w) and weight (o,c,kh,kw)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == c, "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                  shape_str(weight.shape()));
  require(bias.numel() == static_cast<std::size_t>(o), "conv2d: bias size mismatch");
  require(stride > 0 && pad >= 0, "conv2d: invalid stride/padding");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d: input smaller than kernel");
  const int ckk = c * kh * kw, hw = oh * ow;

  auto cols = std::make_shared<Mat<T>>(Mat<T>::Zero(ckk, hw));
  const T* xin = x.value().data();
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols->data() + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * hw;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = xin + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kx;
            if (ix >= 0 && ix < w) row[y * ow + xo] = src[ix];
          }
        }
      }
    }
  }
  Tensor<T> out(Shape{o, oh, ow});
  auto y = as_mat(out, o, hw);
  y.noalias() = as_mat(weight.value(), o, ckk) * (*cols);
  y.colwise() += as_mat(bias.value(), o, 1).col(0);
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto dy = as_mat(std::as_const(self.grad), o, hw);
    if (auto* g = parent_grad(self, 1)) as_mat(*g, o, ckk).noalias() += dy * cols->transpose();
    if (auto* g = parent_grad(self, 2)) as_mat(*g, o, 1).col(0) += dy.rowwise().sum();
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    Mat<T> dcols = as_mat(std::as_const(self.parents[1]->value), o, ckk).transpose() * dy;
    T* dx = gx->data();
    for (int ci = 0; ci < c; ++ci) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const T* row = dcols.data() + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * hw;
          for (int yy = 0; yy < oh; ++yy) {
            const int iy = yy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            T* dst = dx + (static_cast<std::size_t>(ci) * h + iy) * w;
            for (int xo = 0; xo < ow; ++xo) {
              const int ix = xo * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[ix] += row[yy * ow + xo];
            }
          }
        }
      }
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& x) {
  require(x.rank() == 2, "transpose: rank-2 input required");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> out(Shape{c, r});
  as_mat(out, c, r) = as_mat(x.value(), r, c).transpose();
  return make_result<T>(std::move(out), {x}, [r, c](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) as_mat(*g, r, c) += as_mat(std::as_const(self.grad), c, r).transpose();
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> spatial_mean(const Var<T>& x) {
  require(x.rank() == 3, "spatial_mean: expects (c, h, w)");
  const int c = x.dim(0);
  const int hw = x.dim(1) * x.dim(2);
  require(hw > 0, "global pooling over an empty spatial extent");
  Tensor<T> out(Shape{c});
  as_mat(out, c, 1).col(0) = as_mat(x.value(), c, hw).rowwise().mean();
  return make_result<T>(std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T inv = T{1} / static_cast<T>(hw);
      auto gm = as_mat(*g, c, hw);
      for (int i = 0; i < c; ++i) gm.row(i).array() += self.grad[static_cast<std::size_t>(i)] * inv;
    }
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  std::size_t total = 0;
  for (const auto& x : xs) total += x.numel();
  Tensor<T> out(Shape{static_cast<int>(total)});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data(), x.value().data() + x.numel(), out.data() + off);
    off += x.numel();
  }
  return make_result<T>(std::move(out), xs, [](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t n = self.parents[p]->value.size();
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

template <class T>
CosineResult<T> cosine_similarity(const Var<T>& a, const Var<T>& b) {
  require(a.numel() == b.numel() && a.numel() > 0, "cosine_similarity: length mismatch");
  const std::size_t n = a.numel();
  T dot{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < n; ++i) {
    dot += a.value()[i] * b.value()[i];
    na += a.value()[i] * a.value()[i];
    nb += b.value()[i] * b.value()[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const bool degenerate = !(na > T{0}) || !(nb > T{0});
  const T cosv = degenerate ? T{0} : dot / (na * nb);
  auto out = make_result<T>(Tensor<T>::scalar(cosv), {a, b}, [=](Node<T>& self) {
    if (degenerate) return;
    const T g = self.grad[0];
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    if (auto* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g * (bv[i] / (na * nb) - cosv * av[i] / (na * na));
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g * (av[i] / (na * nb) - cosv * bv[i] / (nb * nb));
    }
  });
  return {out, degenerate};
}

template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& w) {
  require(!xs.empty(), "weighted_sum: empty input");
  require(w.numel() == xs.size(), "weighted_sum: " + std::to_string(w.numel()) + " weights for " +
                                      std::to_string(xs.size()) + " inputs");
  Tensor<T> out(xs[0].shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require(xs[k].shape() == xs[0].shape(), "weighted_sum: shape mismatch across inputs");
    const T wk = w.value()[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * xs[k].value()[i];
  }
  std::vector<Var<T>> inputs = xs;
  inputs.push_back(w);
  const std::size_t l = xs.size();
  return make_result<T>(std::move(out), inputs, [l](Node<T>& self) {
    const Tensor<T>& wv = self.parents[l]->value;
    auto* gw = parent_grad(self, l);
    for (std::size_t k = 0; k < l; ++k) {
      const Tensor<T>& xv = self.parents[k]->value;
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += wv[k] * self.grad[i];
      }
      if (gw) {
        T s{0};
        for (std::size_t i = 0; i < xv.size(); ++i) s += self.grad[i] * xv[i];
        (*gw)[k] += s;
      }
    }
  });
}

template <class T>
Var<T> group_combine(const Var<T>& basic, const Var<T>& v, std::span<const int> index) {
  require(basic.rank() == 2 && v.rank() == 2, "group_combine: rank-2 inputs required");
  const int n = basic.dim(0), f = basic.dim(1), r = v.dim(0), m = v.dim(1);
  require(static_cast<long>(r) * m == n, "group_combine: V shape " + shape_str(v.shape()) +
                                             " does not cover " + std::to_string(n) + " basic queries");
  require(index.size() == static_cast<std::size_t>(n), "group_combine: index size mismatch");
  std::vector<int> idx(index.begin(), index.end());
  Tensor<T> out(Shape{m, f});
  for (int g = 0; g < m; ++g) {
    T* o = out.data() + static_cast<std::size_t>(g) * f;
    for (int j = 0; j < r; ++j) {
      const T coef = v.value()(j, g);
      const T* src = basic.value().data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(g * r + j)]) * f;
      for (int c = 0; c < f; ++c) o[c] += coef * src[c];
    }
  }
  return make_result<T>(std::move(out), {basic, v}, [=, idx = std::move(idx)](Node<T>& self) {
    auto* gb = parent_grad(self, 0);
    auto* gv = parent_grad(self, 1);
    const Tensor<T>& bv = self.parents[0]->value;
    const Tensor<T>& vv = self.parents[1]->value;
    for (int g = 0; g < m; ++g) {
      const T* dout = self.grad.data() + static_cast<std::size_t>(g) * f;
      for (int j = 0; j < r; ++j) {
        const std::size_t row = static_cast<std::size_t>(idx[static_cast<std::size_t>(g * r + j)]) * f;
        if (gb) {
          const T coef = vv(j, g);
          for (int c = 0; c < f; ++c) (*gb)[row + c] += coef * dout[c];
        }
        if (gv) {
          T s{0};
          for (int c = 0; c < f; ++c) s += dout[c] * bv[row + c];
          (*gv)(j, g) += s;
        }
      }
    }
  });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> class_weight) {
  require(logits.rank() == 2, "cross_entropy: logits must be (k, classes)");
  const int k = logits.dim(0), nc = logits.dim(1);
  require(targets.size() == static_cast<std::size_t>(k), "cross_entropy: target count mismatch");
  require(class_weight.size() == static_cast<std::size_t>(nc), "cross_entropy: class weight size mismatch");
  auto probs = std::make_shared<Tensor<T>>(Shape{k, nc});
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> cw(class_weight.begin(), class_weight.end());
  T total{0}, wsum{0};
  for (int i = 0; i < k; ++i) {
    const T* row = logits.value().data() + static_cast<std::size_t>(i) * nc;
    const int t = tg[static_cast<std::size_t>(i)];
    require(t >= 0 && t < nc, "cross_entropy: target out of range");
    T mx = row[0];
    for (int c = 1; c < nc; ++c) mx = std::max(mx, row[c]);
    T s{0};
    for (int c = 0; c < nc; ++c) s += std::exp(row[c] - mx);
    const T lse = mx + std::log(s);
    for (int c = 0; c < nc; ++c) (*probs)(i, c) = std::exp(row[c] - lse);
    const T wt = cw[static_cast<std::size_t>(t)];
    total += wt * (lse - row[t]);
    wsum += wt;
  }
  const T value = wsum > T{0} ? total / wsum : T{0};
  return make_result<T>(Tensor<T>::scalar(value), {logits},
                        [=, tg = std::move(tg), cw = std::move(cw)](Node<T>& self) {
                          auto* g = parent_grad(self, 0);
                          if (!g || !(wsum > T{0})) return;
                          const T scale_all = self.grad[0] / wsum;
                          for (int i = 0; i < k; ++i) {
                            const int t = tg[static_cast<std::size_t>(i)];
                            const T s = scale_all * cw[static_cast<std::size_t>(t)];
                            for (int c = 0; c < nc; ++c) {
                              (*g)(i, c) += s * ((*probs)(i, c) - (c == t ? T{1} : T{0}));
                            }
                          }
                        });
}

template <class T>
Var<T> matched_l1(const Var<T>& boxes, std::span<const MatchPair> pairs, std::span<const Box> targets, T norm) {
  require(boxes.rank() == 2 && boxes.dim(1) == 4, "matched_l1: boxes must be (k, 4)");
  std::vector<MatchPair> pr(pairs.begin(), pairs.end());
  std::vector<std::array<T, 4>> tg;
  for (const auto& b : targets) tg.push_back({T(b.cx), T(b.cy), T(b.w), T(b.h)});
  T total{0};
  for (const auto& p : pr) {
    for (int c = 0; c < 4; ++c) total += std::abs(boxes.value()(p.query, c) - tg[static_cast<std::size_t>(p.target)][static_cast<std::size_t>(c)]);
  }
  return make_result<T>(Tensor<T>::scalar(total / norm), {boxes},
                        [pr = std::move(pr), tg = std::move(tg), norm](Node<T>& self) {
                          auto* g = parent_grad(self, 0);
                          if (!g) return;
                          const Tensor<T>& bv = self.parents[0]->value;
                          const T s = self.grad[0] / norm;
                          for (const auto& p : pr) {
                            for (int c = 0; c < 4; ++c) {
                              const T d = bv(p.query, c) - tg[static_cast<std::size_t>(p.target)][static_cast<std::size_t>(c)];
                              (*g)(p.query, c) += d > T{0} ? s : (d < T{0} ? -s : T{0});
                            }
                          }
                        });
}

template <class T>
Var<T> matched_giou(const Var<T>& boxes, std::span<const MatchPair> pairs, std::span<const Box> targets, T norm) {
  require(boxes.rank() == 2 && boxes.dim(1) == 4, "matched_giou: boxes must be (k, 4)");
  using D = faq::detail::Dual<T, 4>;
  std::vector<MatchPair> pr(pairs.begin(), pairs.end());
  auto grads = std::make_shared<std::vector<std::array<T, 4>>>();
  T total{0};
  for (const auto& p : pr) {
    const Box& t = targets[static_cast<std::size_t>(p.target)];
    std::array<D, 4> a;
    for (int c = 0; c < 4; ++c) a[static_cast<std::size_t>(c)] = D::variable(boxes.value()(p.query, c), c);
    const std::array<D, 4> b{D(T(t.cx)), D(T(t.cy)), D(T(t.w)), D(T(t.h))};
    const auto r = faq::detail::iou_giou_generic(a, b);
    total += T{1} - r[1].v;
    grads->push_back(r[1].d);
  }
  return make_result<T>(Tensor<T>::scalar(total / norm), {boxes},
                        [pr = std::move(pr), grads, norm](Node<T>& self) {
                          auto* g = parent_grad(self, 0);
                          if (!g) return;
                          const T s = self.grad[0] / norm;
                          for (std::size_t i = 0; i < pr.size(); ++i) {
                            for (int c = 0; c < 4; ++c) (*g)(pr[i].query, c) -= s * (*grads)[i][static_cast<std::size_t>(c)];
                          }
                        });
}

#define FAQ_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> scale(const Var<T>&, T);                                                             \
  template Var<T> add_n(const std::vector<Var<T>>&);                                                   \
  template Var<T> sum(const Var<T>&);                                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> relu(const Var<T>&);                                                                 \
  template Var<T> sigmoid(const Var<T>&);                                                              \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                          \
  template Var<T> softmax(const Var<T>&);                                                              \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int);                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                       \
  template Var<T> transpose(const Var<T>&);                                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                                       \
  template Var<T> spatial_mean(const Var<T>&);                                                         \
  template Var<T> concat(const std::vector<Var<T>>&);                                                  \
  template CosineResult<T> cosine_similarity(const Var<T>&, const Var<T>&);                            \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const Var<T>&);                             \
  template Var<T> group_combine(const Var<T>&, const Var<T>&, std::span<const int>);                   \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>, std::span<const T>);              \
  template Var<T> matched_l1(const Var<T>&, std::span<const MatchPair>, std::span<const Box>, T);      \
  template Var<T> matched_giou(const Var<T>&, std::span<const MatchPair>, std::span<const Box>, T);

FAQ_INSTANTIATE_OPS(float)
FAQ_INSTANTIATE_OPS(double)

}  // namespace faq::ag
