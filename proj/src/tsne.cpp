#include "faq_agg/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "faq_agg/image.hpp"
#include "faq_agg/nn.hpp"

namespace faq {

namespace {

// Row-conditional affinities with a per-row bandwidth found by bisection on
// the entropy, then symmetrized and normalized.
std::vector<double> joint_affinities(const std::vector<std::vector<double>>& x, double perplexity) {
  const std::size_t n = x.size();
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double d = x[i][k] - x[j][k];
        s += d * d;
      }
      d2[i * n + j] = d2[j * n + i] = s;
    }
  }
  const double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0, hsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double v = std::exp(-beta * d2[i * n + j]);
        p[i * n + j] = v;
        sum += v;
        hsum += beta * d2[i * n + j] * v;
      }
      if (sum <= 0.0) {
        beta /= 2.0;
        hi = beta * 2.0;
        continue;
      }
      const double h = std::log(sum) + hsum / sum;
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
      if (std::abs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  std::vector<double> sym(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sym[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
    }
  }
  return sym;
}

}  // namespace

std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points, const TsneOptions& options) {
  const std::size_t n = points.size();
  std::vector<std::array<double, 2>> y(n);
  if (n == 0) return y;
  Rng rng(options.seed);
  for (auto& p : y) p = {rng.normal(0.0, 1e-2), rng.normal(0.0, 1e-2)};
  if (n < 3) return y;
  const double perplexity = std::min(options.perplexity, (n - 1) / 3.0);
  const std::vector<double> p = joint_affinities(points, std::max(perplexity, 1.0));

  std::vector<std::array<double, 2>> vel(n, {0.0, 0.0}), gains(n, {1.0, 1.0});
  std::vector<double> q(n * n);
  for (int it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < 100 ? 12.0 : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      q[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = v;
        qsum += 2.0 * v;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = q[i * n + j];
        const double coef = 4.0 * (exaggeration * p[i * n + j] - w / qsum) * w;
        gx += coef * (y[i][0] - y[j][0]);
        gy += coef * (y[i][1] - y[j][1]);
      }
      const double g[2] = {gx, gy};
      for (int k = 0; k < 2; ++k) {
        gains[i][k] = (g[k] > 0.0) != (vel[i][k] > 0.0) ? gains[i][k] + 0.2 : std::max(gains[i][k] * 0.8, 0.01);
        vel[i][k] = momentum * vel[i][k] - options.learning_rate * gains[i][k] * g[k];
      }
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i][0] += vel[i][0];
      y[i][1] += vel[i][1];
      mx += y[i][0];
      my += y[i][1];
    }
    for (auto& pt : y) {
      pt[0] -= mx / n;
      pt[1] -= my / n;
    }
  }
  return y;
}

void write_scatter_png(const std::filesystem::path& path, const std::vector<std::array<double, 2>>& points,
                       const std::vector<int>& labels, int size) {
  if (labels.size() != points.size()) throw ValidationError("write_scatter_png: label count mismatch");
  Image img(size, size, 255);
  if (!points.empty()) {
    double x0 = points[0][0], x1 = x0, y0 = points[0][1], y1 = y0;
    for (const auto& p : points) {
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
    }
    const double span = std::max({x1 - x0, y1 - y0, 1e-12});
    const int margin = size / 16;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int px = margin + static_cast<int>((points[i][0] - x0) / span * (size - 2 * margin - 1));
      const int py = margin + static_cast<int>((points[i][1] - y0) / span * (size - 2 * margin - 1));
      // Golden-angle hue per label, fixed saturation and value.
      const double hue = std::fmod(labels[i] * 137.508, 360.0) / 60.0;
      const double c = 0.85, xx = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
      double rgb[3];
      const int sector = static_cast<int>(hue);
      const double table[6][3] = {{c, xx, 0}, {xx, c, 0}, {0, c, xx}, {0, xx, c}, {xx, 0, c}, {c, 0, xx}};
      for (int k = 0; k < 3; ++k) rgb[k] = table[sector % 6][k] + 0.1;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int yy = py + dy, xq = px + dx;
          if (yy < 0 || yy >= size || xq < 0 || xq >= size) continue;
          for (int k = 0; k < 3; ++k) {
            img.pixels[(static_cast<std::size_t>(yy) * size + xq) * 3 + k] = static_cast<std::uint8_t>(rgb[k] * 255.0);
          }
        }
      }
    }
  }
  write_png(path, img);
}

}  // namespace faq
