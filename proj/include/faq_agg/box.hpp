#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace faq {

/// Axis-aligned box in normalized center format.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

struct IouGiou {
  double iou = 0.0;
  double giou = 0.0;
};

/// Throws ValidationError for boxes with non-positive width or height.
IouGiou iou_giou(const Box& a, const Box& b);

namespace detail {

/// Forward-mode dual number carrying N partial derivatives.
template <class T, int N>
struct Dual {
  T v{};
  std::array<T, N> d{};

  Dual() = default;
  Dual(T value) : v(value) {}  // NOLINT: implicit constants are convenient here
  static Dual variable(T value, int i) {
    Dual x(value);
    x.d[static_cast<std::size_t>(i)] = T{1};
    return x;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const T inv2 = T{1} / (b.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv2;
    return r;
  }
  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
};

template <class S>
S value_of(const S& s) {
  return s;
}
template <class T, int N>
T value_of(const Dual<T, N>& s) {
  return s.v;
}

template <class S>
S smin(const S& a, const S& b) {
  return value_of(b) < value_of(a) ? b : a;
}
template <class S>
S smax(const S& a, const S& b) {
  return value_of(a) < value_of(b) ? b : a;
}

/// IoU and GIoU for center-format boxes over any arithmetic-like scalar.
template <class S>
std::array<S, 2> iou_giou_generic(const std::array<S, 4>& a, const std::array<S, 4>& b) {
  const S half(0.5);
  const S ax0 = a[0] - half * a[2], ax1 = a[0] + half * a[2];
  const S ay0 = a[1] - half * a[3], ay1 = a[1] + half * a[3];
  const S bx0 = b[0] - half * b[2], bx1 = b[0] + half * b[2];
  const S by0 = b[1] - half * b[3], by1 = b[1] + half * b[3];
  const S zero(0);
  const S iw = smax(zero, smin(ax1, bx1) - smax(ax0, bx0));
  const S ih = smax(zero, smin(ay1, by1) - smax(ay0, by0));
  const S inter = iw * ih;
  const S uni = a[2] * a[3] + b[2] * b[3] - inter;
  const S iou = inter / uni;
  const S cw = smax(ax1, bx1) - smin(ax0, bx0);
  const S ch = smax(ay1, by1) - smin(ay0, by0);
  const S enclose = cw * ch;
  const S giou = iou - (enclose - uni) / enclose;
  return {iou, giou};
}

}  // namespace detail
}  // namespace faq
