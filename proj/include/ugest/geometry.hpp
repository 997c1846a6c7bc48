#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "ugest/error.hpp"

namespace ugest {

/// Axis-aligned box in continuous pixel coordinates (pixel i spans [i, i+1)).
struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double diagonal() const { return std::hypot(width(), height()); }
  bool valid() const { return x0 < x1 && y0 < y1; }

  BoundingBox clamped(double w, double h) const {
    return {std::clamp(x0, 0.0, w), std::clamp(y0, 0.0, h), std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h)};
  }
  BoundingBox united(const BoundingBox& o) const {
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
  }
  bool inside(double w, double h) const { return x0 >= 0 && y0 >= 0 && x1 <= w && y1 <= h; }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const BoundingBox inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double i = inter.valid() ? inter.area() : 0.0;
  const double u = a.area() + b.area() - i;
  return u > 0 ? i / u : 0.0;
}

}  // namespace ugest
