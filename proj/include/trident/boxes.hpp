#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "trident/common.hpp"

namespace trident {

/// Axis-aligned box in input pixels: top-left corner plus extents.
struct BoxXYWH {
  Real x = 0.0;
  Real y = 0.0;
  Real w = 0.0;
  Real h = 0.0;

  Real area() const { return w * h; }
  // Object scale sqrt(w*h).
  Real scale() const { return std::sqrt(w * h); }
  Real cx() const { return x + 0.5 * w; }
  Real cy() const { return y + 0.5 * h; }
  bool valid() const { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(w * h); }

  static BoxXYWH from_center(Real cx, Real cy, Real w, Real h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  bool operator==(const BoxXYWH&) const = default;
};

inline void validate_box(const BoxXYWH& b, const char* what = "box") {
  require(b.valid(), what, " is degenerate: x=", b.x, " y=", b.y, " w=", b.w, " h=", b.h);
}

/// Closed scale interval [lower, upper]; upper may be +infinity.
struct ValidRange {
  Real lower = 0.0;
  Real upper = std::numeric_limits<Real>::infinity();

  static ValidRange unbounded() { return {}; }

  void validate() const {
    require(lower >= 0.0 && lower <= upper && !std::isnan(upper), "invalid scale range [", lower, ", ", upper, "]");
  }
  bool contains(Real scale) const { return lower <= scale && scale <= upper; }

  bool operator==(const ValidRange&) const = default;
};

// A box belongs to a branch iff lower <= sqrt(w*h) <= upper (both ends inclusive).
inline bool is_valid(const BoxXYWH& box, const ValidRange& range) { return range.contains(box.scale()); }

inline Real iou(const BoxXYWH& a, const BoxXYWH& b) {
  Real ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  Real iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  Real inter = ix * iy;
  Real uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct GroundTruth {
  BoxXYWH box;
  int class_id = 0;

  bool operator==(const GroundTruth&) const = default;
};

struct Detection {
  BoxXYWH box;
  Real score = 0.0;
  int class_id = 0;
  int branch = 0;

  bool operator==(const Detection&) const = default;
};

}  // namespace trident
