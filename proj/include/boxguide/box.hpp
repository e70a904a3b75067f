#pragma once

#include <algorithm>
#include <cmath>

namespace boxguide {

/// Normalized (cx, cy, w, h) rectangle; all components in [0,1], w and h positive.
template <typename Scalar = double>
struct Box {
  Scalar cx{0.5};
  Scalar cy{0.5};
  Scalar w{1};
  Scalar h{1};

  friend bool operator==(const Box&, const Box&) = default;
};

/// Corner form; well formed when x0 <= x1 and y0 <= y1.
template <typename Scalar = double>
struct CornerBox {
  Scalar x0{0};
  Scalar y0{0};
  Scalar x1{1};
  Scalar y1{1};

  Scalar area() const { return std::max(Scalar(0), x1 - x0) * std::max(Scalar(0), y1 - y0); }
  friend bool operator==(const CornerBox&, const CornerBox&) = default;
};

template <typename Scalar>
bool is_valid(const Box<Scalar>& b) {
  auto unit = [](Scalar v) { return std::isfinite(v) && v >= Scalar(0) && v <= Scalar(1); };
  return unit(b.cx) && unit(b.cy) && unit(b.w) && unit(b.h) && b.w > Scalar(0) && b.h > Scalar(0);
}

/// x0 = cx - w/2 etc., each coordinate clamped to [0,1].
template <typename Scalar>
CornerBox<Scalar> to_corners(const Box<Scalar>& b) {
  auto clamp01 = [](Scalar v) { return std::clamp(v, Scalar(0), Scalar(1)); };
  return {clamp01(b.cx - b.w / 2), clamp01(b.cy - b.h / 2), clamp01(b.cx + b.w / 2),
          clamp01(b.cy + b.h / 2)};
}

template <typename Scalar>
Scalar iou(const CornerBox<Scalar>& a, const CornerBox<Scalar>& b) {
  const Scalar iw = std::max(Scalar(0), std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const Scalar ih = std::max(Scalar(0), std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const Scalar inter = iw * ih;
  const Scalar area_a = a.area();
  const Scalar area_b = b.area();
  if (area_a <= Scalar(0) || area_b <= Scalar(0)) return Scalar(0);
  return inter / (std::min(area_a, area_b) + std::max(area_a, area_b) - inter);
}

/// Generalized IoU: IoU - (hull - union) / hull. The IoU term is 0 when either
/// box has zero area; the enclosing hull is computed normally.
template <typename Scalar>
Scalar giou(const CornerBox<Scalar>& a, const CornerBox<Scalar>& b) {
  const Scalar iw = std::max(Scalar(0), std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const Scalar ih = std::max(Scalar(0), std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const Scalar inter = iw * ih;
  const Scalar uni = std::min(a.area(), b.area()) + std::max(a.area(), b.area()) - inter;
  const Scalar hull = (std::max(a.x1, b.x1) - std::min(a.x0, b.x0)) *
                      (std::max(a.y1, b.y1) - std::min(a.y0, b.y0));
  const Scalar iou_term = iou(a, b);
  if (hull <= Scalar(0)) return iou_term;
  return iou_term - (hull - uni) / hull;
}

template <typename Scalar>
Scalar iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  return iou(to_corners(a), to_corners(b));
}

template <typename Scalar>
Scalar giou(const Box<Scalar>& a, const Box<Scalar>& b) {
  return giou(to_corners(a), to_corners(b));
}

}  // namespace boxguide
