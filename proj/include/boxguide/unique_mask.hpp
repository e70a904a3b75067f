#pragma once

// Per-entity binary masks made pairwise disjoint: every cell is kept only by
// the entity whose box-shaped Gaussian field is largest there.

#include "boxguide/box.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace boxguide {

using BinaryMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMap = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Field = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Resolution {
  int height = 0;
  int width = 0;

  friend bool operator==(const Resolution&, const Resolution&) = default;
  friend auto operator<=>(const Resolution&, const Resolution&) = default;
};

/// `paper`: nu = w/2 used directly as the exponent denominator with joint
/// normalization 1/sqrt(2*pi*nu1*nu2). `standard`: nu treated as a standard
/// deviation (denominator nu^2, normalization 1/(2*pi*nu1*nu2)).
enum class GaussianConvention { paper, standard };

/// Cell (x, y) is set iff its center ((x+0.5)/W, (y+0.5)/H) lies in the box
/// (edges inclusive). The cell holding the box center is set if nothing else is.
template <typename Scalar>
BinaryMask rasterize_box(const Box<Scalar>& box, Resolution hw) {
  BinaryMask mask = BinaryMask::Zero(hw.height, hw.width);
  const Scalar x0 = box.cx - box.w / 2, x1 = box.cx + box.w / 2;
  const Scalar y0 = box.cy - box.h / 2, y1 = box.cy + box.h / 2;
  bool any = false;
  for (int y = 0; y < hw.height; ++y) {
    const Scalar py = (Scalar(y) + Scalar(0.5)) / Scalar(hw.height);
    if (py < y0 || py > y1) continue;
    for (int x = 0; x < hw.width; ++x) {
      const Scalar px = (Scalar(x) + Scalar(0.5)) / Scalar(hw.width);
      if (px >= x0 && px <= x1) {
        mask(y, x) = 1;
        any = true;
      }
    }
  }
  if (!any) {
    const int x = std::clamp(static_cast<int>(std::floor(box.cx * Scalar(hw.width))), 0, hw.width - 1);
    const int y = std::clamp(static_cast<int>(std::floor(box.cy * Scalar(hw.height))), 0, hw.height - 1);
    mask(y, x) = 1;
  }
  return mask;
}

/// Axis-aligned Gaussian evaluated at cell centers in grid units
/// (x = ix + 0.5, c_x = cx * W, nu1 = w * W / 2, and likewise vertically).
template <typename Scalar>
Field<Scalar> gaussian_field(const Box<Scalar>& box, Resolution hw,
                             GaussianConvention convention = GaussianConvention::paper) {
  const Scalar cx = box.cx * Scalar(hw.width);
  const Scalar cy = box.cy * Scalar(hw.height);
  const Scalar nu1 = box.w * Scalar(hw.width) / 2;
  const Scalar nu2 = box.h * Scalar(hw.height) / 2;
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar norm, den1, den2;
  if (convention == GaussianConvention::paper) {
    norm = Scalar(1) / std::sqrt(two_pi * nu1 * nu2);
    den1 = nu1;
    den2 = nu2;
  } else {
    norm = Scalar(1) / (two_pi * nu1 * nu2);
    den1 = nu1 * nu1;
    den2 = nu2 * nu2;
  }
  Field<Scalar> g(hw.height, hw.width);
  for (int y = 0; y < hw.height; ++y) {
    const Scalar dy = Scalar(y) + Scalar(0.5) - cy;
    for (int x = 0; x < hw.width; ++x) {
      const Scalar dx = Scalar(x) + Scalar(0.5) - cx;
      g(y, x) = norm * std::exp(Scalar(-0.5) * (dx * dx / den1 + dy * dy / den2));
    }
  }
  return g;
}

struct UniqueMaskSet {
  std::vector<BinaryMask> masks;      // disjoint per-entity masks
  std::vector<BinaryMask> raw_masks;  // rasterized boxes
  std::vector<Field<double>> fields;  // per-entity Gaussian fields
  IndexMap argmax_map;                // 1-based entity index of the largest field
  Resolution resolution;

  std::size_t size() const { return masks.size(); }
};

/// Requires at least one box. Ties in the argmax go to the lowest index.
UniqueMaskSet unique_masks(const std::vector<Box<double>>& boxes, Resolution hw,
                           GaussianConvention convention = GaussianConvention::paper);

/// Row-major flattening, index = y * W + x.
Eigen::VectorXf flatten(const BinaryMask& mask);

}  // namespace boxguide
