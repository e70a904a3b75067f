#include "boxguide/unique_mask.hpp"

#include <spdlog/spdlog.h>

#include <stdexcept>

namespace boxguide {

UniqueMaskSet unique_masks(const std::vector<Box<double>>& boxes, Resolution hw,
                           GaussianConvention convention) {
  if (boxes.empty()) throw std::invalid_argument("unique_masks: at least one box required");
  if (hw.height < 1 || hw.width < 1) throw std::invalid_argument("unique_masks: empty resolution");

  UniqueMaskSet out;
  out.resolution = hw;
  for (const auto& box : boxes) {
    out.raw_masks.push_back(rasterize_box(box, hw));
    out.fields.push_back(gaussian_field(box, hw, convention));
  }

  out.argmax_map = IndexMap::Ones(hw.height, hw.width);
  for (int y = 0; y < hw.height; ++y) {
    for (int x = 0; x < hw.width; ++x) {
      double best = out.fields[0](y, x);
      for (std::size_t n = 1; n < boxes.size(); ++n) {
        if (out.fields[n](y, x) > best) {
          best = out.fields[n](y, x);
          out.argmax_map(y, x) = static_cast<int>(n) + 1;
        }
      }
    }
  }

  for (std::size_t n = 0; n < boxes.size(); ++n) {
    BinaryMask m = BinaryMask::Zero(hw.height, hw.width);
    const int label = static_cast<int>(n) + 1;
    for (int y = 0; y < hw.height; ++y) {
      for (int x = 0; x < hw.width; ++x) {
        m(y, x) = (out.argmax_map(y, x) == label && out.raw_masks[n](y, x)) ? 1 : 0;
      }
    }
    if ((m.array() == 0).all()) {
      spdlog::warn("entity {} has an empty unique mask at {}x{}", n, hw.height, hw.width);
    }
    out.masks.push_back(std::move(m));
  }
  return out;
}

Eigen::VectorXf flatten(const BinaryMask& mask) {
  Eigen::VectorXf out(mask.size());
  for (Eigen::Index i = 0; i < mask.size(); ++i) out(i) = static_cast<float>(mask.data()[i]);
  return out;
}

}  // namespace boxguide
