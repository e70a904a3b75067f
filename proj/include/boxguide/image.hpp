#pragma once

#include "boxguide/nn.hpp"
#include "boxguide/unique_mask.hpp"

#include <map>
#include <string>

namespace boxguide {

/// RGB image in [0,1]; `pixels` is (height * width, 3), row-major over pixels.
struct Image {
  int height = 0;
  int width = 0;
  nn::Matrix pixels;

  static Image filled(int height, int width, float r, float g, float b);
  float& operator()(int y, int x, int c) { return pixels(static_cast<Eigen::Index>(y) * width + x, c); }
  float operator()(int y, int x, int c) const { return pixels(static_cast<Eigen::Index>(y) * width + x, c); }
};

/// 8-bit RGB PNG; `text` entries become tEXt chunks. Throws std::runtime_error.
void write_png(const std::string& path, const Image& image, const std::map<std::string, std::string>& text = {});
Image read_png(const std::string& path);
std::map<std::string, std::string> read_png_text(const std::string& path);

/// Binary P5 PGM (0 / 255) with `comment` lines in the header.
void write_pgm(const std::string& path, const BinaryMask& mask, const std::string& comment = "");
BinaryMask read_pgm(const std::string& path);

}  // namespace boxguide
