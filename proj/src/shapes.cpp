#include "boxguide/shapes.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace boxguide {

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

ShapeKind shape_from_name(std::string_view name) {
  for (int k = 0; k < kShapeKinds; ++k) {
    if (to_string(static_cast<ShapeKind>(k)) == name) return static_cast<ShapeKind>(k);
  }
  throw std::invalid_argument("unknown shape " + std::string(name));
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors = {
      {"red", {0.90f, 0.10f, 0.10f}},    {"orange", {1.00f, 0.55f, 0.00f}}, {"yellow", {0.95f, 0.90f, 0.10f}},
      {"green", {0.10f, 0.65f, 0.10f}},  {"blue", {0.10f, 0.20f, 0.90f}},   {"purple", {0.55f, 0.10f, 0.70f}},
      {"pink", {1.00f, 0.50f, 0.75f}},   {"brown", {0.50f, 0.30f, 0.10f}},  {"gray", {0.50f, 0.50f, 0.50f}},
      {"black", {0.05f, 0.05f, 0.05f}},  {"white", {0.97f, 0.97f, 0.97f}},
  };
  return colors;
}

int palette_index(std::string_view name) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown color " + std::string(name));
}

Eigen::Vector3f background_color() { return {0.30f, 0.80f, 0.80f}; }

namespace {

struct PixelRect {
  int x0, y0, side;
};

bool overlaps(const PixelRect& a, const PixelRect& b, int margin) {
  return a.x0 < b.x0 + b.side + margin && b.x0 < a.x0 + a.side + margin && a.y0 < b.y0 + b.side + margin &&
         b.y0 < a.y0 + a.side + margin;
}

bool covers(ShapeKind kind, const PixelRect& r, double px, double py) {
  const double x = px - r.x0, y = py - r.y0, s = r.side;
  if (x < 0 || y < 0 || x > s || y > s) return false;
  switch (kind) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: {
      const double dx = x - s / 2, dy = y - s / 2;
      return dx * dx + dy * dy <= s * s / 4;
    }
    case ShapeKind::triangle:
      // Apex at top centre, base along the bottom edge.
      return std::abs(x - s / 2) <= y / 2;
  }
  return false;
}

}  // namespace

Scene random_scene_with(const std::vector<std::pair<ShapeKind, int>>& items, std::mt19937_64& rng,
                        const SceneOptions& options) {
  const int size = options.image_size;
  std::uniform_int_distribution<int> side_dist(options.min_side, options.max_side);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<PixelRect> rects;
    bool ok = true;
    for (std::size_t i = 0; i < items.size() && ok; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 50 && !placed; ++tries) {
        const int side = side_dist(rng);
        std::uniform_int_distribution<int> pos(0, size - side);
        const PixelRect r{pos(rng), pos(rng), side};
        if (std::none_of(rects.begin(), rects.end(), [&](const PixelRect& o) { return overlaps(r, o, options.margin); })) {
          rects.push_back(r);
          placed = true;
        }
      }
      ok = placed;
    }
    if (!ok) continue;
    Scene scene;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& r = rects[i];
      ShapeInstance s;
      s.kind = items[i].first;
      s.color = items[i].second;
      s.box = {(r.x0 + r.side / 2.0) / size, (r.y0 + r.side / 2.0) / size, static_cast<double>(r.side) / size,
               static_cast<double>(r.side) / size};
      scene.shapes.push_back(s);
    }
    return scene;
  }
  throw std::runtime_error("random_scene: could not place shapes");
}

Scene random_scene(std::mt19937_64& rng, const SceneOptions& options) {
  const int n = std::uniform_int_distribution<int>(options.min_shapes, options.max_shapes)(rng);
  std::vector<int> colors(palette().size());
  std::iota(colors.begin(), colors.end(), 0);
  std::shuffle(colors.begin(), colors.end(), rng);
  std::vector<std::pair<ShapeKind, int>> items;
  std::uniform_int_distribution<int> kind(0, kShapeKinds - 1);
  for (int i = 0; i < n; ++i) items.emplace_back(static_cast<ShapeKind>(kind(rng)), colors[i]);
  return random_scene_with(items, rng, options);
}

Image render(const Scene& scene, int image_size) {
  const Eigen::Vector3f bg = background_color();
  Image img = Image::filled(image_size, image_size, bg.x(), bg.y(), bg.z());
  for (const auto& s : scene.shapes) {
    const int side = static_cast<int>(std::lround(s.box.w * image_size));
    const PixelRect r{static_cast<int>(std::lround((s.box.cx - s.box.w / 2) * image_size)),
                      static_cast<int>(std::lround((s.box.cy - s.box.h / 2) * image_size)), side};
    const Eigen::Vector3f c = palette().at(s.color).rgb;
    for (int y = std::max(0, r.y0); y < std::min(image_size, r.y0 + side); ++y)
      for (int x = std::max(0, r.x0); x < std::min(image_size, r.x0 + side); ++x)
        if (covers(s.kind, r, x + 0.5, y + 0.5)) img.pixels.row(static_cast<Eigen::Index>(y) * image_size + x) = c.transpose();
  }
  return img;
}

std::string caption(const std::vector<std::pair<std::string, std::string>>& color_noun) {
  std::string out;
  for (std::size_t i = 0; i < color_noun.size(); ++i) {
    if (i > 0) out += (i + 1 == color_noun.size()) ? " and " : ", ";
    out += "a " + color_noun[i].first + " " + color_noun[i].second;
  }
  return out;
}

std::string caption(const Scene& scene) {
  std::vector<std::pair<std::string, std::string>> parts;
  for (const auto& s : scene.shapes) parts.emplace_back(palette().at(s.color).name, std::string(to_string(s.kind)));
  return caption(parts);
}

std::string shuffled_caption(const Scene& scene, std::mt19937_64& rng) {
  std::vector<int> colors;
  for (const auto& s : scene.shapes) colors.push_back(s.color);
  if (colors.size() == 1) {
    int other = colors[0];
    while (other == colors[0]) other = std::uniform_int_distribution<int>(0, static_cast<int>(palette().size()) - 1)(rng);
    colors[0] = other;
  } else {
    // Rotate by a random non-zero offset so every entity gets a wrong colour.
    const int offset = std::uniform_int_distribution<int>(1, static_cast<int>(colors.size()) - 1)(rng);
    std::rotate(colors.begin(), colors.begin() + offset, colors.end());
  }
  std::vector<std::pair<std::string, std::string>> parts;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    parts.emplace_back(palette().at(colors[i]).name, std::string(to_string(scene.shapes[i].kind)));
  }
  return caption(parts);
}

}  // namespace boxguide
