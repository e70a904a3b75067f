#pragma once

// Procedural scenes of flat coloured shapes with exact box annotations.

#include "boxguide/box.hpp"
#include "boxguide/image.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace boxguide {

enum class ShapeKind { square, circle, triangle };

inline constexpr int kShapeKinds = 3;

std::string_view to_string(ShapeKind kind);
/// Throws std::invalid_argument for an unknown name.
ShapeKind shape_from_name(std::string_view name);

struct PaletteColor {
  std::string name;
  Eigen::Vector3f rgb;
};

/// The 11 attribute colours, in lexicon order.
const std::vector<PaletteColor>& palette();
int palette_index(std::string_view name);
Eigen::Vector3f background_color();

struct ShapeInstance {
  ShapeKind kind = ShapeKind::square;
  int color = 0;  // palette index
  Box<double> box;
};

struct Scene {
  std::vector<ShapeInstance> shapes;
};

struct SceneOptions {
  int image_size = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  int min_side = 14;  // pixels
  int max_side = 28;
  int margin = 2;     // minimum gap between shapes, pixels
};

/// Non-overlapping shapes with distinct colours, pixel-aligned boxes.
Scene random_scene(std::mt19937_64& rng, const SceneOptions& options = {});

/// A scene with the given (kind, colour) list at random positions.
Scene random_scene_with(const std::vector<std::pair<ShapeKind, int>>& items, std::mt19937_64& rng,
                        const SceneOptions& options = {});

Image render(const Scene& scene, int image_size = 64);

/// "a red square", "a red square and a blue circle",
/// "a red square, a blue circle and a green triangle".
std::string caption(const Scene& scene);
std::string caption(const std::vector<std::pair<std::string, std::string>>& color_noun);

/// Caption whose colour words are permuted across entities (a random other
/// colour for a single entity), so colour words no longer match the image.
std::string shuffled_caption(const Scene& scene, std::mt19937_64& rng);

}  // namespace boxguide
