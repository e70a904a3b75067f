#include <boxguide/checkpoint.hpp>
#include <boxguide/common.hpp>
#include <boxguide/config.hpp>
#include <boxguide/image.hpp>
#include <boxguide/shapes.hpp>

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace boxguide;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "boxguide_unit";
  fs::create_directories(dir);
  return dir;
}

std::string random_text(std::mt19937_64& rng) {
  static const std::string alphabet = "ab =\"\\\t,.xyz019";
  std::uniform_int_distribution<int> len(0, 12), pick(0, static_cast<int>(alphabet.size()) - 1);
  std::string s;
  for (int i = len(rng); i > 0; --i) s += alphabet[pick(rng)];
  return s;
}

}  // namespace

TEST_CASE("record round trip on random keys and values") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Record r;
    const int n = static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) r.emplace_back("k" + std::to_string(i), random_text(rng));
    const Record back = parse_record(format_record(r));
    REQUIRE(back.size() == r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(back[i].first == r[i].first);
      CHECK(back[i].second == r[i].second);
    }
  }
  CHECK_THROWS_AS(record_value(Record{{"a", "1"}}, "b"), std::out_of_range);
  CHECK_THROWS_AS(parse_record("a=\"unterminated"), std::invalid_argument);
}

TEST_CASE("format_double reads back exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 200; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("warmup cosine schedule") {
  CHECK(warmup_cosine_lr(0, 10, 100, 1.0) == 0.0);
  CHECK(warmup_cosine_lr(5, 10, 100, 1.0) == doctest::Approx(0.5));
  CHECK(warmup_cosine_lr(10, 10, 100, 1.0) == doctest::Approx(1.0));
  CHECK(warmup_cosine_lr(55, 10, 100, 1.0) == doctest::Approx(0.5));
  CHECK(warmup_cosine_lr(100, 10, 100, 1.0) == doctest::Approx(0.0));
  double prev = 2.0;
  for (int s = 10; s <= 100; ++s) {
    const double lr = warmup_cosine_lr(s, 10, 100, 1.0);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
}

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 4; ++b) seen.insert(derive_seed(7, a, b));
  CHECK(seen.size() == 200);
  CHECK(derive_seed(7, 1, 2) == derive_seed(7, 1, 2));
}

TEST_CASE("config sections, overlay and hash") {
  const Config c = Config::parse_text("top = 1\n[train]\nlr = 0.5\n# comment\nname = a b\n");
  CHECK(c.get_int("top", 0) == 1);
  CHECK(c.get_double("train.lr", 0) == 0.5);
  CHECK(c.get("train.name") == "a b");
  CHECK(c.section("train").has("lr"));

  Config d = c;
  d.merge(Config::parse_text("[train]\nlr = 0.25\n"));
  CHECK(d.get_double("train.lr", 0) == 0.25);
  CHECK(d.hash() != c.hash());
  CHECK(Config::parse_text(c.to_text()).hash() == c.hash());
  CHECK_THROWS_AS(Config::parse_text("[train\n"), std::runtime_error);
}

TEST_CASE("checkpoint round trip and corruption") {
  Checkpoint ckpt;
  ckpt.config_text = "a = 1\n";
  nn::Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, -6.5f;
  ckpt.tensors.emplace_back("w", m);
  ckpt.tensors.emplace_back("x.b", nn::Matrix::Constant(1, 1, 0.25f));
  const auto path = (scratch_dir() / "ck.bin").string();
  write_checkpoint(path, ckpt);
  const Checkpoint back = read_checkpoint(path);
  CHECK(back.config_text == ckpt.config_text);
  REQUIRE(back.find("w"));
  CHECK(back.find("w")->isApprox(m));
  CHECK(back.with_prefix("x.").size() == 1);

  fs::resize_file(path, fs::file_size(path) - 3);
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(read_checkpoint((scratch_dir() / "missing.bin").string()), std::runtime_error);
}

TEST_CASE("png and pgm round trip") {
  Image img = Image::filled(5, 7, 0.0f, 0.5f, 1.0f);
  img(2, 3, 0) = 1.0f;
  const auto png = (scratch_dir() / "a.png").string();
  write_png(png, img, {{"config_hash", "abc"}});
  const Image back = read_png(png);
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK((back.pixels - img.pixels).cwiseAbs().maxCoeff() <= 1.0f / 255.0f);
  CHECK(read_png_text(png).at("config_hash") == "abc");

  BinaryMask mask = BinaryMask::Zero(4, 6);
  mask(1, 2) = 1;
  mask(3, 5) = 1;
  const auto pgm = (scratch_dir() / "a.pgm").string();
  write_pgm(pgm, mask, "config_hash=abc");
  CHECK((read_pgm(pgm).array() == mask.array()).all());
}

TEST_CASE("random scenes respect their options") {
  std::mt19937_64 rng(5);
  SceneOptions opt;
  for (int i = 0; i < 200; ++i) {
    const Scene s = random_scene(rng, opt);
    REQUIRE(s.shapes.size() >= 1);
    REQUIRE(s.shapes.size() <= 3);
    std::set<int> colors;
    for (const auto& sh : s.shapes) {
      CHECK(is_valid(sh.box));
      colors.insert(sh.color);
      const double side = sh.box.w * opt.image_size;
      CHECK(side >= opt.min_side - 1e-9);
      CHECK(side <= opt.max_side + 1e-9);
    }
    CHECK(colors.size() == s.shapes.size());
    for (std::size_t a = 0; a < s.shapes.size(); ++a)
      for (std::size_t b = a + 1; b < s.shapes.size(); ++b)
        CHECK(iou(to_corners(s.shapes[a].box), to_corners(s.shapes[b].box)) == 0.0);
  }
}

TEST_CASE("captions and rendering") {
  Scene s;
  s.shapes.push_back({ShapeKind::square, palette_index("red"), Box<double>{0.25, 0.25, 0.25, 0.25}});
  s.shapes.push_back({ShapeKind::circle, palette_index("blue"), Box<double>{0.75, 0.75, 0.25, 0.25}});
  CHECK(caption(s) == "a red square and a blue circle");
  const Image img = render(s);
  const auto red = palette()[palette_index("red")].rgb;
  for (int c = 0; c < 3; ++c) CHECK(img(16, 16, c) == doctest::Approx(red[c]).epsilon(1e-6));
  const auto bg = background_color();
  for (int c = 0; c < 3; ++c) CHECK(img(1, 62, c) == doctest::Approx(bg[c]).epsilon(1e-6));

  std::mt19937_64 rng(1);
  const std::string shuffled = shuffled_caption(s, rng);
  CHECK(shuffled == "a blue square and a red circle");
  CHECK_THROWS_AS(shape_from_name("hexagon"), std::invalid_argument);
}
