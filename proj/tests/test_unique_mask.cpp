#include "oracles.hpp"

#include <boxguide/unique_mask.hpp>

#include <doctest.h>

using namespace boxguide;

namespace {

bool masks_equal(const BinaryMask& a, const BinaryMask& b) { return (a.array() == b.array()).all(); }

void check_invariants(const UniqueMaskSet& set) {
  const auto n = set.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = i + 1; k < n; ++k) CHECK(((set.masks[i].array() * set.masks[k].array()) == 0).all());
    CHECK((set.masks[i].array() <= set.raw_masks[i].array()).all());
    for (int y = 0; y < set.resolution.height; ++y)
      for (int x = 0; x < set.resolution.width; ++x)
        if (set.masks[i](y, x)) {
          CHECK(set.argmax_map(y, x) == static_cast<int>(i) + 1);
          CHECK(set.raw_masks[i](y, x) == 1);
        }
  }
}

}  // namespace

TEST_CASE("rasterization examples") {
  CHECK((rasterize_box(Box<double>{0.5, 0.5, 1, 1}, {8, 8}).array() == 1).all());

  const auto quarter = rasterize_box(Box<double>{0.25, 0.25, 0.5, 0.5}, {8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(quarter(y, x) == ((x <= 3 && y <= 3) ? 1 : 0));

  const auto tiny = rasterize_box(Box<double>{0.5, 0.5, 0.01, 0.01}, {16, 16});
  CHECK(tiny.cast<int>().sum() == 1);
  CHECK(tiny(8, 8) == 1);
}

TEST_CASE("rasterization matches cell-centre containment on random boxes") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = oracle::random_box(rng);
    const int h = 5 + trial % 20, w = 3 + trial % 17;
    const auto m = rasterize_box(b, {h, w});
    int set = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double px = (x + 0.5) / w, py = (y + 0.5) / h;
        const bool inside = px >= b.cx - b.w / 2 && px <= b.cx + b.w / 2 && py >= b.cy - b.h / 2 &&
                            py <= b.cy + b.h / 2;
        set += m(y, x);
        if (inside) CHECK(m(y, x) == 1);
      }
    CHECK(set >= 1);
  }
}

TEST_CASE("gaussian field spot values and peak") {
  const Box<double> b{0.5, 0.5, 0.5, 0.5};
  const auto g = gaussian_field(b, {16, 16});
  const int pts[5][2] = {{0, 0}, {7, 7}, {8, 3}, {15, 2}, {11, 12}};
  for (const auto& p : pts) CHECK(g(p[1], p[0]) == doctest::Approx(oracle::gaussian_at(b, 16, 16, p[0], p[1])).epsilon(1e-13));
  const double nu = 0.5 * 16 / 2;
  CHECK(g.maxCoeff() <= 1.0 / std::sqrt(2 * 3.14159265358979323846 * nu * nu));

  // A centre on a cell centre gives exactly the normalisation constant there.
  const Box<double> c{4.5 / 16, 6.5 / 16, 0.25, 0.375};
  const auto gc = gaussian_field(c, {16, 16});
  const double peak = 1.0 / std::sqrt(2 * 3.14159265358979323846 * (0.25 * 16 / 2) * (0.375 * 16 / 2));
  CHECK(gc(6, 4) == doctest::Approx(peak).epsilon(1e-14));
  CHECK(gc.maxCoeff() == gc(6, 4));
}

TEST_CASE("gaussian field is translation equivariant by whole cells") {
  const Box<double> b{0.3, 0.4, 0.2, 0.3};
  const Box<double> shifted{0.3 + 3.0 / 32, 0.4 + 2.0 / 32, 0.2, 0.3};
  const auto g = gaussian_field(b, {32, 32});
  const auto s = gaussian_field(shifted, {32, 32});
  for (int y = 0; y + 2 < 32; ++y)
    for (int x = 0; x + 3 < 32; ++x) CHECK(s(y + 2, x + 3) == doctest::Approx(g(y, x)).epsilon(1e-12));
}

TEST_CASE("standard convention uses squared scales") {
  const Box<double> b{0.5, 0.5, 0.5, 0.25};
  const auto g = gaussian_field(b, {8, 8}, GaussianConvention::standard);
  const double s1 = 2.0, s2 = 1.0, dx = 0.5 + 0 - 4.0, dy = 0.5 + 1 - 4.0;
  const double expect = 1.0 / (2 * 3.14159265358979323846 * s1 * s2) *
                        std::exp(-0.5 * (dx * dx / (s1 * s1) + dy * dy / (s2 * s2)));
  CHECK(g(1, 0) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("unique masks: single box, identical boxes, overlapping pair") {
  const Box<double> a{0.4, 0.6, 0.3, 0.5};
  const auto one = unique_masks({a}, {16, 16});
  CHECK(masks_equal(one.masks[0], one.raw_masks[0]));
  CHECK((one.argmax_map.array() == 1).all());

  const auto twin = unique_masks({a, a}, {16, 16});
  CHECK(masks_equal(twin.masks[0], twin.raw_masks[0]));
  CHECK((twin.masks[1].array() == 0).all());

  const Box<double> l{0.35, 0.5, 0.4, 0.4}, r{0.65, 0.5, 0.4, 0.4};
  const auto pair = unique_masks({l, r}, {32, 32});
  check_invariants(pair);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double g0 = oracle::gaussian_at(l, 32, 32, x, y), g1 = oracle::gaussian_at(r, 32, 32, x, y);
      const int owner = g1 > g0 ? 1 : 0;
      CHECK(pair.masks[owner](y, x) == (pair.raw_masks[owner](y, x) ? 1 : 0));
      CHECK(pair.masks[1 - owner](y, x) == 0);
    }
}

TEST_CASE("mirrored disjoint boxes keep their raw masks") {
  const Box<double> l{0.25, 0.5, 0.3, 0.3}, r{0.75, 0.5, 0.3, 0.3};
  const auto set = unique_masks({l, r}, {16, 16});
  CHECK(masks_equal(set.masks[0], set.raw_masks[0]));
  CHECK(masks_equal(set.masks[1], set.raw_masks[1]));
}

TEST_CASE("unique mask invariants on random box sets") {
  std::mt19937_64 rng(43);
  const int sizes[] = {8, 16, 64};
  for (int trial = 0; trial < 150; ++trial) {
    const int n = 1 + trial % 6;
    std::vector<Box<double>> boxes;
    for (int k = 0; k < n; ++k) boxes.push_back(oracle::random_box(rng));
    const int s = sizes[trial % 3];
    check_invariants(unique_masks(boxes, {s, s}));
  }
}

TEST_CASE("permuting boxes permutes masks") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Box<double>> boxes{oracle::random_box(rng), oracle::random_box(rng), oracle::random_box(rng)};
    const auto fwd = unique_masks(boxes, {16, 16});
    const auto rev = unique_masks({boxes[2], boxes[1], boxes[0]}, {16, 16});
    for (int k = 0; k < 3; ++k) CHECK(masks_equal(fwd.masks[k], rev.masks[2 - k]));
  }
}

TEST_CASE("empty box list is rejected and flatten is row-major") {
  CHECK_THROWS_AS(unique_masks({}, {8, 8}), std::invalid_argument);
  BinaryMask m = BinaryMask::Zero(2, 3);
  m(1, 0) = 1;
  const auto f = flatten(m);
  REQUIRE(f.size() == 6);
  CHECK(f(3) == 1.0f);
  CHECK(f.sum() == 1.0f);
}
