#include "oracles.hpp"

#include <boxguide/attn_control.hpp>

#include <doctest.h>

using namespace boxguide;

namespace {

UniqueMaskSet set_from(std::vector<BinaryMask> masks, Resolution hw) {
  UniqueMaskSet s;
  s.resolution = hw;
  s.raw_masks = masks;
  s.masks = std::move(masks);
  return s;
}

nn::Matrix softmax_rows(const nn::Matrix& logits) {
  nn::Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const float mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

nn::Matrix random_attention(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 2.0f);
  return softmax_rows(nn::Matrix::NullaryExpr(rows, cols, [&] { return n(rng); }));
}

bool bit_equal(const nn::Matrix& a, const nn::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

}  // namespace

TEST_CASE("cross mask worked example") {
  BinaryMask m(2, 2);
  m << 1, 0, 0, 0;
  ControlPlan plan;
  plan.token_sets = {{1}};
  plan.masks_by_resolution[{2, 2}] = set_from({m}, {2, 2});
  AttentionMap c{nn::Matrix::Constant(4, 3, 0.25f), {2, 2}};
  c.data.col(0).setConstant(0.5f);
  const auto out = apply_cross_mask(c, plan);
  for (int r = 0; r < 4; ++r) {
    CHECK(out.data(r, 0) == 0.5f);
    CHECK(out.data(r, 2) == 0.25f);
    CHECK(out.data(r, 1) == (r == 0 ? 0.25f : 0.0f));
  }
}

TEST_CASE("cross mask identity, annihilator and range errors") {
  std::mt19937_64 rng(3);
  AttentionMap c{random_attention(16, 5, rng), {4, 4}};
  ControlPlan ones;
  ones.token_sets = {{1, 2}};
  ones.masks_by_resolution[{4, 4}] = set_from({BinaryMask::Ones(4, 4)}, {4, 4});
  CHECK(bit_equal(apply_cross_mask(c, ones).data, c.data));

  ControlPlan zeros = ones;
  zeros.masks_by_resolution[{4, 4}] = set_from({BinaryMask::Zero(4, 4)}, {4, 4});
  const auto z = apply_cross_mask(c, zeros);
  CHECK((z.data.col(1).array() == 0).all());
  CHECK((z.data.col(2).array() == 0).all());
  for (int k : {0, 3, 4}) CHECK(bit_equal(z.data.col(k), c.data.col(k)));

  ControlPlan bad = ones;
  bad.token_sets = {{5}};
  CHECK_THROWS_AS(apply_cross_mask(c, bad), std::invalid_argument);
  AttentionMap other{random_attention(64, 5, rng), {8, 8}};
  CHECK_THROWS_AS(apply_cross_mask(other, ones), std::invalid_argument);
}

TEST_CASE("self mask worked example") {
  BinaryMask m(2, 2);
  m << 1, 1, 0, 0;
  ControlPlan plan;
  plan.token_sets = {{0}};
  plan.masks_by_resolution[{2, 2}] = set_from({m}, {2, 2});
  std::mt19937_64 rng(5);
  AttentionMap s{random_attention(4, 4, rng), {2, 2}};
  const auto out = apply_self_mask(s, plan);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) {
      if (k < 2 && r >= 2) {
        CHECK(out.data(r, k) == 0.0f);
      } else {
        CHECK(out.data(r, k) == s.data(r, k));
      }
    }

  ControlOptions transposed;
  transposed.transpose_self = true;
  const auto t = apply_self_mask(s, plan, transposed);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) CHECK(t.data(r, k) == ((r < 2 && k >= 2) ? 0.0f : s.data(r, k)));

  AttentionMap rect{nn::Matrix::Zero(4, 3), {2, 2}};
  CHECK_THROWS_AS(apply_self_mask(rect, plan), std::invalid_argument);

  ControlPlan empty;
  CHECK(bit_equal(apply_self_mask(s, empty).data, s.data));
  ControlPlan full;
  full.token_sets = {{0}};
  full.masks_by_resolution[{2, 2}] = set_from({BinaryMask::Ones(2, 2)}, {2, 2});
  CHECK(bit_equal(apply_self_mask(s, full).data, s.data));
}

TEST_CASE("control properties on random plans") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int side = trial % 2 ? 8 : 4;
    const Resolution hw{side, side};
    const int n = 1 + trial % 3;
    std::vector<Box<double>> boxes;
    ControlPlan plan;
    const int tokens = 3 * n + 2;
    for (int k = 0; k < n; ++k) {
      boxes.push_back(oracle::random_box(rng));
      plan.token_sets.push_back({3 * k, 3 * k + 1});
    }
    plan.masks_by_resolution[hw] = unique_masks(boxes, hw);
    const auto& masks = plan.masks_by_resolution[hw].masks;

    AttentionMap c{random_attention(side * side, tokens, rng), hw};
    const auto once = apply_cross_mask(c, plan);
    CHECK(bit_equal(apply_cross_mask(once, plan).data, once.data));
    for (int k = 0; k < n; ++k)
      for (int col : plan.token_sets[k])
        for (int r = 0; r < side * side; ++r) {
          if (masks[k].data()[r]) {
            CHECK(once.data(r, col) == c.data(r, col));
          } else {
            CHECK(once.data(r, col) == 0.0f);
          }
        }
    for (int col = 0; col < tokens; ++col)
      if (col % 3 == 2) CHECK(bit_equal(once.data.col(col), c.data.col(col)));
    const Eigen::VectorXf sums = once.data.rowwise().sum();
    CHECK((sums.array() >= 0.0f).all());
    CHECK((sums.array() <= 1.0f + 1e-6f).all());

    AttentionMap s{random_attention(side * side, side * side, rng), hw};
    const auto so = apply_self_mask(s, plan);
    CHECK(bit_equal(apply_self_mask(so, plan).data, so.data));
    for (int key = 0; key < side * side; ++key) {
      int owner = -1;
      for (int k = 0; k < n; ++k)
        if (masks[k].data()[key]) owner = k;
      for (int q = 0; q < side * side; ++q) {
        if (owner < 0 || masks[owner].data()[q]) {
          CHECK(so.data(q, key) == s.data(q, key));
        } else {
          CHECK(so.data(q, key) == 0.0f);
        }
      }
    }

    // Entity order does not matter.
    if (n >= 2) {
      ControlPlan a, b;
      a.token_sets = {plan.token_sets[0]};
      b.token_sets = {plan.token_sets[1]};
      const auto& full = plan.masks_by_resolution[hw];
      a.masks_by_resolution[hw] = set_from({full.masks[0]}, hw);
      b.masks_by_resolution[hw] = set_from({full.masks[1]}, hw);
      const auto ab = apply_self_mask(apply_self_mask(s, a), b);
      const auto ba = apply_self_mask(apply_self_mask(s, b), a);
      CHECK(bit_equal(ab.data, ba.data));
      const auto cab = apply_cross_mask(apply_cross_mask(c, a), b);
      const auto cba = apply_cross_mask(apply_cross_mask(c, b), a);
      CHECK(bit_equal(cab.data, cba.data));
    }
  }
}

TEST_CASE("renormalisation restores unit row sums where mass remains") {
  std::mt19937_64 rng(9);
  BinaryMask m = BinaryMask::Zero(2, 2);
  m(0, 0) = 1;
  ControlPlan plan;
  plan.token_sets = {{0}};
  plan.masks_by_resolution[{2, 2}] = set_from({m}, {2, 2});
  ControlOptions opts;
  opts.renormalize = true;
  const auto out = apply_cross_mask(AttentionMap{random_attention(4, 3, rng), {2, 2}}, plan, opts);
  for (int r = 0; r < 4; ++r) CHECK(out.data.row(r).sum() == doctest::Approx(1.0f));
}

namespace {

class FakeDenoiser : public ControllableDenoiser {
 public:
  std::vector<AttentionLayerInfo> attention_layers() const override {
    return {{"down.cross", AttentionKind::cross, {4, 4}}, {"down.self", AttentionKind::self, {4, 4}},
            {"mid.cross", AttentionKind::cross, {2, 2}}};
  }
  int add_attention_hook(AttentionHook hook) override {
    hooks_[next_] = std::move(hook);
    return next_++;
  }
  void remove_attention_hook(int id) override { hooks_.erase(id); }
  std::size_t hook_count() const override { return hooks_.size(); }

  void run(AttentionMap& map, const AttentionLayerInfo& info) {
    for (auto& [id, hook] : hooks_) hook(map, info);
  }

 private:
  std::map<int, AttentionHook> hooks_;
  int next_ = 0;
};

}  // namespace

TEST_CASE("hook registration, scoping and release") {
  FakeDenoiser d;
  ControlPlan plan;
  plan.token_sets = {{0}};
  plan.masks_by_resolution[{4, 4}] = unique_masks({Box<double>{0.25, 0.25, 0.5, 0.5}}, {4, 4});
  CHECK_THROWS_AS(register_hooks(d, plan, ControlScope::cross), std::invalid_argument);
  // Self layers only live at 4x4, so self scope is satisfiable.
  std::vector<AttentionStats> seen;
  {
    auto handle = register_hooks(d, plan, ControlScope::self, {}, [&](const AttentionStats& s) { seen.push_back(s); });
    CHECK(d.hook_count() == 1);
    std::mt19937_64 rng(1);
    AttentionMap cross{random_attention(16, 3, rng), {4, 4}};
    const auto cross_before = cross.data;
    d.run(cross, {"down.cross", AttentionKind::cross, {4, 4}});
    CHECK(bit_equal(cross.data, cross_before));
    AttentionMap self{random_attention(16, 16, rng), {4, 4}};
    d.run(self, {"down.self", AttentionKind::self, {4, 4}});
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].pre_rowsum_mean == doctest::Approx(1.0));
    CHECK(seen[0].post_rowsum_max <= 1.0 + 1e-6);
    CHECK(seen[0].masked_fraction > 0.0);
    auto moved = std::move(handle);
    CHECK(d.hook_count() == 1);
  }
  CHECK(d.hook_count() == 0);

  plan.masks_by_resolution[{2, 2}] = unique_masks({Box<double>{0.25, 0.25, 0.5, 0.5}}, {2, 2});
  auto both = register_hooks(d, plan, ControlScope::both);
  CHECK(d.hook_count() == 1);
  both.release();
  CHECK(d.hook_count() == 0);
  CHECK_FALSE(both.active());
}
