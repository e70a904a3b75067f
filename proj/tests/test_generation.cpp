#include <boxguide/generation.hpp>

#include <doctest.h>

#include "fixtures.hpp"

#include <sstream>

using namespace boxguide;

namespace {

struct Fixture {
  ToyStack stack{ToyStackConfig{}, 5};
  BoxNet boxnet{BoxNetConfig{}, 6};
  Fixture() { fixture::jitter(stack.params(), 7); }
};

GenerationOptions with(ControlMode mode) {
  GenerationOptions o;
  o.control = mode;
  return o;
}

}  // namespace

TEST_CASE("control names") {
  for (auto m : {ControlMode::off, ControlMode::cross, ControlMode::self, ControlMode::both})
    CHECK(control_from_name(to_string(m)) == m);
  CHECK_THROWS_AS(control_from_name("sideways"), std::invalid_argument);
}

TEST_CASE("uncontrolled generation is a pure function of prompt and seed") {
  Fixture f;
  Generator gen(f.stack, nullptr);
  const auto a = gen.generate("a red square and a blue circle", 3);
  const auto b = gen.generate("a red square and a blue circle", 3);
  const auto c = gen.generate("a red square and a blue circle", 4);
  CHECK(a.latent.data == b.latent.data);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.latent.data != c.latent.data);
  CHECK(a.latent.data.allFinite());
  CHECK(a.image.height == 64);
  CHECK(static_cast<int>(a.trace.steps.size()) == f.stack.scheduler().steps());
}

TEST_CASE("all-ones masks reproduce the uncontrolled run bit for bit") {
  Fixture f;
  Generator gen(f.stack, &f.boxnet);
  GenerationOptions ones = with(ControlMode::both);
  ones.all_ones_masks = true;
  const auto off = gen.generate("a red square and a blue circle", 11);
  const auto ctl = gen.generate("a red square and a blue circle", 11, ones);
  CHECK(ctl.latent.data == off.latent.data);
  CHECK(ctl.image.pixels == off.image.pixels);
  CHECK(f.stack.unet().hook_count() == 0);

  const auto real = gen.generate("a red square and a blue circle", 11, with(ControlMode::both));
  CHECK(real.latent.data != off.latent.data);
}

TEST_CASE("controlled trace has one record per step with N boxes") {
  Fixture f;
  Generator gen(f.stack, &f.boxnet);
  gen.set_config_hash("feedbeef");
  const auto r = gen.generate("a red square and a blue circle", 2, with(ControlMode::both));
  const int T = f.stack.scheduler().steps();
  REQUIRE(static_cast<int>(r.trace.steps.size()) == T);
  for (int i = 0; i < T; ++i) {
    const StepRecord& s = r.trace.steps[i];
    CHECK(s.t == T - i);
    CHECK(s.boxes.size() == 2);
    CHECK(s.mask_cells.size() == 2);
    CHECK(s.controlled);
    CHECK(s.rowsum_post_max <= 1.0 + 1e-5);
    CHECK(s.rowsum_post_min >= 0.0);
    for (const auto& b : s.boxes) CHECK(is_valid(b));
  }
  CHECK(r.trace.effective == ControlMode::both);
  CHECK(r.trace.config_hash == "feedbeef");
  CHECK(f.stack.unet().hook_count() == 0);

  std::stringstream io;
  write_trace(io, r.trace);
  const GenerationTrace back = read_trace(io);
  CHECK(back.prompt == r.trace.prompt);
  CHECK(back.steps.size() == r.trace.steps.size());
  CHECK(back.steps[3].boxes == r.trace.steps[3].boxes);
  CHECK(back.entities == r.trace.entities);
}

TEST_CASE("step range limits where control applies") {
  Fixture f;
  Generator gen(f.stack, &f.boxnet);
  GenerationOptions o = with(ControlMode::cross);
  o.control_min_t = 30;
  o.control_max_t = 40;
  const auto r = gen.generate("a red square and a blue circle", 2, o);
  for (const auto& s : r.trace.steps) CHECK(s.controlled == (s.t >= 30 && s.t <= 40));
}

TEST_CASE("prompts without entities fall back to uncontrolled") {
  Fixture f;
  Generator gen(f.stack, &f.boxnet);
  const auto r = gen.generate("something abstract", 1, with(ControlMode::both));
  CHECK(r.trace.effective == ControlMode::off);
  CHECK(r.trace.warnings.size() == 1);
  const auto off = gen.generate("something abstract", 1);
  CHECK(r.latent.data == off.latent.data);
}

TEST_CASE("control without a BoxNet is rejected and leaves no hooks") {
  Fixture f;
  CHECK_THROWS_AS(generate("a red square", 1, ControlMode::cross, f.stack, nullptr), std::invalid_argument);
  CHECK(f.stack.unet().hook_count() == 0);
}

TEST_CASE("ancestral sampling is seeded") {
  Fixture f;
  Generator gen(f.stack, nullptr);
  GenerationOptions o;
  o.ancestral = true;
  const auto a = gen.generate("a red square", 1, o);
  const auto b = gen.generate("a red square", 1, o);
  const auto det = gen.generate("a red square", 1);
  CHECK(a.latent.data == b.latent.data);
  CHECK(a.latent.data != det.latent.data);
}
