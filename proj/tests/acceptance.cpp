// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include "oracles.hpp"

#include <boxguide/attn_control.hpp>
#include <boxguide/boxnet.hpp>
#include <boxguide/common.hpp>
#include <boxguide/evalbench.hpp>
#include <boxguide/generation.hpp>
#include <boxguide/matching.hpp>
#include <boxguide/prompt_parser.hpp>
#include <boxguide/shapes.hpp>
#include <boxguide/trainer.hpp>
#include <boxguide/unique_mask.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

using namespace boxguide;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

struct Settings {
  std::string stack_path = std::string(BOXGUIDE_MODELS_DIR) + "/toy_stack.ckpt";
  std::string boxnet_path = std::string(BOXGUIDE_MODELS_DIR) + "/boxnet.ckpt";
  int train_scenes = 5000;
  int train_steps = 2000;
  int prompts = 20;
  int seeds = 20;
  double guidance = 1.0;
};

bool bit_equal(const nn::Matrix& a, const nn::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

// ------------------------------------------------------------------ 1

Verdict matching_optimality() {
  Verdict v;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> category(0, 2);
  auto problem = [&](int preds, int gts) {
    MatchProblem p;
    for (int i = 0; i < preds; ++i) p.predictions.push_back({oracle::random_box(rng), category(rng)});
    for (int i = 0; i < gts; ++i) p.ground_truth.push_back({oracle::random_box(rng), category(rng)});
    return p;
  };
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const MatchProblem p = problem(n, n);
    const auto bf = oracle::brute_force_assignment(cost_matrix(p));
    v.require(hungarian_match(p).pairs == bf.pairs, fmt::format("square trial {} differs", trial));
    ++checked;
  }
  std::uniform_int_distribution<int> small(1, 5), extra(1, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const int a = small(rng), b = a + extra(rng);
    const MatchProblem p = trial % 2 ? problem(a, b) : problem(b, a);
    const auto bf = oracle::brute_force_assignment(cost_matrix(p));
    v.require(hungarian_match(p).pairs == bf.pairs, fmt::format("rectangular trial {} differs", trial));
    ++checked;
  }
  if (v.pass) v.detail = fmt::format("{} problems equal to brute force", checked);
  return v;
}

// ------------------------------------------------------------------ 2

Verdict giou_oracle() {
  Verdict v;
  const double same = giou(CornerBox<double>{0, 0, 1, 1}, CornerBox<double>{0, 0, 1, 1});
  const double disjoint = giou(CornerBox<double>{0, 0, 1, 1}, CornerBox<double>{2, 2, 3, 3});
  const double overlap = giou(CornerBox<double>{0, 0, 2, 2}, CornerBox<double>{1, 1, 3, 3});
  v.require(std::abs(same - 1.0) <= 1e-9, fmt::format("identical gave {}", same));
  v.require(std::abs(disjoint + 7.0 / 9.0) <= 1e-9, fmt::format("disjoint gave {}", disjoint));
  v.require(std::abs(overlap + 5.0 / 63.0) <= 1e-9, fmt::format("overlap gave {}", overlap));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double lo = 1.0, hi = -1.0;
  for (int i = 0; i < 10000; ++i) {
    double c[8];
    for (double& x : c) x = u(rng);
    const CornerBox<double> a{std::min(c[0], c[1]), std::min(c[2], c[3]), std::max(c[0], c[1]), std::max(c[2], c[3])};
    const CornerBox<double> b{std::min(c[4], c[5]), std::min(c[6], c[7]), std::max(c[4], c[5]), std::max(c[6], c[7])};
    const double g = giou(a, b);
    lo = std::min(lo, g);
    hi = std::max(hi, g);
    v.require(g > -1.0 && g <= 1.0, fmt::format("pair {} out of range: {}", i, g));
    v.require(g == giou(b, a), fmt::format("pair {} asymmetric", i));
    const double ref = oracle::rect_giou(a.x0, a.y0, a.x1, a.y1, b.x0, b.y0, b.x1, b.y1);
    v.require(std::abs(g - ref) <= 1e-9, fmt::format("pair {} differs from the oracle", i));
  }
  if (v.pass) v.detail = fmt::format("examples exact; 10000 pairs in [{:.4f}, {:.4f}], symmetric", lo, hi);
  return v;
}

// ------------------------------------------------------------------ 3

// Cell-center containment with the center-cell fallback, written out directly.
BinaryMask contained_cells(const Box<double>& b, int s) {
  BinaryMask m = BinaryMask::Zero(s, s);
  bool any = false;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double px = (x + 0.5) / s, py = (y + 0.5) / s;
      if (std::abs(px - b.cx) <= b.w / 2 && std::abs(py - b.cy) <= b.h / 2) m(y, x) = 1, any = true;
    }
  if (!any) m(std::clamp(int(std::floor(b.cy * s)), 0, s - 1), std::clamp(int(std::floor(b.cx * s)), 0, s - 1)) = 1;
  return m;
}

Verdict unique_mask_invariants() {
  Verdict v;
  std::mt19937_64 rng(99);
  const int sizes[] = {8, 16, 64};
  long long near_ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const int s = sizes[trial % 3];
    std::vector<Box<double>> boxes;
    for (int k = 0; k < n; ++k) boxes.push_back(oracle::random_box(rng));
    const UniqueMaskSet set = unique_masks(boxes, {s, s});
    std::vector<BinaryMask> raw;
    for (const auto& b : boxes) raw.push_back(contained_cells(b, s));
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        std::vector<double> g(n);
        for (int k = 0; k < n; ++k) g[k] = oracle::gaussian_at(boxes[k], s, s, x, y);
        const double top = *std::max_element(g.begin(), g.end());
        const int best = static_cast<int>(std::max_element(g.begin(), g.end()) - g.begin());
        int owners = 0;
        for (int k = 0; k < n; ++k) {
          const int m = set.masks[k](y, x);
          owners += m;
          v.require(!m || raw[k](y, x), fmt::format("trial {}: mask {} leaves its box", trial, k));
          const bool expected = raw[k](y, x) && best == k;
          if (m != int(expected)) {
            // Only a floating-point tie between fields may flip ownership.
            const bool tie = std::abs(g[k] - top) <= 1e-12 * top;
            near_ties += tie;
            v.require(tie, fmt::format("trial {}: cell ({}, {}) of entity {} is {} but expected {}", trial, x, y, k, m,
                                       int(expected)));
          }
        }
        v.require(owners <= 1, fmt::format("trial {}: masks overlap at ({}, {})", trial, x, y));
      }
  }
  for (int s : sizes) {
    const Box<double> b = oracle::random_box(rng);
    const UniqueMaskSet one = unique_masks({b}, {s, s});
    v.require(one.masks[0] == contained_cells(b, s), "single box is not the identity");
    const UniqueMaskSet twin = unique_masks({b, b}, {s, s});
    v.require(twin.masks[0] == contained_cells(b, s) && (twin.masks[1].array() == 0).all(),
              "identical boxes do not tie-break to the first");
  }
  if (v.pass)
    v.detail = fmt::format("1000 random sets at 8/16/64 match the argmax oracle ({} float ties); identity and "
                           "tie-break exact",
                           near_ties);
  return v;
}

// ------------------------------------------------------------------ 4

Verdict control_exactness(const Settings& s) {
  Verdict v;
  BoxNetCheckpoint ckpt = BoxNetCheckpoint::load(s.boxnet_path);
  ToyStack& stack = *ckpt.stack;
  ToyUNet& unet = stack.unet();
  const std::string prompt = "a red square and a blue circle";
  const auto spans = parse_entities(prompt, EntityLexicon::builtin(), stack.text().tokenizer()).spans;
  const std::vector<Box<double>> boxes = {{0.3, 0.35, 0.4, 0.45}, {0.65, 0.6, 0.45, 0.4}};
  ControlPlan plan;
  for (const auto& sp : spans) plan.token_sets.push_back(sp.token_indices);
  for (const auto& layer : unet.attention_layers()) plan.masks_by_resolution[layer.hw] = unique_masks(boxes, layer.hw);

  struct Capture {
    AttentionLayerInfo info;
    nn::Matrix pre, post;
  };
  std::vector<Capture> captured;
  nn::NoGradGuard guard;
  std::mt19937_64 rng(5);
  const nn::Tensor z(gaussian_matrix(256, stack.config().autoencoder.latent_channels, rng));
  const nn::Tensor ctx = stack.text().encode(prompt);
  {
    HookHandle pre(&unet, unet.add_attention_hook([&](AttentionMap& m, const AttentionLayerInfo& info) {
      captured.push_back({info, m.data, {}});
    }));
    HookHandle control = register_hooks(unet, plan, ControlScope::both);
    std::size_t next = 0;
    HookHandle post(&unet, unet.add_attention_hook([&](AttentionMap& m, const AttentionLayerInfo&) {
      captured[next++].post = m.data;
    }));
    unet.forward(z, 25, ctx);
  }
  v.require(unet.hook_count() == 0, "hooks left registered");

  long long zeroed = 0, kept = 0;
  for (const auto& c : captured) {
    const UniqueMaskSet& masks = plan.masks_at(c.info.hw);
    // Independent expectation of which entries survive.
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> survive =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(c.pre.rows(), c.pre.cols(), true);
    const int W = c.info.hw.width;
    for (std::size_t n = 0; n < masks.size(); ++n) {
      auto in_mask = [&](nn::Index cell) { return masks.masks[n](cell / W, cell % W) != 0; };
      if (c.info.kind == AttentionKind::cross) {
        for (int tok : plan.token_sets[n])
          for (nn::Index q = 0; q < c.pre.rows(); ++q)
            if (!in_mask(q)) survive(q, tok) = false;
      } else {
        for (nn::Index key = 0; key < c.pre.cols(); ++key) {
          if (!in_mask(key)) continue;
          for (nn::Index q = 0; q < c.pre.rows(); ++q)
            if (!in_mask(q)) survive(q, key) = false;
        }
      }
    }
    for (nn::Index r = 0; r < c.pre.rows(); ++r)
      for (nn::Index k = 0; k < c.pre.cols(); ++k) {
        if (survive(r, k)) {
          ++kept;
          v.require(std::memcmp(&c.pre(r, k), &c.post(r, k), sizeof(float)) == 0,
                    fmt::format("{} entry ({}, {}) changed", c.info.name, r, k));
        } else {
          ++zeroed;
          v.require(c.post(r, k) == 0.0f, fmt::format("{} entry ({}, {}) not zeroed", c.info.name, r, k));
        }
      }
    const AttentionMap pre_map{c.pre, c.info.hw};
    const AttentionMap once =
        c.info.kind == AttentionKind::cross ? apply_cross_mask(pre_map, plan) : apply_self_mask(pre_map, plan);
    const AttentionMap twice =
        c.info.kind == AttentionKind::cross ? apply_cross_mask(once, plan) : apply_self_mask(once, plan);
    v.require(bit_equal(once.data, twice.data), c.info.name + " control is not idempotent");
    v.require(bit_equal(once.data, c.post), c.info.name + " hook output differs from apply_*");
  }
  v.require(!captured.empty(), "no attention maps captured");

  Generator gen(stack, ckpt.boxnet.get());
  GenerationOptions ones;
  ones.control = ControlMode::both;
  ones.all_ones_masks = true;
  ones.guidance = s.guidance;
  GenerationOptions off;
  off.guidance = s.guidance;
  for (std::uint64_t seed : {0, 1}) {
    const auto a = gen.generate(prompt, seed, off);
    const auto b = gen.generate(prompt, seed, ones);
    v.require(bit_equal(a.latent.data, b.latent.data) && bit_equal(a.image.pixels, b.image.pixels),
              fmt::format("all-ones control differs from off at seed {}", seed));
  }
  v.require(unet.hook_count() == 0, "hooks left registered after generation");
  if (v.pass)
    v.detail = fmt::format("{} maps: {} entries zeroed, {} bit-identical; idempotent; all-ones run bit-equal",
                           captured.size(), zeroed, kept);
  return v;
}

// ------------------------------------------------------------------ 5

Verdict gradient_check() {
  Verdict v;
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Box<double> p = oracle::random_box(rng, 0.05), g = oracle::random_box(rng, 0.05);
    const BoxLossGradient grad = box_loss_gradient(p, g);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
      Box<double> lo = p, hi = p;
      double* lc[] = {&lo.cx, &lo.cy, &lo.w, &lo.h};
      double* hc[] = {&hi.cx, &hi.cy, &hi.w, &hi.h};
      *lc[k] -= h;
      *hc[k] += h;
      const double numeric = (oracle::box_loss(hi, g) - oracle::box_loss(lo, g)) / (2 * h);
      const double rel = std::abs(numeric - grad.d_pred[k]) /
                         std::max({std::abs(numeric), std::abs(grad.d_pred[k]), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  v.require(worst < 1e-4, fmt::format("worst relative error {:.3e}", worst));
  if (v.pass) v.detail = fmt::format("100 points, worst relative error {:.2e}", worst);
  return v;
}

// ------------------------------------------------------------------ 6 and 10

struct TrainingOutcome {
  Verdict training, frozen;
};

TrainingOutcome boxnet_training(const Settings& s) {
  TrainingOutcome out;
  const auto data = make_shape_dataset(s.train_scenes, 11);
  TrainConfig cfg;
  cfg.total_steps = s.train_steps;
  cfg.checkpoint_every = 0;
  cfg.seed = 11;
  TrainState state = fresh_state(ToyStack::load(s.stack_path), cfg);
  const std::uint64_t stack_before = state.model.stack->checksum();
  TrainRunOptions opts;
  opts.progress = [](long long step, double loss, double lr) {
    if ((step + 1) % 250 == 0) spdlog::info("boxnet step {} loss {:.4f} lr {:.2e}", step + 1, loss, lr);
  };
  train(data, cfg, state, opts);
  const auto& meta = state.model.meta;
  const double ratio = meta.last_loss / meta.first_loss;
  out.training.require(ratio < 0.5, fmt::format("loss ratio {:.3f} (first {:.4f}, last {:.4f})", ratio,
                                                meta.first_loss, meta.last_loss));
  const auto held_out = make_shape_dataset(200, 0x4e1d);
  const int max_t = state.model.stack->scheduler().steps() / 4;
  const BoxEvalResult eval = evaluate_boxes(*state.model.boxnet, *state.model.stack, held_out, max_t, 3);
  out.training.require(eval.mean_iou >= 0.5, fmt::format("held-out mean IoU {:.3f} < 0.5", eval.mean_iou));
  if (out.training.pass)
    out.training.detail = fmt::format("{} scenes, {} steps: loss {:.4f} -> {:.4f} ({:.1f}%); held-out IoU {:.3f} at t<={}",
                                      s.train_scenes, s.train_steps, meta.first_loss, meta.last_loss, 100 * ratio,
                                      eval.mean_iou, max_t);
  else
    out.training.detail += fmt::format("; held-out IoU {:.3f}, loss {:.4f} -> {:.4f}", eval.mean_iou, meta.first_loss,
                                       meta.last_loss);

  const std::uint64_t stack_after = state.model.stack->checksum();
  out.frozen.require(stack_after == stack_before,
                     fmt::format("stack checksum {} -> {}", hex64(stack_before), hex64(stack_after)));
  out.frozen.require(!state.model.stack->params().any_grad(), "stack parameters hold gradients");
  if (out.frozen.pass) out.frozen.detail = fmt::format("stack checksum {} unchanged over the run", hex64(stack_after));
  return out;
}

// ------------------------------------------------------------------ 7

Verdict directional_replication(const Settings& s) {
  Verdict v;
  BoxNetCheckpoint ckpt = BoxNetCheckpoint::load(s.boxnet_path);
  Generator gen(*ckpt.stack, ckpt.boxnet.get());
  SyntheticOracle oracle;
  std::vector<std::string> prompts;
  for (const auto& p : toy_prompts(s.prompts, 2025)) prompts.push_back(p.text);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < s.seeds; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
  std::map<ControlMode, EvalReport> reports;
  for (ControlMode mode : {ControlMode::off, ControlMode::cross, ControlMode::both}) {
    GenerationOptions o;
    o.control = mode;
    o.guidance = s.guidance;
    reports[mode] = evaluate([&](const std::string& p, std::uint64_t seed) { return gen.generate(p, seed, o).image; },
                             prompts, seeds, oracle, std::string(to_string(mode)));
    spdlog::info("control={} mean {:.4f} std {:.4f}", to_string(mode), reports[mode].mean, reports[mode].std);
  }
  const double off = reports[ControlMode::off].mean, cross = reports[ControlMode::cross].mean,
               both = reports[ControlMode::both].mean;
  for (const auto& [mode, r] : reports) v.require(r.failures == 0, fmt::format("{} generation failures", r.failures));
  const std::string summary = fmt::format("{}x{}: off {:.4f} ± {:.4f}, cross {:.4f} ± {:.4f}, both {:.4f} ± {:.4f}",
                                          prompts.size(), seeds.size(), off, reports[ControlMode::off].std, cross,
                                          reports[ControlMode::cross].std, both, reports[ControlMode::both].std);
  v.require(both > cross && cross > off && both - off >= 0.05, "ordering or margin not met; " + summary);
  if (v.pass) v.detail = summary + fmt::format("; both - off = {:.4f}", both - off);
  return v;
}

// Informational: where the red square lands relative to entity 1's final box.
std::string red_square_placement(const Settings& s, int seeds) {
  BoxNetCheckpoint ckpt = BoxNetCheckpoint::load(s.boxnet_path);
  Generator gen(*ckpt.stack, ckpt.boxnet.get());
  GenerationOptions o;
  o.control = ControlMode::both;
  o.guidance = s.guidance;
  const Eigen::Vector3f red = palette()[palette_index("red")].rgb;
  int inside = 0, found = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto r = gen.generate("a red square and a blue circle", static_cast<std::uint64_t>(seed), o);
    double sx = 0, sy = 0;
    int count = 0;
    for (int y = 0; y < r.image.height; ++y)
      for (int x = 0; x < r.image.width; ++x) {
        const Eigen::Vector3f px(r.image(y, x, 0), r.image(y, x, 1), r.image(y, x, 2));
        if ((px - red).norm() < 0.25f) sx += x + 0.5, sy += y + 0.5, ++count;
      }
    if (count < 8) continue;
    ++found;
    const CornerBox<double> box = to_corners(r.trace.steps.back().boxes.at(0));
    const double cx = sx / count / r.image.width, cy = sy / count / r.image.height;
    inside += cx >= box.x0 && cx <= box.x1 && cy >= box.y0 && cy <= box.y1;
  }
  return fmt::format("red centroid inside entity-1 box for {}/{} seeds ({} with red pixels)", inside, seeds, found);
}

// ------------------------------------------------------------------ 8

Verdict benchmark_generator() {
  Verdict v;
  const std::regex grammar("a ([a-z]+) ([a-z]+) and a ([a-z]+) ([a-z]+)");
  for (auto cat : {BenchCategory::coco, BenchCategory::noncoco}) {
    const auto& vocab = bench_vocabulary(cat);
    const auto ents = vocab.entities();
    const std::set<std::string> entities(ents.begin(), ents.end());
    const std::set<std::string> colors(vocab.colors.begin(), vocab.colors.end());
    v.require(vocab.animals.size() == 8 && vocab.objects.size() == 8 && colors.size() == 11,
              "vocabulary sizes differ from 8/8/11");
    const auto prompts = gen_benchmark(cat, 42);
    v.require(prompts.size() == 120, fmt::format("{} prompts for {}", prompts.size(), to_string(cat)));
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& p : prompts) {
      std::smatch m;
      const bool ok = std::regex_match(p.text, m, grammar);
      v.require(ok, "template mismatch: " + p.text);
      if (!ok) continue;
      v.require(m[1] != m[3], "repeated colour: " + p.text);
      v.require(m[2] != m[4], "repeated entity: " + p.text);
      v.require(colors.count(m[1]) && colors.count(m[3]), "unknown colour: " + p.text);
      v.require(entities.count(m[2]) && entities.count(m[4]), "entity outside the category: " + p.text);
      pairs.insert(std::minmax(std::string(m[2]), std::string(m[4])));
    }
    v.require(pairs.size() == 120, "entity pairs are not all distinct");
    std::ostringstream a, b;
    write_prompts(a, gen_benchmark(cat, 42), "x");
    write_prompts(b, gen_benchmark(cat, 42), "x");
    v.require(a.str() == b.str(), "regeneration is not byte-identical");
  }
  if (v.pass) v.detail = "120 prompts per category, grammar and colours valid, regeneration byte-identical";
  return v;
}

// ------------------------------------------------------------------ 9

Verdict parser_filtering() {
  Verdict v;
  const auto& lex = EntityLexicon::builtin();
  struct Row {
    std::string prompt;
    std::vector<std::string> raw, kept;
  };
  const std::vector<Row> rows = {
      {"a white clock tower with a clock on each of it's sides",
       {"a white clock tower", "a clock", "it 's"},
       {"a white clock tower", "a clock"}},
      {"a man is sitting on the back of an elephant", {"a man", "the back", "an elephant"}, {"a man", "an elephant"}},
      {"many different fruits are next to each other", {"many different fruits", "each other"}, {"many different fruits"}},
      {"a large red umbrella with other colors around the center pole",
       {"a large red umbrella", "other colors", "the center pole"},
       {"a large red umbrella"}},
  };
  for (const auto& row : rows) {
    std::vector<EntitySpan> raw;
    for (const auto& t : row.raw) {
      EntitySpan sp;
      sp.phrase = t;
      raw.push_back(sp);
    }
    std::vector<std::string> kept;
    for (const auto& sp : filter_spans(raw, lex)) kept.push_back(sp.phrase);
    v.require(kept == row.kept, "filtering differs for: " + row.prompt);
  }
  if (v.pass) v.detail = "4 of 4 filtering examples exact";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Settings s;
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--stack", s.stack_path, "Toy stack checkpoint")->capture_default_str();
  app.add_option("--boxnet", s.boxnet_path, "BoxNet checkpoint")->capture_default_str();
  app.add_option("--train-scenes", s.train_scenes, "Scenes for criterion 6")->capture_default_str();
  app.add_option("--train-steps", s.train_steps, "Steps for criterion 6")->capture_default_str();
  app.add_option("--prompts", s.prompts, "Prompts for criterion 7")->capture_default_str();
  app.add_option("--seeds", s.seeds, "Seeds for criterion 7")->capture_default_str();
  app.add_option("--guidance", s.guidance, "Guidance scale for generation")->capture_default_str();
  app.add_flag("--verbose", verbose, "Log progress");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::err);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  int failed = 0;
  auto report = [&](int id, const std::string& name, double limit_s, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && secs > limit_s) {
      v.pass = false;
      v.detail += fmt::format("; runtime {:.1f} s exceeds {:.0f} s", secs, limit_s);
    }
    if (!v.pass) ++failed;
    std::cout << fmt::format("[{}] {:>2}. {}: {} ({:.1f} s)", v.pass ? "PASS" : "FAIL", id, name, v.detail, secs)
              << std::endl;
  };

  report(1, "matching optimality", 10, matching_optimality);
  report(2, "GIoU oracle", 5, giou_oracle);
  report(3, "unique-mask invariants", 30, unique_mask_invariants);
  report(4, "attention-control exactness", 120, [&] { return control_exactness(s); });
  report(5, "box-loss gradient check", 0, gradient_check);
  std::optional<TrainingOutcome> outcome;
  std::string training_error = "training did not run";
  auto train_once = [&] {
    if (outcome) return;
    try {
      outcome = boxnet_training(s);
    } catch (const std::exception& e) {
      training_error = std::string("exception: ") + e.what();
    }
  };
  report(6, "toy BoxNet training", 1800, [&] {
    train_once();
    return outcome ? outcome->training : Verdict{false, training_error};
  });
  report(10, "frozen-denoiser guard", 0, [&] {
    train_once();
    return outcome ? outcome->frozen : Verdict{false, training_error};
  });
  report(7, "directional replication (min object score)", 3600, [&] { return directional_replication(s); });
  if (wanted(7)) {
    try {
      std::cout << "[INFO]     red-square placement: " << red_square_placement(s, 50) << std::endl;
    } catch (const std::exception& e) {
      std::cout << "[INFO]     red-square placement: exception: " << e.what() << std::endl;
    }
  }
  report(8, "benchmark generator", 0, benchmark_generator);
  report(9, "parser filtering", 0, parser_filtering);
  std::cout << (failed ? fmt::format("{} criterion(s) failed", failed) : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
