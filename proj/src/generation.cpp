#include "boxguide/generation.hpp"

#include "boxguide/common.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace boxguide {

using nn::Matrix;
using nn::Tensor;

std::string_view to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::off: return "off";
    case ControlMode::cross: return "cross";
    case ControlMode::self: return "self";
    case ControlMode::both: return "both";
  }
  return "?";
}

ControlMode control_from_name(std::string_view name) {
  for (ControlMode m : {ControlMode::off, ControlMode::cross, ControlMode::self, ControlMode::both}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown control mode '" + std::string(name) + "' (expected off, cross, self or both)");
}

namespace {

ControlScope scope_of(ControlMode mode) {
  switch (mode) {
    case ControlMode::cross: return ControlScope::cross;
    case ControlMode::self: return ControlScope::self;
    default: return ControlScope::both;
  }
}

UniqueMaskSet all_ones(std::size_t n, Resolution hw) {
  UniqueMaskSet set;
  set.resolution = hw;
  for (std::size_t i = 0; i < n; ++i) {
    set.masks.push_back(BinaryMask::Ones(hw.height, hw.width));
    set.raw_masks.push_back(BinaryMask::Ones(hw.height, hw.width));
  }
  set.argmax_map = IndexMap::Ones(hw.height, hw.width);
  return set;
}

struct StatsAccumulator {
  double pre_min = std::numeric_limits<double>::infinity(), pre_max = -std::numeric_limits<double>::infinity();
  double post_min = std::numeric_limits<double>::infinity(), post_max = -std::numeric_limits<double>::infinity();
  double pre_sum = 0, post_sum = 0, masked_sum = 0;
  int count = 0;

  void add(const AttentionStats& s) {
    pre_min = std::min(pre_min, s.pre_rowsum_min);
    pre_max = std::max(pre_max, s.pre_rowsum_max);
    post_min = std::min(post_min, s.post_rowsum_min);
    post_max = std::max(post_max, s.post_rowsum_max);
    pre_sum += s.pre_rowsum_mean;
    post_sum += s.post_rowsum_mean;
    masked_sum += s.masked_fraction;
    ++count;
  }
  void write(StepRecord& r) const {
    if (count == 0) return;
    r.rowsum_pre_min = pre_min;
    r.rowsum_pre_max = pre_max;
    r.rowsum_pre_mean = pre_sum / count;
    r.rowsum_post_min = post_min;
    r.rowsum_post_max = post_max;
    r.rowsum_post_mean = post_sum / count;
    r.masked_fraction = masked_sum / count;
  }
};

std::string join_boxes(const std::vector<Box<double>>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    if (!out.empty()) out += ';';
    out += format_double(b.cx) + "," + format_double(b.cy) + "," + format_double(b.w) + "," + format_double(b.h);
  }
  return out;
}

std::vector<Box<double>> split_boxes(const std::string& text) {
  std::vector<Box<double>> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    Box<double> b;
    char c1, c2, c3;
    std::istringstream in(item);
    if (!(in >> b.cx >> c1 >> b.cy >> c2 >> b.w >> c3 >> b.h)) throw std::invalid_argument("trace: bad box " + item);
    out.push_back(b);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values, char sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? std::string(1, sep) : "") << values[i];
  return out.str();
}

}  // namespace

void write_trace(std::ostream& out, const GenerationTrace& trace) {
  out << format_record({{"record", "header"},
                        {"prompt", trace.prompt},
                        {"seed", std::to_string(trace.seed)},
                        {"config_hash", trace.config_hash},
                        {"control", std::string(to_string(trace.requested))},
                        {"effective_control", std::string(to_string(trace.effective))},
                        {"entities", join(trace.entities, '|')},
                        {"steps", std::to_string(trace.steps.size())}})
      << '\n';
  for (const auto& w : trace.warnings) out << format_record({{"record", "warning"}, {"message", w}}) << '\n';
  for (const auto& s : trace.steps) {
    out << format_record({{"record", "step"},
                          {"t", std::to_string(s.t)},
                          {"controlled", s.controlled ? "1" : "0"},
                          {"boxes", join_boxes(s.boxes)},
                          {"mask_cells", join(s.mask_cells, ',')},
                          {"rowsum_pre", format_double(s.rowsum_pre_min) + "," + format_double(s.rowsum_pre_mean) +
                                             "," + format_double(s.rowsum_pre_max)},
                          {"rowsum_post", format_double(s.rowsum_post_min) + "," +
                                              format_double(s.rowsum_post_mean) + "," +
                                              format_double(s.rowsum_post_max)},
                          {"masked_fraction", format_double(s.masked_fraction)},
                          {"latent_norm", format_double(s.latent_norm)}})
        << '\n';
  }
}

GenerationTrace read_trace(std::istream& in) {
  GenerationTrace trace;
  std::string line;
  bool header = false;
  auto triple = [](const std::string& text, double& a, double& b, double& c) {
    char s1, s2;
    std::istringstream is(text);
    if (!(is >> a >> s1 >> b >> s2 >> c)) throw std::invalid_argument("trace: bad triple " + text);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Record r = parse_record(line);
    const std::string& kind = record_value(r, "record");
    if (kind == "header") {
      header = true;
      trace.prompt = record_value(r, "prompt");
      trace.seed = std::stoull(record_value(r, "seed"));
      trace.config_hash = record_value(r, "config_hash");
      trace.requested = control_from_name(record_value(r, "control"));
      trace.effective = control_from_name(record_value(r, "effective_control"));
      std::stringstream names(record_value(r, "entities"));
      std::string name;
      while (std::getline(names, name, '|')) trace.entities.push_back(name);
    } else if (kind == "warning") {
      trace.warnings.push_back(record_value(r, "message"));
    } else if (kind == "step") {
      StepRecord s;
      s.t = std::stoi(record_value(r, "t"));
      s.controlled = record_value(r, "controlled") == "1";
      s.boxes = split_boxes(record_value(r, "boxes"));
      std::stringstream cells(record_value(r, "mask_cells"));
      std::string cell;
      while (std::getline(cells, cell, ',')) s.mask_cells.push_back(std::stoi(cell));
      triple(record_value(r, "rowsum_pre"), s.rowsum_pre_min, s.rowsum_pre_mean, s.rowsum_pre_max);
      triple(record_value(r, "rowsum_post"), s.rowsum_post_min, s.rowsum_post_mean, s.rowsum_post_max);
      s.masked_fraction = std::stod(record_value(r, "masked_fraction"));
      s.latent_norm = std::stod(record_value(r, "latent_norm"));
      trace.steps.push_back(std::move(s));
    } else {
      throw std::invalid_argument("trace: unknown record kind " + kind);
    }
  }
  if (!header) throw std::invalid_argument("trace: missing header record");
  return trace;
}

Generator::Generator(ToyStack& stack, const BoxNet* boxnet, EntityLexicon lexicon)
    : stack_(stack), boxnet_(boxnet), lexicon_(std::move(lexicon)) {}

GenerationResult Generator::generate(const std::string& prompt, std::uint64_t seed, const GenerationOptions& options) {
  nn::NoGradGuard no_grad;
  const Scheduler& scheduler = stack_.scheduler();
  const int T = scheduler.steps();
  ToyUNet& unet = stack_.unet();

  GenerationResult result;
  GenerationTrace& trace = result.trace;
  trace.prompt = prompt;
  trace.seed = seed;
  trace.config_hash = config_hash_;
  trace.requested = options.control;

  ControlMode mode = options.control;
  std::vector<EntitySpan> spans;
  if (mode != ControlMode::off) {
    if (!boxnet_) throw std::invalid_argument("attention control requires a BoxNet checkpoint");
    if (prompt.find_first_not_of(" \t\r\n") != std::string::npos) {
      spans = parse_entities(prompt, lexicon_, stack_.text().tokenizer()).spans;
    }
    if (spans.empty()) {
      trace.warnings.push_back("prompt has no lexicon entities; control disabled");
      mode = ControlMode::off;
    }
  }
  trace.effective = mode;
  for (const auto& s : spans) trace.entities.push_back(s.phrase);

  const Tensor context = stack_.text().encode(prompt);
  const bool guided = options.guidance != 1.0;
  const Tensor uncond = guided ? stack_.text().encode("") : Tensor();

  EntityQuerySet queries;
  std::vector<std::vector<int>> token_sets;
  std::vector<Resolution> resolutions;
  if (mode != ControlMode::off) {
    queries = boxnet_->encode_entities(spans, stack_.text(), lexicon_);
    for (const auto& s : spans) token_sets.push_back(s.token_indices);
    std::set<Resolution> seen;
    for (const auto& layer : unet.attention_layers()) seen.insert(layer.hw);
    resolutions.assign(seen.begin(), seen.end());
  }
  const int control_max = options.control_max_t > 0 ? options.control_max_t : T;

  std::mt19937_64 rng(seed);
  Latent z;
  z.height = z.width = stack_.config().autoencoder.latent_size();
  z.data = gaussian_matrix(static_cast<nn::Index>(z.height) * z.width, stack_.config().autoencoder.latent_channels, rng);
  std::mt19937_64 step_rng(derive_seed(seed, 0x5eed));

  for (int t = T; t >= 1; --t) {
    StepRecord record;
    record.t = t;
    ControlPlan plan;
    StatsAccumulator stats;
    HookHandle hooks;
    if (mode != ControlMode::off) {
      FeatureCapture capture;
      unet.forward(Tensor(z.data), t, context, &capture);
      record.boxes = boxnet_->predict_boxes(boxnet_->extract_features(capture), queries);
      plan.token_sets = token_sets;
      for (const Resolution& hw : resolutions) {
        plan.masks_by_resolution[hw] = options.all_ones_masks ? all_ones(record.boxes.size(), hw)
                                                              : unique_masks(record.boxes, hw, options.convention);
      }
      for (const auto& m : plan.masks_by_resolution.rbegin()->second.masks) {
        record.mask_cells.push_back(static_cast<int>(m.cast<int>().sum()));
      }
      if (t >= options.control_min_t && t <= control_max) {
        record.controlled = true;
        hooks = register_hooks(unet, plan, scope_of(mode), options.attention,
                               [&stats](const AttentionStats& s) { stats.add(s); });
      }
    }
    Matrix eps = unet.forward(Tensor(z.data), t, context).value();
    hooks.release();
    if (guided) {
      const Matrix eps_u = unet.forward(Tensor(z.data), t, uncond).value();
      eps = eps_u + static_cast<float>(options.guidance) * (eps - eps_u);
    }
    z.data = scheduler.step(z.data, t, eps, options.ancestral ? &step_rng : nullptr);
    if (!z.data.allFinite()) throw std::runtime_error("sampler produced a non-finite latent at step " + std::to_string(t));
    stats.write(record);
    record.latent_norm = z.data.norm();
    trace.steps.push_back(std::move(record));
  }
  result.image = stack_.decode(z);
  result.latent = std::move(z);
  return result;
}

GenerationResult generate(const std::string& prompt, std::uint64_t seed, ControlMode control, ToyStack& stack,
                          const BoxNet* boxnet, const GenerationOptions& base) {
  GenerationOptions options = base;
  options.control = control;
  Generator generator(stack, boxnet);
  return generator.generate(prompt, seed, options);
}

}  // namespace boxguide
