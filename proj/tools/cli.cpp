#include "boxguide/cli.hpp"

#include "boxguide/boxnet.hpp"
#include "boxguide/common.hpp"
#include "boxguide/config.hpp"
#include "boxguide/evalbench.hpp"
#include "boxguide/generation.hpp"
#include "boxguide/prompt_parser.hpp"
#include "boxguide/toy_training.hpp"
#include "boxguide/trainer.hpp"
#include "boxguide/unique_mask.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace boxguide::cli {

namespace fs = std::filesystem;

std::string default_stack_path() { return std::string(BOXGUIDE_MODELS_DIR) + "/toy_stack.ckpt"; }
std::string default_boxnet_path() { return std::string(BOXGUIDE_MODELS_DIR) + "/boxnet.ckpt"; }

namespace {

// Flag > config file > default. Every resolved value lands in `resolved`,
// which is what the run's config hash covers.
class Settings {
 public:
  Settings(Config file, std::string command) : file_(std::move(file)) { resolved_.set("run.command", command); }

  std::string text(const CLI::Option* opt, const std::string& flag, const std::string& key, const std::string& fallback) {
    std::string v = fallback;
    if (opt && opt->count() > 0) {
      v = flag;
    } else if (file_.has(key)) {
      v = file_.get(key);
    }
    resolved_.set(key, v);
    return v;
  }
  long long integer(const CLI::Option* opt, long long flag, const std::string& key, long long fallback) {
    long long v = fallback;
    if (opt && opt->count() > 0) {
      v = flag;
    } else if (file_.has(key)) {
      v = file_.get_int(key, fallback);
    }
    resolved_.set(key, std::to_string(v));
    return v;
  }
  double real(const CLI::Option* opt, double flag, const std::string& key, double fallback) {
    double v = fallback;
    if (opt && opt->count() > 0) {
      v = flag;
    } else if (file_.has(key)) {
      v = file_.get_double(key, fallback);
    }
    resolved_.set(key, format_double(v));
    return v;
  }
  bool flag(const CLI::Option* opt, const std::string& key) {
    bool v = false;
    if (opt && opt->count() > 0) {
      v = true;
    } else if (file_.has(key)) {
      v = file_.get_bool(key, false);
    }
    resolved_.set(key, v ? "true" : "false");
    return v;
  }
  void note(const std::string& key, const std::string& value) { resolved_.set(key, value); }
  /// Every file key is part of the run, used or not.
  Config full() const {
    Config c = file_;
    c.merge(resolved_);
    return c;
  }
  const Config& file() const { return file_; }
  std::string hash() const { return full().hash_hex(); }

 private:
  Config file_;
  Config resolved_;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw InputError(what + " not found: " + path);
}

void require_writable(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::exists(parent)) throw InputError("output directory does not exist: " + parent.string());
}

Resolution parse_hw(const std::string& text) {
  int h = 0, w = 0;
  char x = 0;
  std::istringstream in(text);
  if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || h < 1 || w < 1 || !in.eof()) {
    throw InputError("--hw expects HxW, e.g. 64x64; got '" + text + "'");
  }
  return {h, w};
}

std::vector<Box<double>> parse_boxes(const std::string& text) {
  std::vector<Box<double>> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.find_first_not_of(" ") == std::string::npos) continue;
    for (char& c : item)
      if (c == ',') c = ' ';
    std::istringstream in(item);
    Box<double> b;
    if (!(in >> b.cx >> b.cy >> b.w >> b.h) || !is_valid(b)) {
      throw InputError("--boxes expects 'cx,cy,w,h;...' with components in [0,1] and w,h > 0");
    }
    out.push_back(b);
  }
  if (out.empty()) throw InputError("--boxes is empty");
  return out;
}

GaussianConvention parse_convention(const std::string& name) {
  if (name == "paper") return GaussianConvention::paper;
  if (name == "standard") return GaussianConvention::standard;
  throw InputError("--gaussian-convention expects paper or standard; got '" + name + "'");
}

void write_latent(const std::string& path, const Latent& z, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << "# config_hash=" << config_hash << '\n';
  out << "latent " << z.height << ' ' << z.width << ' ' << z.channels() << '\n';
  out << std::setprecision(9);
  for (nn::Index r = 0; r < z.data.rows(); ++r) {
    for (nn::Index c = 0; c < z.data.cols(); ++c) out << (c ? " " : "") << z.data(r, c);
    out << '\n';
  }
}

Latent read_latent(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read latent " + path);
  std::string line;
  while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
  }
  std::istringstream header(line);
  std::string tag;
  Latent z;
  int c = 0;
  if (!(header >> tag >> z.height >> z.width >> c) || tag != "latent" || z.height < 1 || z.width < 1 || c < 1) {
    throw InputError("latent file must start with 'latent H W C': " + path);
  }
  z.data.resize(static_cast<nn::Index>(z.height) * z.width, c);
  for (nn::Index i = 0; i < z.data.size(); ++i) {
    if (!(in >> z.data.data()[i])) throw InputError("latent file is truncated: " + path);
  }
  if (!z.data.allFinite()) throw InputError("latent file has non-finite values: " + path);
  return z;
}

struct LoadedModel {
  std::unique_ptr<ToyStack> stack;
  std::unique_ptr<BoxNet> boxnet;
  std::string hash;
};

// A BoxNet checkpoint carries its stack; a bare stack checkpoint has no BoxNet.
LoadedModel load_model(const std::string& path) {
  require_file(path, "checkpoint");
  const Checkpoint ckpt = read_checkpoint(path);
  const Config cfg = Config::parse_text(ckpt.config_text);
  LoadedModel out;
  if (cfg.has("boxnet.max_entities")) {
    BoxNetCheckpoint b = BoxNetCheckpoint::from_checkpoint(ckpt);
    out.hash = b.config_hash();
    out.stack = std::move(b.stack);
    out.boxnet = std::move(b.boxnet);
  } else {
    out.stack = ToyStack::from_checkpoint(ckpt);
    Config c = out.stack->config().to_config();
    c.set("stack.checksum", hex64(out.stack->checksum()));
    out.hash = c.hash_hex();
  }
  return out;
}

struct GenerateFlags {
  std::string control = "off";
  double guidance = 1.0;
  CLI::Option* control_opt = nullptr;
  CLI::Option* guidance_opt = nullptr;
  CLI::Option* ancestral = nullptr;
  CLI::Option* renorm = nullptr;
  CLI::Option* transpose = nullptr;
  CLI::Option* all_ones = nullptr;
  std::string convention = "paper";
  CLI::Option* convention_opt = nullptr;
  int min_t = 1, max_t = 0;
  CLI::Option* min_t_opt = nullptr;
  CLI::Option* max_t_opt = nullptr;

  void add(CLI::App* app) {
    control_opt = app->add_option("--control", control, "Attention control: off, cross, self or both")
                      ->check(CLI::IsMember({"off", "cross", "self", "both"}));
    guidance_opt = app->add_option("--guidance", guidance, "Classifier-free guidance scale (1 disables)");
    ancestral = app->add_flag("--ancestral", "Ancestral (stochastic) sampling instead of deterministic");
    renorm = app->add_flag("--renorm", "Renormalize attention rows after masking");
    transpose = app->add_flag("--transpose-self", "Mask self-attention rows instead of columns");
    all_ones = app->add_flag("--all-ones-masks", "Debug: replace every entity mask by all ones");
    convention_opt = app->add_option("--gaussian-convention", convention, "Gaussian field convention: paper or standard");
    min_t_opt = app->add_option("--control-min-t", min_t, "Lowest step that is controlled");
    max_t_opt = app->add_option("--control-max-t", max_t, "Highest step that is controlled (0 = T)");
  }

  GenerationOptions resolve(Settings& s) {
    GenerationOptions o;
    o.control = control_from_name(s.text(control_opt, control, "generate.control", "off"));
    o.guidance = s.real(guidance_opt, guidance, "generate.guidance", 1.0);
    o.ancestral = s.flag(ancestral, "generate.ancestral");
    o.attention.renormalize = s.flag(renorm, "control.renormalize");
    o.attention.transpose_self = s.flag(transpose, "control.transpose_self");
    o.all_ones_masks = s.flag(all_ones, "control.all_ones_masks");
    o.convention = parse_convention(s.text(convention_opt, convention, "control.gaussian_convention", "paper"));
    o.control_min_t = static_cast<int>(s.integer(min_t_opt, min_t, "control.min_t", 1));
    o.control_max_t = static_cast<int>(s.integer(max_t_opt, max_t, "control.max_t", 0));
    return o;
  }
};

std::string crash_dump(int argc, const char* const* argv, const std::string& what) {
  std::string joined;
  for (int i = 0; i < argc; ++i) joined += std::string(i ? " " : "") + argv[i];
  const fs::path path = fs::temp_directory_path() / ("boxguide-dump-" + hex64(fnv1a64(joined + what)) + ".txt");
  std::ofstream out(path);
  out << format_record({{"record", "internal_error"}, {"argv", joined}, {"error", what}}) << '\n';
  return path.string();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Box-guided attention control on a desk-scale diffusion stack", "boxguide"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  long long seed_flag = 0;
  auto* config_opt = app.add_option("--config", config_path, "Structured-text config file (key = value, [sections])");
  auto* seed_opt = app.add_option("--seed", seed_flag, "Random seed");
  auto* verbose_opt = app.add_flag("--verbose", "Log progress");

  // parse
  auto* parse_cmd = app.add_subcommand("parse", "Print the entity phrases of a prompt");
  std::string prompt;
  parse_cmd->add_option("--prompt", prompt, "Prompt text")->required();

  // predict-boxes
  auto* predict_cmd = app.add_subcommand("predict-boxes", "Predict one box per entity at step t");
  std::string ckpt_path = default_boxnet_path(), latent_path, image_path;
  int t_flag = 0;
  predict_cmd->add_option("--ckpt", ckpt_path, "BoxNet checkpoint")->capture_default_str();
  predict_cmd->add_option("--prompt", prompt, "Prompt text")->required();
  auto* latent_opt = predict_cmd->add_option("--latent", latent_path, "Latent z_t file ('latent H W C' + rows)");
  auto* image_opt = predict_cmd->add_option("--image", image_path, "PNG to encode and noise to step t instead of --latent");
  latent_opt->excludes(image_opt);
  predict_cmd->add_option("--t", t_flag, "Timestep")->required();

  // masks
  auto* masks_cmd = app.add_subcommand("masks", "Rasterize unique masks for a set of boxes");
  std::string boxes_text, hw_text = "64x64", out_path, convention = "paper";
  masks_cmd->add_option("--boxes", boxes_text, "Boxes as 'cx,cy,w,h;cx,cy,w,h'")->required();
  masks_cmd->add_option("--hw", hw_text, "Mask resolution HxW")->capture_default_str();
  masks_cmd->add_option("--out", out_path, "Output prefix; writes <prefix>_<n>.pgm")->required();
  auto* masks_conv = masks_cmd->add_option("--gaussian-convention", convention, "paper or standard");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Sample an image, optionally with attention control");
  std::string trace_path, latent_out;
  GenerateFlags gen_flags;
  auto* gen_prompt = gen_cmd->add_option("--prompt", prompt, "Prompt text");
  gen_prompt->required();
  gen_cmd->add_option("--ckpt", ckpt_path, "BoxNet (or stack) checkpoint")->capture_default_str();
  gen_cmd->add_option("--out", out_path, "Output PNG")->required();
  gen_cmd->add_option("--trace", trace_path, "Per-step trace output");
  gen_cmd->add_option("--latent-out", latent_out, "Write the final latent");
  gen_flags.add(gen_cmd);

  // train-boxnet
  auto* train_cmd = app.add_subcommand("train-boxnet", "Train BoxNet against the frozen stack");
  std::string data_dir, stack_path = default_stack_path(), resume_path, loss_csv;
  int eval_scenes = 200;
  train_cmd->add_option("--data", data_dir, "Dataset directory (see make-data)")->required();
  train_cmd->add_option("--out", out_path, "Output checkpoint")->required();
  train_cmd->add_option("--stack", stack_path, "Frozen stack checkpoint")->capture_default_str();
  train_cmd->add_option("--resume", resume_path, "Continue from a training checkpoint");
  train_cmd->add_option("--loss-csv", loss_csv, "Loss curve CSV (default <out>.loss.csv)");
  auto* eval_scenes_opt = train_cmd->add_option("--eval-scenes", eval_scenes, "Held-out scenes for the final IoU check");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Write the benchmark prompt set");
  std::string category;
  bench_cmd->add_option("--category", category, "coco or noncoco")->required();
  bench_cmd->add_option("--out", out_path, "Output prompt file")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score generated images with a detector");
  std::string prompts_path, detector_spec = "oracle", report_path;
  int seeds = 20;
  GenerateFlags eval_flags;
  eval_cmd->add_option("--ckpt", ckpt_path, "BoxNet checkpoint")->capture_default_str();
  eval_cmd->add_option("--prompts", prompts_path, "Prompt file, one per line")->required();
  auto* seeds_opt = eval_cmd->add_option("--seeds", seeds, "Seeds 0..n-1 per prompt");
  auto* detector_opt = eval_cmd->add_option("--detector", detector_spec, "oracle or external:<cmd>");
  eval_cmd->add_option("--report", report_path, "Report output")->required();
  eval_flags.add(eval_cmd);

  // make-data
  auto* data_cmd = app.add_subcommand("make-data", "Write a synthetic shapes dataset");
  int scenes = 5000;
  double shuffled = 0.2;
  data_cmd->add_option("--out", out_path, "Dataset directory")->required();
  auto* scenes_opt = data_cmd->add_option("--scenes", scenes, "Number of scenes");
  auto* shuffled_opt = data_cmd->add_option("--shuffled", shuffled, "Fraction of captions with permuted colours");

  // train-stack
  auto* stack_cmd = app.add_subcommand("train-stack", "Train the toy autoencoder, text encoder and U-Net");
  stack_cmd->add_option("--out", out_path, "Output stack checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto parsed = app.get_subcommands();
    out << (parsed.empty() ? app.help() : parsed.back()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 1;
  }

  spdlog::set_level(verbose_opt->count() > 0 ? spdlog::level::info : spdlog::level::warn);
  CLI::App* cmd = app.get_subcommands().front();

  try {
    Config file;
    if (config_opt->count() > 0) {
      require_file(config_path, "config file");
      try {
        file = Config::from_file(config_path);
      } catch (const std::exception& e) {
        throw InputError(e.what());
      }
    }
    Settings s(file, cmd->get_name());
    const auto seed = static_cast<std::uint64_t>(s.integer(seed_opt, seed_flag, "run.seed", 0));
    auto announce = [&] { err << "config_hash=" << s.hash() << '\n'; };

    if (cmd == parse_cmd) {
      s.note("parse.prompt", prompt);
      announce();
      const ParsedPrompt parsed = parse_entities(prompt, EntityLexicon::builtin());
      for (std::size_t i = 0; i < parsed.spans.size(); ++i) {
        const auto& span = parsed.spans[i];
        std::string tokens;
        for (int t : span.token_indices) tokens += (tokens.empty() ? "" : ",") + std::to_string(t);
        out << format_record({{"entity", std::to_string(i + 1)},
                              {"phrase", span.phrase},
                              {"noun", span.head_noun},
                              {"attribute", span.attribute.value_or("")},
                              {"chars", std::to_string(span.char_begin) + "-" + std::to_string(span.char_end)},
                              {"tokens", tokens}})
            << '\n';
      }
      return 0;
    }

    if (cmd == predict_cmd) {
      LoadedModel model = load_model(ckpt_path);
      if (!model.boxnet) throw InputError("checkpoint has no BoxNet: " + ckpt_path);
      const int T = model.stack->scheduler().steps();
      if (t_flag < 1 || t_flag > T) throw InputError("--t must be in [1, " + std::to_string(T) + "]");
      if (latent_opt->count() == 0 && image_opt->count() == 0) throw InputError("one of --latent or --image is required");
      s.note("model.config_hash", model.hash);
      s.note("predict.prompt", prompt);
      s.note("predict.t", std::to_string(t_flag));
      Latent z;
      if (latent_opt->count() > 0) {
        z = read_latent(latent_path);
        s.note("predict.latent", hex64(fnv1a64(std::string(reinterpret_cast<const char*>(z.data.data()),
                                                            z.data.size() * sizeof(float)))));
      } else {
        require_file(image_path, "image");
        const Image img = read_png(image_path);
        z = model.stack->scheduler().add_noise(model.stack->encode(img), t_flag, seed);
        s.note("predict.image", image_path);
      }
      const auto& ac = model.stack->config().autoencoder;
      if (z.height != ac.latent_size() || z.width != ac.latent_size() || z.channels() != ac.latent_channels) {
        throw InputError("latent shape does not match the checkpoint");
      }
      announce();
      const auto spans = parse_entities(prompt, EntityLexicon::builtin()).spans;
      nn::NoGradGuard guard;
      FeatureCapture capture;
      model.stack->unet().forward(nn::Tensor(z.data), t_flag, model.stack->text().encode(prompt), &capture);
      const auto boxes = model.boxnet->predict_boxes(model.boxnet->extract_features(capture),
                                                     model.boxnet->encode_entities(spans, model.stack->text()));
      out << std::fixed << std::setprecision(6);
      for (const auto& b : boxes) out << b.cx << ' ' << b.cy << ' ' << b.w << ' ' << b.h << '\n';
      return 0;
    }

    if (cmd == masks_cmd) {
      const auto boxes = parse_boxes(boxes_text);
      const Resolution hw = parse_hw(hw_text);
      const GaussianConvention conv =
          parse_convention(s.text(masks_conv, convention, "control.gaussian_convention", "paper"));
      s.note("masks.boxes", boxes_text);
      s.note("masks.hw", hw_text);
      require_writable(out_path);
      announce();
      const UniqueMaskSet set = unique_masks(boxes, hw, conv);
      for (std::size_t n = 0; n < set.size(); ++n) {
        const std::string path = out_path + "_" + std::to_string(n + 1) + ".pgm";
        write_pgm(path, set.masks[n], "config_hash=" + s.hash() + " entity=" + std::to_string(n + 1));
        out << format_record({{"entity", std::to_string(n + 1)},
                              {"cells", std::to_string(set.masks[n].cast<int>().sum())},
                              {"raw_cells", std::to_string(set.raw_masks[n].cast<int>().sum())},
                              {"file", path}})
            << '\n';
      }
      return 0;
    }

    if (cmd == gen_cmd) {
      GenerationOptions options = gen_flags.resolve(s);
      LoadedModel model = load_model(ckpt_path);
      if (options.control != ControlMode::off && !model.boxnet) {
        throw InputError("--control " + std::string(to_string(options.control)) + " needs a BoxNet checkpoint");
      }
      s.note("model.config_hash", model.hash);
      s.note("generate.prompt", prompt);
      require_writable(out_path);
      announce();
      Generator generator(*model.stack, model.boxnet.get());
      generator.set_config_hash(s.hash());
      const GenerationResult r = generator.generate(prompt, seed, options);
      write_png(out_path, r.image, {{"config_hash", s.hash()}, {"prompt", prompt}, {"seed", std::to_string(seed)}});
      if (!trace_path.empty()) {
        std::ofstream t(trace_path);
        if (!t) throw InputError("cannot write " + trace_path);
        write_trace(t, r.trace);
      }
      if (!latent_out.empty()) write_latent(latent_out, r.latent, s.hash());
      for (const auto& w : r.trace.warnings) err << "warning: " << w << '\n';
      out << "wrote " << out_path << '\n';
      return 0;
    }

    if (cmd == train_cmd) {
      require_file(fs::path(data_dir) / "annotations.txt", "dataset annotations");
      require_writable(out_path);
      TrainConfig tc = TrainConfig::from_config(s.file());
      if (seed_opt->count() > 0) tc.seed = seed;
      const Config train_keys = tc.to_config();
      for (const auto& [k, v] : train_keys.values()) s.note(k, v);
      const int held_out = static_cast<int>(s.integer(eval_scenes_opt, eval_scenes, "train.eval_scenes", 200));
      const auto dataset = read_dataset(data_dir);
      s.note("train.dataset_id", dataset_id(dataset));
      TrainState state;
      if (!resume_path.empty()) {
        require_file(resume_path, "resume checkpoint");
        state = load_state(resume_path);
      } else {
        require_file(stack_path, "stack checkpoint");
        state = fresh_state(ToyStack::load(stack_path), tc);
      }
      s.note("model.stack_checksum", hex64(state.model.stack->checksum()));
      announce();
      state.model.extra.set("run.config_hash", s.hash());
      TrainRunOptions ro;
      ro.loss_csv = loss_csv.empty() ? out_path + ".loss.csv" : loss_csv;
      ro.checkpoint_path = out_path;
      ro.dump_path = out_path + ".dump.txt";
      ro.config_hash = s.hash();
      ro.progress = [](long long step, double loss, double lr) {
        if ((step + 1) % 100 == 0) spdlog::info("step {} loss {:.4f} lr {:.2e}", step + 1, loss, lr);
      };
      const std::uint64_t frozen = state.model.stack->checksum();
      train(dataset, tc, state, ro);
      if (state.model.stack->checksum() != frozen) throw std::logic_error("stack parameters changed during training");
      out << format_record({{"steps", std::to_string(state.next_step)},
                            {"first_loss", format_double(state.model.meta.first_loss)},
                            {"last_loss", format_double(state.model.meta.last_loss)},
                            {"checkpoint", out_path},
                            {"loss_csv", ro.loss_csv}})
          << '\n';
      if (held_out > 0) {
        const auto eval_set = make_shape_dataset(held_out, derive_seed(tc.seed, 0xe7a1));
        const int max_t = std::max(1, state.model.stack->scheduler().steps() / 4);
        const BoxEvalResult r = evaluate_boxes(*state.model.boxnet, *state.model.stack, eval_set, max_t, tc.seed);
        out << format_record({{"held_out_scenes", std::to_string(held_out)},
                              {"max_t", std::to_string(max_t)},
                              {"mean_iou", format_double(r.mean_iou)}})
            << '\n';
      }
      return 0;
    }

    if (cmd == bench_cmd) {
      const BenchCategory cat = bench_category_from_name(category);
      s.note("bench.category", std::string(to_string(cat)));
      require_writable(out_path);
      announce();
      std::ofstream f(out_path, std::ios::binary);
      if (!f) throw InputError("cannot write " + out_path);
      write_prompts(f, gen_benchmark(cat, seed), s.hash());
      out << "wrote " << out_path << '\n';
      return 0;
    }

    if (cmd == eval_cmd) {
      GenerationOptions options = eval_flags.resolve(s);
      require_file(prompts_path, "prompt file");
      std::ifstream pf(prompts_path);
      const auto prompts = read_prompt_lines(pf);
      if (prompts.empty()) throw InputError("prompt file has no prompts: " + prompts_path);
      const int n_seeds = static_cast<int>(s.integer(seeds_opt, seeds, "eval.seeds", 20));
      if (n_seeds < 1) throw InputError("--seeds must be >= 1");
      const std::string det = s.text(detector_opt, detector_spec, "eval.detector", "oracle");
      auto detector = make_detector(det);
      LoadedModel model = load_model(ckpt_path);
      if (options.control != ControlMode::off && !model.boxnet) throw InputError("attention control needs a BoxNet checkpoint");
      s.note("model.config_hash", model.hash);
      std::string joined;
      for (const auto& p : prompts) joined += p + "\n";
      s.note("eval.prompts", hex64(fnv1a64(joined)));
      require_writable(report_path);
      announce();
      Generator generator(*model.stack, model.boxnet.get());
      generator.set_config_hash(s.hash());
      std::vector<std::uint64_t> seed_list;
      for (int i = 0; i < n_seeds; ++i) seed_list.push_back(static_cast<std::uint64_t>(i));
      const EvalReport report = evaluate([&](const std::string& p, std::uint64_t sd) { return generator.generate(p, sd, options).image; },
                                         prompts, seed_list, *detector, "control=" + std::string(to_string(options.control)),
                                         s.hash());
      std::ofstream rf(report_path);
      if (!rf) throw InputError("cannot write " + report_path);
      write_report(rf, report);
      out << format_record({{"method", report.method},
                            {"samples", std::to_string(report.records.size())},
                            {"failures", std::to_string(report.failures)},
                            {"mean", format_double(report.mean)},
                            {"std", format_double(report.std)}})
          << '\n';
      return 0;
    }

    if (cmd == data_cmd) {
      const int n = static_cast<int>(s.integer(scenes_opt, scenes, "data.scenes", 5000));
      const double frac = s.real(shuffled_opt, shuffled, "data.shuffled_fraction", 0.2);
      if (n < 1) throw InputError("--scenes must be >= 1");
      if (frac < 0 || frac > 1) throw InputError("--shuffled must be in [0, 1]");
      announce();
      write_dataset(out_path, make_shape_dataset(n, seed, frac), s.hash());
      out << "wrote " << n << " scenes to " << out_path << '\n';
      return 0;
    }

    if (cmd == stack_cmd) {
      StackTrainConfig sc = StackTrainConfig::from_config(s.file());
      if (seed_opt->count() > 0) sc.seed = seed;
      s.note("stack_train.seed", std::to_string(sc.seed));
      require_writable(out_path);
      announce();
      ToyStack stack(ToyStackConfig{}, sc.seed);
      auto progress = [](const std::string& phase, long long step, double loss, double lr) {
        if ((step + 1) % 500 == 0) spdlog::info("{} step {} loss {:.5f} lr {:.2e}", phase, step + 1, loss, lr);
      };
      train_autoencoder(stack, sc, progress);
      fit_latent_stats(stack, sc.stats_scenes, derive_seed(sc.seed, 3), sc.scenes);
      const double mae = reconstruction_mae(stack, 100, derive_seed(sc.seed, 4), sc.scenes);
      const double loss = train_denoiser(stack, sc, progress);
      Config extra;
      extra.set("run.config_hash", s.hash());
      extra.set("run.reconstruction_mae", format_double(mae));
      stack.save(out_path, extra);
      out << format_record({{"reconstruction_mae", format_double(mae)},
                            {"denoiser_loss", format_double(loss)},
                            {"checkpoint", out_path}})
          << '\n';
      return 0;
    }
    throw std::logic_error("unhandled subcommand " + cmd->get_name());
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NonFiniteLossError& e) {
    err << "internal error: " << e.what() << " (dump: " << e.dump_path() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    const std::string dump = crash_dump(argc, argv, e.what());
    err << "internal error: " << e.what() << " (dump: " << dump << ")\n";
    return 2;
  }
}

}  // namespace boxguide::cli
