#include "boxguide/evalbench.hpp"

#include "boxguide/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace boxguide {

std::string_view to_string(BenchCategory category) {
  return category == BenchCategory::coco ? "coco" : "noncoco";
}

BenchCategory bench_category_from_name(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "coco") return BenchCategory::coco;
  if (n == "noncoco" || n == "non-coco") return BenchCategory::noncoco;
  throw std::invalid_argument("unknown benchmark category '" + std::string(name) + "' (expected coco or noncoco)");
}

std::vector<std::string> BenchVocabulary::entities() const {
  std::vector<std::string> out = animals;
  out.insert(out.end(), objects.begin(), objects.end());
  return out;
}

const BenchVocabulary& bench_vocabulary(BenchCategory category) {
  static const std::vector<std::string> colors = {"red",  "orange", "yellow", "green", "blue", "purple",
                                                  "pink", "brown",  "gray",   "black", "white"};
  static const BenchVocabulary coco{{"cat", "dog", "bird", "bear", "horse", "elephant", "sheep", "giraffe"},
                                    {"backpack", "suitcase", "chair", "car", "couch", "bench", "cake", "umbrella"},
                                    colors};
  static const BenchVocabulary noncoco{
      {"tiger", "panda", "lion", "fox", "squirrel", "turkey", "penguin", "turtle"},
      {"shoes", "television", "watermelon", "candle", "bucket", "hammock", "pumpkin", "carrot"},
      colors};
  return category == BenchCategory::coco ? coco : noncoco;
}

namespace {

BenchmarkPrompt make_prompt(BenchCategory category, const std::string& ca, const std::string& ea, const std::string& cb,
                            const std::string& eb) {
  BenchmarkPrompt p;
  p.category = category;
  p.color_a = ca;
  p.entity_a = ea;
  p.color_b = cb;
  p.entity_b = eb;
  const std::string first = "a " + ca + " " + ea;
  const std::string second = "a " + cb + " " + eb;
  p.text = first + " and " + second;
  const WordTokenizer tokenizer;
  EntitySpan a = span_from_phrase(p.text, first);
  EntitySpan b;
  b.phrase = second;
  b.char_begin = first.size() + 5;
  b.char_end = p.text.size();
  a.head_noun = ea;
  a.attribute = ca;
  b.head_noun = eb;
  b.attribute = cb;
  a.token_indices = token_indices(p.text, a, tokenizer);
  b.token_indices = token_indices(p.text, b, tokenizer);
  p.entities = {a, b};
  return p;
}

std::pair<int, int> two_distinct(std::mt19937_64& rng, int n) {
  const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
  int b = std::uniform_int_distribution<int>(0, n - 2)(rng);
  if (b >= a) ++b;
  return {a, b};
}

}  // namespace

std::vector<BenchmarkPrompt> gen_benchmark(BenchCategory category, std::uint64_t seed) {
  const BenchVocabulary& vocab = bench_vocabulary(category);
  const std::vector<std::string> entities = vocab.entities();
  const int n_colors = static_cast<int>(vocab.colors.size());
  std::vector<BenchmarkPrompt> out;
  std::uint64_t k = 0;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    for (std::size_t j = i + 1; j < entities.size(); ++j, ++k) {
      std::mt19937_64 rng(derive_seed(seed, k));
      const auto [ca, cb] = two_distinct(rng, n_colors);
      out.push_back(make_prompt(category, vocab.colors[ca], entities[i], vocab.colors[cb], entities[j]));
    }
  }
  return out;
}

std::vector<BenchmarkPrompt> toy_prompts(int count, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("toy_prompts: count must be >= 0");
  const auto& colors = palette();
  std::vector<BenchmarkPrompt> out;
  for (int k = 0; k < count; ++k) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k), 0x70));
    const auto [sa, sb] = two_distinct(rng, kShapeKinds);
    const auto [ca, cb] = two_distinct(rng, static_cast<int>(colors.size()));
    out.push_back(make_prompt(BenchCategory::coco, colors[ca].name, std::string(to_string(static_cast<ShapeKind>(sa))),
                              colors[cb].name, std::string(to_string(static_cast<ShapeKind>(sb)))));
  }
  return out;
}

void write_prompts(std::ostream& out, const std::vector<BenchmarkPrompt>& prompts, const std::string& config_hash) {
  out << "# config_hash=" << config_hash << " prompts=" << prompts.size() << '\n';
  for (const auto& p : prompts) out << p.text << '\n';
}

std::vector<std::string> read_prompt_lines(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(line.substr(first));
  }
  return out;
}

// ---------------------------------------------------------------- detectors

SyntheticOracle::SyntheticOracle(OracleOptions options) : options_(options), lexicon_(EntityLexicon::builtin()) {}

std::vector<Detection> SyntheticOracle::detect(const Image& image, const std::string& phrase) {
  const auto noun = resolve_head_noun(phrase, lexicon_);
  if (!noun) return {};
  ShapeKind kind;
  try {
    kind = shape_from_name(*noun);
  } catch (const std::invalid_argument&) {
    return {};
  }
  const int H = image.height, W = image.width;
  const auto& colors = palette();
  const Eigen::Vector3f bg = background_color();
  std::vector<int> label(static_cast<std::size_t>(H) * W, -1);
  for (int i = 0; i < H * W; ++i) {
    const Eigen::Vector3f px = image.pixels.row(i).transpose();
    double best = (px - bg).norm();
    int best_label = -1;
    for (std::size_t c = 0; c < colors.size(); ++c) {
      const double d = (px - colors[c].rgb).norm();
      if (d < best) {
        best = d;
        best_label = static_cast<int>(c);
      }
    }
    if (best <= options_.max_color_distance) label[i] = best_label;
  }

  std::vector<Detection> out;
  std::vector<char> seen(label.size(), 0);
  std::vector<int> stack, members;
  for (int start = 0; start < H * W; ++start) {
    if (label[start] < 0 || seen[start]) continue;
    members.clear();
    stack.assign(1, start);
    seen[start] = 1;
    int x0 = W, x1 = -1, y0 = H, y1 = -1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int y = p / W, x = p % W;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& [ny, nx] : nb) {
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        const int q = ny * W + nx;
        if (!seen[q] && label[q] == label[start]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (static_cast<int>(members.size()) < options_.min_area) continue;
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    std::vector<char> inside(static_cast<std::size_t>(bw) * bh, 0);
    for (int p : members) inside[static_cast<std::size_t>(p / W - y0) * bw + (p % W - x0)] = 1;
    int inter = 0, uni = 0;
    for (int y = 0; y < bh; ++y) {
      for (int x = 0; x < bw; ++x) {
        const double u = (x + 0.5) / bw, v = (y + 0.5) / bh;
        bool tmpl = true;
        if (kind == ShapeKind::circle) {
          tmpl = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
        } else if (kind == ShapeKind::triangle) {
          tmpl = std::abs(u - 0.5) <= v / 2;
        }
        const bool in = inside[static_cast<std::size_t>(y) * bw + x];
        inter += in && tmpl;
        uni += in || tmpl;
      }
    }
    const double template_iou = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
    const double aspect = static_cast<double>(std::min(bw, bh)) / std::max(bw, bh);
    const double miss = (1.0 - template_iou) / options_.shape_tolerance;
    Detection d;
    d.box = {(x0 + bw / 2.0) / W, (y0 + bh / 2.0) / H, static_cast<double>(bw) / W, static_cast<double>(bh) / H};
    d.score = std::clamp(std::exp(-miss * miss) * aspect, 0.0, 1.0);
    if (d.score < options_.min_score) continue;
    d.matched_phrase = phrase;
    out.push_back(d);
  }
  return out;
}

ExternalDetector::ExternalDetector(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw std::invalid_argument("external detector: empty command");
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

std::vector<Detection> ExternalDetector::detect(const Image& image, const std::string& phrase) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const fs::path png = fs::temp_directory_path() / ("boxguide_detect_" + hex64((std::uint64_t{rd()} << 32) | rd()) + ".png");
  write_png(png.string(), image, {});
  const std::string cmd = command_ + " " + shell_quote(png.string()) + " " + shell_quote(phrase);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    fs::remove(png);
    throw std::runtime_error("external detector: cannot run '" + command_ + "'");
  }
  std::string output;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) output += buf;
  const int status = pclose(pipe);
  std::error_code ec;
  fs::remove(png, ec);
  if (status != 0) {
    throw std::runtime_error("external detector '" + command_ + "' exited with status " + std::to_string(status));
  }
  std::vector<Detection> out;
  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream in(line);
    Detection d;
    if (!(in >> d.box.cx >> d.box.cy >> d.box.w >> d.box.h >> d.score) || !(d.score >= 0.0 && d.score <= 1.0)) {
      throw std::runtime_error("external detector: malformed line '" + line + "'");
    }
    d.matched_phrase = phrase;
    out.push_back(d);
  }
  return out;
}

std::unique_ptr<Detector> make_detector(const std::string& spec) {
  if (spec == "oracle") return std::make_unique<SyntheticOracle>();
  if (spec.rfind("external:", 0) == 0) return std::make_unique<ExternalDetector>(spec.substr(9));
  throw std::invalid_argument("unknown detector '" + spec + "' (expected oracle or external:<cmd>)");
}

double min_object_score(const Image& image, const std::vector<std::string>& phrases, Detector& detector,
                        std::vector<double>& per_phrase) {
  per_phrase.clear();
  if (phrases.empty()) throw std::invalid_argument("min_object_score: no entity phrases");
  double result = 1.0;
  for (const auto& phrase : phrases) {
    double best = 0.0;
    for (const auto& d : detector.detect(image, phrase)) {
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw std::runtime_error("detector returned a score outside [0, 1]");
      best = std::max(best, d.score);
    }
    per_phrase.push_back(best);
    result = std::min(result, best);
  }
  return result;
}

double min_object_score(const Image& image, const std::vector<std::string>& phrases, Detector& detector) {
  std::vector<double> scores;
  return min_object_score(image, phrases, detector, scores);
}

std::vector<std::string> detection_phrases(const std::string& prompt, const EntityLexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& span : parse_entities(prompt, lexicon).spans) out.push_back("a " + span.head_noun);
  return out;
}

// ------------------------------------------------------------------- report

void EvalReport::aggregate() {
  failures = 0;
  double sum = 0.0;
  int n = 0;
  for (const auto& r : records) {
    if (r.failed) {
      ++failures;
      continue;
    }
    sum += r.score;
    ++n;
  }
  mean = n > 0 ? sum / n : 0.0;
  double sq = 0.0;
  for (const auto& r : records) {
    if (!r.failed) sq += (r.score - mean) * (r.score - mean);
  }
  std = n > 0 ? std::sqrt(sq / n) : 0.0;
}

EvalReport evaluate(const ImageGenerator& generator, const std::vector<std::string>& prompts,
                    const std::vector<std::uint64_t>& seeds, Detector& detector, const std::string& method,
                    const std::string& config_hash) {
  EvalReport report;
  report.method = method;
  report.detector = detector.id();
  report.config_hash = config_hash;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const std::vector<std::string> phrases = detection_phrases(prompts[p]);
    for (std::uint64_t seed : seeds) {
      EvalRecord rec;
      rec.prompt_index = static_cast<int>(p);
      rec.prompt = prompts[p];
      rec.seed = seed;
      Image image;
      try {
        image = generator(prompts[p], seed);
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
        report.records.push_back(std::move(rec));
        continue;
      }
      rec.score = min_object_score(image, phrases, detector, rec.entity_scores);
      report.records.push_back(std::move(rec));
    }
  }
  report.aggregate();
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  out << format_record({{"record", "header"},
                        {"method", report.method},
                        {"detector", report.detector},
                        {"config_hash", report.config_hash},
                        {"samples", std::to_string(report.records.size())},
                        {"failures", std::to_string(report.failures)},
                        {"mean", format_double(report.mean)},
                        {"std", format_double(report.std)},
                        {"std_over", "per-sample records"}})
      << '\n';
  for (const auto& r : report.records) {
    std::string scores;
    for (double s : r.entity_scores) scores += (scores.empty() ? "" : ",") + format_double(s);
    out << format_record({{"record", "sample"},
                          {"prompt_index", std::to_string(r.prompt_index)},
                          {"seed", std::to_string(r.seed)},
                          {"prompt", r.prompt},
                          {"failed", r.failed ? "1" : "0"},
                          {"score", format_double(r.score)},
                          {"entity_scores", scores},
                          {"error", r.error}})
        << '\n';
  }
}

EvalReport read_report(std::istream& in) {
  EvalReport report;
  std::string line;
  bool header = false;
  double stored_mean = 0.0, stored_std = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Record r = parse_record(line);
    const std::string& kind = record_value(r, "record");
    if (kind == "header") {
      header = true;
      report.method = record_value(r, "method");
      report.detector = record_value(r, "detector");
      report.config_hash = record_value(r, "config_hash");
      stored_mean = std::stod(record_value(r, "mean"));
      stored_std = std::stod(record_value(r, "std"));
    } else if (kind == "sample") {
      EvalRecord rec;
      rec.prompt_index = std::stoi(record_value(r, "prompt_index"));
      rec.seed = std::stoull(record_value(r, "seed"));
      rec.prompt = record_value(r, "prompt");
      rec.failed = record_value(r, "failed") == "1";
      rec.score = std::stod(record_value(r, "score"));
      rec.error = record_value(r, "error");
      std::stringstream scores(record_value(r, "entity_scores"));
      std::string s;
      while (std::getline(scores, s, ',')) rec.entity_scores.push_back(std::stod(s));
      report.records.push_back(std::move(rec));
    } else {
      throw std::invalid_argument("report: unknown record kind " + kind);
    }
  }
  if (!header) throw std::invalid_argument("report: missing header record");
  report.aggregate();
  if (std::abs(report.mean - stored_mean) > 1e-12 || std::abs(report.std - stored_std) > 1e-12) {
    throw std::invalid_argument("report: stored aggregate disagrees with its records");
  }
  return report;
}

}  // namespace boxguide
