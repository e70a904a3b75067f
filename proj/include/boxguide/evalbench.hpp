#pragma once

// Two-entity benchmark prompts, detector adapters and the minimum object
// score aggregated into a persisted report.

#include "boxguide/box.hpp"
#include "boxguide/image.hpp"
#include "boxguide/prompt_parser.hpp"
#include "boxguide/shapes.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace boxguide {

enum class BenchCategory { coco, noncoco };

std::string_view to_string(BenchCategory category);
/// Accepts "coco" and "noncoco" (also "non-coco"), case-insensitive.
BenchCategory bench_category_from_name(std::string_view name);

struct BenchVocabulary {
  std::vector<std::string> animals;
  std::vector<std::string> objects;
  std::vector<std::string> colors;

  /// Animals followed by objects.
  std::vector<std::string> entities() const;
};

const BenchVocabulary& bench_vocabulary(BenchCategory category);

struct BenchmarkPrompt {
  std::string text;  // "a <colorA> <entityA> and a <colorB> <entityB>"
  std::vector<EntitySpan> entities;
  BenchCategory category = BenchCategory::coco;
  std::string color_a, entity_a, color_b, entity_b;
};

/// All C(16, 2) entity pairs in index order; the two colours of prompt k are
/// distinct and drawn from an RNG seeded by (seed, k).
std::vector<BenchmarkPrompt> gen_benchmark(BenchCategory category, std::uint64_t seed);

/// `count` prompts "a <cA> <sA> and a <cB> <sB>" over the toy shapes with
/// sA != sB and cA != cB, prompt k drawn from an RNG seeded by (seed, k).
std::vector<BenchmarkPrompt> toy_prompts(int count, std::uint64_t seed);

/// One prompt per line.
void write_prompts(std::ostream& out, const std::vector<BenchmarkPrompt>& prompts, const std::string& config_hash);
/// Reads prompt text, one per line; '#' lines and blank lines are skipped.
std::vector<std::string> read_prompt_lines(std::istream& in);

struct Detection {
  Box<double> box;
  double score = 0.0;  // in [0, 1]
  std::string matched_phrase;
};

class Detector {
 public:
  virtual ~Detector() = default;
  /// Throws on failure; an empty result means nothing was found.
  virtual std::vector<Detection> detect(const Image& image, const std::string& phrase) = 0;
  virtual std::string id() const = 0;
};

struct OracleOptions {
  double max_color_distance = 0.35;  // RGB distance beyond which a pixel is background
  int min_area = 20;                 // pixels
  double shape_tolerance = 0.15;     // score = exp(-((1 - template IoU) / tolerance)^2) * aspect
  double min_score = 0.3;            // weaker candidates are not reported
};

/// Analytic detector for rendered shape scenes: pixels are labelled with
/// the nearest palette colour (or background), 4-connected components of
/// one colour are candidates, and a candidate's score for the phrase's
/// shape is its IoU with the ideal shape inscribed in its bounding box,
/// sharpened and scaled by the box aspect ratio. Phrases whose noun is not
/// a toy shape yield no detections. Candidates scoring below
/// `min_score` are discarded, as a box threshold would in a real detector.
class SyntheticOracle final : public Detector {
 public:
  explicit SyntheticOracle(OracleOptions options = {});
  std::vector<Detection> detect(const Image& image, const std::string& phrase) override;
  std::string id() const override { return "synthetic-oracle"; }

 private:
  OracleOptions options_;
  EntityLexicon lexicon_;
};

/// Runs `<command> <png path> <phrase>` and reads one detection per stdout
/// line as `cx cy w h score` (normalized box, score in [0, 1]). A non-zero
/// exit status or a malformed line throws std::runtime_error.
class ExternalDetector final : public Detector {
 public:
  explicit ExternalDetector(std::string command);
  std::vector<Detection> detect(const Image& image, const std::string& phrase) override;
  std::string id() const override { return "external:" + command_; }

 private:
  std::string command_;
};

/// "oracle" or "external:<cmd>". Throws std::invalid_argument otherwise.
std::unique_ptr<Detector> make_detector(const std::string& spec);

/// Per phrase the best detection score (0 without detections), then the
/// minimum over phrases. Detector errors propagate.
double min_object_score(const Image& image, const std::vector<std::string>& phrases, Detector& detector);
/// Same, also returning the per-phrase scores.
double min_object_score(const Image& image, const std::vector<std::string>& phrases, Detector& detector,
                        std::vector<double>& per_phrase);

/// Name-only detection phrases ("a <noun>") for the prompt's entities.
std::vector<std::string> detection_phrases(const std::string& prompt,
                                           const EntityLexicon& lexicon = EntityLexicon::builtin());

struct EvalRecord {
  int prompt_index = 0;
  std::string prompt;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double score = 0.0;
  std::vector<double> entity_scores;
};

struct EvalReport {
  std::string method;
  std::string detector;
  std::string config_hash;
  std::vector<EvalRecord> records;
  double mean = 0.0;
  double std = 0.0;  // population std over successful per-sample records
  int failures = 0;

  /// Recomputes mean, std and failures from the records.
  void aggregate();
};

using ImageGenerator = std::function<Image(const std::string& prompt, std::uint64_t seed)>;

/// Scores every (prompt, seed) pair. Generation failures are recorded and
/// excluded from the aggregate; detector failures propagate.
EvalReport evaluate(const ImageGenerator& generator, const std::vector<std::string>& prompts,
                    const std::vector<std::uint64_t>& seeds, Detector& detector, const std::string& method,
                    const std::string& config_hash = "");

void write_report(std::ostream& out, const EvalReport& report);
/// Aggregates are recomputed from the records; throws std::invalid_argument
/// if the stored header values disagree with the recomputation.
EvalReport read_report(std::istream& in);

}  // namespace boxguide
