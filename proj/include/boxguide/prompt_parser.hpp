#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace boxguide {

enum class LexCategory { animal, object, color, determiner };

std::string_view to_string(LexCategory category);

/// Word lists driving the chunker and the span filter. Entity nouns (animal and
/// object entries) may span several words ("teddy bear"); each gets a stable id
/// in insertion order.
class EntityLexicon {
 public:
  /// The shipped vocabulary: benchmark COCO and open-domain entities, the COCO
  /// class names, a few common scene nouns, the toy shapes, 11 colors and
  /// determiners.
  static EntityLexicon builtin();
  static const std::string& builtin_text();

  /// `category<TAB>word` per line; blank lines and lines starting with '#'
  /// are skipped. Throws std::runtime_error on a malformed line.
  static EntityLexicon parse(std::istream& in);
  static EntityLexicon from_file(const std::string& path);

  void add(LexCategory category, std::string word);

  bool is_color(std::string_view word) const;
  bool is_determiner(std::string_view word) const;
  /// Id of an entity noun (exact lowercase match, or a simple plural of one).
  std::optional<int> entity_id(std::string_view noun) const;
  std::optional<LexCategory> entity_category(int id) const;
  const std::string& entity_name(int id) const;
  std::size_t entity_count() const { return entities_.size(); }
  int max_entity_words() const { return max_entity_words_; }

  const std::vector<std::string>& colors() const { return colors_; }
  std::vector<std::string> entities_in(LexCategory category) const;
  /// Every word appearing in any entry, lowercase, first-seen order.
  std::vector<std::string> words() const;

  std::string to_text() const;

 private:
  std::vector<std::pair<std::string, LexCategory>> entities_;
  std::map<std::string, int> entity_index_;
  std::vector<std::string> colors_;
  std::vector<std::string> determiners_;
  std::vector<std::pair<LexCategory, std::string>> entries_;
  int max_entity_words_ = 1;
};

struct Token {
  std::string text;
  std::size_t begin = 0;  // character offsets into the source text, [begin, end)
  std::size_t end = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<Token> tokenize(std::string_view text) const = 0;
  virtual bool provides_alignment() const = 0;
  virtual std::string id() const = 0;
};

/// Whitespace tokenizer that also splits punctuation and the clitic "'s".
/// No begin/end special tokens.
class WordTokenizer final : public Tokenizer {
 public:
  std::vector<Token> tokenize(std::string_view text) const override;
  bool provides_alignment() const override { return true; }
  std::string id() const override { return "word-v1"; }
};

struct EntitySpan {
  std::string phrase;
  std::string head_noun;
  std::optional<std::string> attribute;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
  std::vector<int> token_indices;
};

struct ParsedPrompt {
  std::string prompt;
  std::vector<EntitySpan> spans;
  std::string tokenizer_id;
};

std::string to_lower(std::string_view text);

/// Maximal non-overlapping `[determiner]? [color]* noun` chunks whose noun
/// resolves in the lexicon, ordered by character offset. Throws
/// std::invalid_argument on an empty prompt.
ParsedPrompt parse_entities(const std::string& prompt, const EntityLexicon& lexicon,
                            const Tokenizer& tokenizer = WordTokenizer{});

/// Lexicon head noun of a free-form phrase (longest entity suffix), if any.
std::optional<std::string> resolve_head_noun(std::string_view phrase, const EntityLexicon& lexicon);

/// Keeps spans whose head noun is a lexicon entity.
std::vector<EntitySpan> filter_spans(const std::vector<EntitySpan>& spans, const EntityLexicon& lexicon);

/// Indices of tokens overlapping the span's character range. Throws
/// std::invalid_argument if the range is invalid or matches no token, and
/// std::runtime_error if the tokenizer has no character alignment.
std::vector<int> token_indices(const std::string& prompt, const EntitySpan& span,
                               const Tokenizer& tokenizer);

/// Span whose phrase is the first occurrence of `phrase` in `prompt`.
EntitySpan span_from_phrase(const std::string& prompt, const std::string& phrase);

}  // namespace boxguide
