#include "boxguide/prompt_parser.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace boxguide {

namespace {

const char* kBuiltinLexicon = R"(# boxguide builtin lexicon: category<TAB>word
# benchmark vocabulary (COCO)
animal	cat
animal	dog
animal	bird
animal	bear
animal	horse
animal	elephant
animal	sheep
animal	giraffe
object	backpack
object	suitcase
object	chair
object	car
object	couch
object	bench
object	cake
object	umbrella
# benchmark vocabulary (open domain)
animal	tiger
animal	panda
animal	lion
animal	fox
animal	squirrel
animal	turkey
animal	penguin
animal	turtle
object	shoes
object	television
object	watermelon
object	candle
object	bucket
object	hammock
object	pumpkin
object	carrot
# remaining COCO classes
animal	cow
animal	zebra
object	person
object	bicycle
object	motorcycle
object	airplane
object	bus
object	train
object	truck
object	boat
object	traffic light
object	fire hydrant
object	stop sign
object	parking meter
object	handbag
object	tie
object	frisbee
object	skis
object	snowboard
object	sports ball
object	kite
object	baseball bat
object	baseball glove
object	skateboard
object	surfboard
object	tennis racket
object	bottle
object	wine glass
object	cup
object	fork
object	knife
object	spoon
object	bowl
object	banana
object	apple
object	sandwich
object	orange
object	broccoli
object	hot dog
object	pizza
object	donut
object	potted plant
object	bed
object	dining table
object	toilet
object	tv
object	laptop
object	mouse
object	remote
object	keyboard
object	cell phone
object	microwave
object	oven
object	toaster
object	sink
object	refrigerator
object	book
object	clock
object	vase
object	scissors
object	teddy bear
object	hair drier
object	toothbrush
# common scene nouns
object	man
object	woman
object	boy
object	girl
object	child
object	fruit
object	clock tower
object	tree
object	flower
# toy shapes
object	square
object	circle
object	triangle
# colors
color	red
color	orange
color	yellow
color	green
color	blue
color	purple
color	pink
color	brown
color	gray
color	black
color	white
# determiners
determiner	a
determiner	an
determiner	the
determiner	this
determiner	that
determiner	these
determiner	those
determiner	some
determiner	many
determiner	each
determiner	every
determiner	another
determiner	one
determiner	two
determiner	three
determiner	several
determiner	my
determiner	his
determiner	her
determiner	their
determiner	its
determiner	our
determiner	your
)";

std::optional<LexCategory> parse_category(std::string_view s) {
  if (s == "animal") return LexCategory::animal;
  if (s == "object") return LexCategory::object;
  if (s == "color") return LexCategory::color;
  if (s == "determiner") return LexCategory::determiner;
  return std::nullopt;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_punct(char c) {
  return c == ',' || c == '.' || c == '!' || c == '?' || c == ';' || c == ':' || c == '"' ||
         c == '(' || c == ')';
}

// Longest entity match starting at token `pos`; returns (end token, entity id).
std::optional<std::pair<std::size_t, int>> match_entity(const std::vector<std::string>& words,
                                                        std::size_t pos, const EntityLexicon& lexicon) {
  const std::size_t max_len = static_cast<std::size_t>(lexicon.max_entity_words());
  for (std::size_t len = std::min(max_len, words.size() - pos); len >= 1; --len) {
    std::string phrase;
    for (std::size_t k = 0; k < len; ++k) {
      if (k) phrase += ' ';
      phrase += words[pos + k];
    }
    if (auto id = lexicon.entity_id(phrase)) return std::make_pair(pos + len, *id);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(LexCategory category) {
  switch (category) {
    case LexCategory::animal: return "animal";
    case LexCategory::object: return "object";
    case LexCategory::color: return "color";
    case LexCategory::determiner: return "determiner";
  }
  return "unknown";
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const std::string& EntityLexicon::builtin_text() {
  static const std::string text = kBuiltinLexicon;
  return text;
}

EntityLexicon EntityLexicon::builtin() {
  std::istringstream in(builtin_text());
  return parse(in);
}

EntityLexicon EntityLexicon::parse(std::istream& in) {
  EntityLexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": expected category<TAB>word");
    }
    const auto category = parse_category(trim(line.substr(0, tab)));
    const std::string word = to_lower(trim(line.substr(tab + 1)));
    if (!category || word.empty()) {
      throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": bad entry '" + line + "'");
    }
    lex.add(*category, word);
  }
  return lex;
}

EntityLexicon EntityLexicon::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon file " + path);
  return parse(in);
}

void EntityLexicon::add(LexCategory category, std::string word) {
  word = to_lower(word);
  entries_.emplace_back(category, word);
  switch (category) {
    case LexCategory::color:
      if (!is_color(word)) colors_.push_back(word);
      break;
    case LexCategory::determiner:
      if (!is_determiner(word)) determiners_.push_back(word);
      break;
    case LexCategory::animal:
    case LexCategory::object: {
      if (entity_index_.count(word)) break;
      entity_index_[word] = static_cast<int>(entities_.size());
      entities_.emplace_back(word, category);
      const int n_words = static_cast<int>(std::count(word.begin(), word.end(), ' ')) + 1;
      max_entity_words_ = std::max(max_entity_words_, n_words);
      break;
    }
  }
}

bool EntityLexicon::is_color(std::string_view word) const {
  return std::find(colors_.begin(), colors_.end(), word) != colors_.end();
}

bool EntityLexicon::is_determiner(std::string_view word) const {
  return std::find(determiners_.begin(), determiners_.end(), word) != determiners_.end();
}

std::optional<int> EntityLexicon::entity_id(std::string_view noun) const {
  const std::string key = to_lower(noun);
  if (auto it = entity_index_.find(key); it != entity_index_.end()) return it->second;
  // Simple plurals: -s, -es, -ies.
  auto try_form = [this](const std::string& form) -> std::optional<int> {
    if (auto it = entity_index_.find(form); it != entity_index_.end()) return it->second;
    return std::nullopt;
  };
  const auto ends_with = [&key](std::string_view suffix) {
    return key.size() > suffix.size() && key.compare(key.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("ies")) {
    if (auto id = try_form(key.substr(0, key.size() - 3) + "y")) return id;
  }
  if (ends_with("es")) {
    if (auto id = try_form(key.substr(0, key.size() - 2))) return id;
  }
  if (ends_with("s")) {
    if (auto id = try_form(key.substr(0, key.size() - 1))) return id;
  }
  return std::nullopt;
}

std::optional<LexCategory> EntityLexicon::entity_category(int id) const {
  if (id < 0 || id >= static_cast<int>(entities_.size())) return std::nullopt;
  return entities_[id].second;
}

const std::string& EntityLexicon::entity_name(int id) const { return entities_.at(id).first; }

std::vector<std::string> EntityLexicon::entities_in(LexCategory category) const {
  std::vector<std::string> out;
  for (const auto& [word, cat] : entities_) {
    if (cat == category) out.push_back(word);
  }
  return out;
}

std::vector<std::string> EntityLexicon::words() const {
  std::vector<std::string> out;
  for (const auto& [cat, entry] : entries_) {
    std::istringstream in(entry);
    std::string w;
    while (in >> w) {
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    }
  }
  return out;
}

std::string EntityLexicon::to_text() const {
  std::string out;
  for (const auto& [cat, word] : entries_) {
    out += to_string(cat);
    out += '\t';
    out += word;
    out += '\n';
  }
  return out;
}

std::vector<Token> WordTokenizer::tokenize(std::string_view text) const {
  std::vector<Token> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (is_punct(c)) {
      tokens.push_back({std::string(1, c), i, i + 1});
      ++i;
      continue;
    }
    if (c == '\'') {
      // "'s" clitic or a stray apostrophe.
      std::size_t j = i + 1;
      while (j < n && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      tokens.push_back({std::string(text.substr(i, j - i)), i, j});
      i = j;
      continue;
    }
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j])) && !is_punct(text[j])) {
      if (text[j] == '\'' && j + 2 <= n && j + 1 < n && (text[j + 1] == 's' || text[j + 1] == 'S') &&
          (j + 2 == n || !std::isalpha(static_cast<unsigned char>(text[j + 2])))) {
        break;
      }
      ++j;
    }
    if (j == i) {
      ++j;  // lone apostrophe inside a word boundary
    }
    tokens.push_back({std::string(text.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

ParsedPrompt parse_entities(const std::string& prompt, const EntityLexicon& lexicon,
                            const Tokenizer& tokenizer) {
  if (prompt.empty()) throw std::invalid_argument("parse_entities: empty prompt");
  ParsedPrompt out;
  out.prompt = prompt;
  out.tokenizer_id = tokenizer.id();

  const auto tokens = tokenizer.tokenize(prompt);
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (const auto& t : tokens) words.push_back(to_lower(t.text));

  struct Candidate {
    std::size_t begin, end;       // token range
    std::size_t attr_begin, attr_end;
    int entity;
  };
  std::vector<Candidate> candidates;
  for (std::size_t s = 0; s < words.size(); ++s) {
    std::size_t p = s;
    if (lexicon.is_determiner(words[p])) ++p;
    std::size_t attr_end = p;
    while (attr_end < words.size() && lexicon.is_color(words[attr_end])) ++attr_end;
    // Back off attribute words until a noun matches; "orange" can be either.
    for (std::size_t cut = attr_end + 1; cut-- > p;) {
      if (cut >= words.size()) continue;
      if (auto m = match_entity(words, cut, lexicon)) {
        candidates.push_back({s, m->first, p, cut, m->second});
        break;
      }
    }
  }

  // Longer spans first, then earlier ones.
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    const auto la = a.end - a.begin, lb = b.end - b.begin;
    if (la != lb) return la > lb;
    return a.begin < b.begin;
  });
  std::vector<char> taken(words.size(), 0);
  std::vector<Candidate> chosen;
  for (const auto& c : candidates) {
    bool free = true;
    for (std::size_t k = c.begin; k < c.end; ++k) free = free && !taken[k];
    if (!free) continue;
    for (std::size_t k = c.begin; k < c.end; ++k) taken[k] = 1;
    chosen.push_back(c);
  }
  std::sort(chosen.begin(), chosen.end(), [](const Candidate& a, const Candidate& b) { return a.begin < b.begin; });

  for (const auto& c : chosen) {
    EntitySpan span;
    span.char_begin = tokens[c.begin].begin;
    span.char_end = tokens[c.end - 1].end;
    span.phrase = prompt.substr(span.char_begin, span.char_end - span.char_begin);
    span.head_noun = lexicon.entity_name(c.entity);
    if (c.attr_end > c.attr_begin) {
      std::string attr;
      for (std::size_t k = c.attr_begin; k < c.attr_end; ++k) {
        if (!attr.empty()) attr += ' ';
        attr += words[k];
      }
      span.attribute = attr;
    }
    for (std::size_t k = c.begin; k < c.end; ++k) span.token_indices.push_back(static_cast<int>(k));
    out.spans.push_back(std::move(span));
  }
  return out;
}

std::optional<std::string> resolve_head_noun(std::string_view phrase, const EntityLexicon& lexicon) {
  const auto tokens = WordTokenizer{}.tokenize(phrase);
  std::vector<std::string> words;
  for (const auto& t : tokens) {
    if (t.text.size() == 1 && is_punct(t.text[0])) continue;
    words.push_back(to_lower(t.text));
  }
  if (words.empty()) return std::nullopt;
  const std::size_t max_len = std::min<std::size_t>(lexicon.max_entity_words(), words.size());
  for (std::size_t len = max_len; len >= 1; --len) {
    std::string tail;
    for (std::size_t k = words.size() - len; k < words.size(); ++k) {
      if (!tail.empty()) tail += ' ';
      tail += words[k];
    }
    if (auto id = lexicon.entity_id(tail)) return lexicon.entity_name(*id);
  }
  return std::nullopt;
}

std::vector<EntitySpan> filter_spans(const std::vector<EntitySpan>& spans, const EntityLexicon& lexicon) {
  std::vector<EntitySpan> kept;
  for (const auto& span : spans) {
    if (resolve_head_noun(span.phrase, lexicon)) kept.push_back(span);
  }
  return kept;
}

std::vector<int> token_indices(const std::string& prompt, const EntitySpan& span,
                               const Tokenizer& tokenizer) {
  if (!tokenizer.provides_alignment()) {
    throw std::runtime_error("token_indices: tokenizer '" + tokenizer.id() + "' has no character alignment");
  }
  if (span.char_begin >= span.char_end || span.char_end > prompt.size() ||
      prompt.compare(span.char_begin, span.char_end - span.char_begin, span.phrase) != 0) {
    throw std::invalid_argument("token_indices: span '" + span.phrase + "' is not aligned with the prompt");
  }
  std::vector<int> out;
  const auto tokens = tokenizer.tokenize(prompt);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].begin < span.char_end && tokens[i].end > span.char_begin) out.push_back(static_cast<int>(i));
  }
  if (out.empty()) throw std::invalid_argument("token_indices: span '" + span.phrase + "' covers no token");
  return out;
}

EntitySpan span_from_phrase(const std::string& prompt, const std::string& phrase) {
  const auto at = prompt.find(phrase);
  if (at == std::string::npos || phrase.empty()) {
    throw std::invalid_argument("span_from_phrase: '" + phrase + "' not found in prompt");
  }
  EntitySpan span;
  span.phrase = phrase;
  span.char_begin = at;
  span.char_end = at + phrase.size();
  return span;
}

}  // namespace boxguide
