#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "silc/random.hpp"
#include "silc/unicode.hpp"
#include "silc/util.hpp"

namespace silc {

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

enum class Polarity { Positive, Negative, Neutral };

constexpr std::size_t kPolarityCount = 3;

inline const char* polarity_label(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "positive";
    case Polarity::Negative: return "negative";
    case Polarity::Neutral: return "neutral";
  }
  return "neutral";
}

// Capitalized English form used in the serialized record format.
inline const char* polarity_name(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "Positive";
    case Polarity::Negative: return "Negative";
    case Polarity::Neutral: return "Neutral";
  }
  return "Neutral";
}

inline const char* polarity_name_zh(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "正面";
    case Polarity::Negative: return "负面";
    case Polarity::Neutral: return "中立";
  }
  return "中立";
}

// Fixed bilingual label map; lookups are ASCII-case-insensitive.
inline std::optional<Polarity> parse_polarity(std::string_view label) {
  static const std::map<std::string, Polarity, std::less<>> table = {
      {"positive", Polarity::Positive}, {"negative", Polarity::Negative},
      {"neutral", Polarity::Neutral},   {"pos", Polarity::Positive},
      {"neg", Polarity::Negative},      {"neu", Polarity::Neutral},
      {"正面", Polarity::Positive},     {"负面", Polarity::Negative},
      {"中立", Polarity::Neutral},      {"中性", Polarity::Neutral},
  };
  auto it = table.find(lower_ascii(trim(label)));
  if (it == table.end()) return std::nullopt;
  return it->second;
}

enum class Lang { En, Zh };

inline const char* lang_label(Lang lang) { return lang == Lang::En ? "en" : "zh"; }

inline std::optional<Lang> parse_lang(std::string_view s) {
  if (s == "en") return Lang::En;
  if (s == "zh") return Lang::Zh;
  return std::nullopt;
}

// One annotated entity. Offsets are Unicode code-point indices into the
// document text, start inclusive, end exclusive.
struct EntityAnnotation {
  std::string value;
  std::int64_t start = 0;
  std::int64_t end = 0;
  Polarity sentiment = Polarity::Neutral;

  friend bool operator==(const EntityAnnotation&, const EntityAnnotation&) = default;
};

struct Document {
  std::string id;
  std::string text;
  Lang lang = Lang::En;
  std::vector<EntityAnnotation> entities;  // sorted by start

  friend bool operator==(const Document&, const Document&) = default;
};

using Dataset = std::vector<Document>;

struct SchemaViolation : std::runtime_error {
  std::size_t line;
  SchemaViolation(std::size_t line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct UnalignableEntity : std::runtime_error {
  std::string value;
  explicit UnalignableEntity(std::string v)
      : std::runtime_error("no non-overlapping occurrence for entity '" + v + "'"), value(std::move(v)) {}
};

struct TokenBoundaryMismatch : std::runtime_error {
  std::int64_t start, end;
  TokenBoundaryMismatch(std::int64_t s, std::int64_t e)
      : std::runtime_error("entity span (" + std::to_string(s) + ", " + std::to_string(e) +
                           ") does not align to token boundaries"),
        start(s),
        end(e) {}
};

struct MalformedTagSequence : std::runtime_error {
  explicit MalformedTagSequence(const std::string& what) : std::runtime_error(what) {}
};

// Checks all Document invariants; returns an error message instead of
// throwing so loaders can attach line numbers.
inline std::optional<std::string> document_violation(const Document& doc) {
  const std::u32string cps = utf8_decode(doc.text);
  const auto n = static_cast<std::int64_t>(cps.size());
  std::int64_t prev_end = -1;
  std::int64_t prev_start = -1;
  for (const auto& e : doc.entities) {
    if (e.start < 0 || e.start >= e.end || e.end > n)
      return "entity '" + e.value + "' span (" + std::to_string(e.start) + ", " + std::to_string(e.end) +
             ") out of range for text of length " + std::to_string(n);
    const std::string surface =
        utf8_encode(std::u32string_view(cps).substr(static_cast<std::size_t>(e.start),
                                                    static_cast<std::size_t>(e.end - e.start)));
    if (surface != e.value)
      return "entity value '" + e.value + "' does not match text span '" + surface + "'";
    if (e.start < prev_start) return "entities not sorted by start";
    if (e.start < prev_end) return "entity spans overlap";
    prev_start = e.start;
    prev_end = e.end;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

struct Token {
  std::string text;
  std::int64_t start = 0;  // code-point offsets
  std::int64_t end = 0;
};

inline bool is_space_cp(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == 0x3000 || cp == 0x00A0;
}

// en: maximal runs of non-whitespace code points. zh: one token per
// non-whitespace code point. Length statistics and BILOU both use this.
inline std::vector<Token> tokenize(const std::string& text, Lang lang) {
  const std::u32string cps = utf8_decode(text);
  std::vector<Token> tokens;
  if (lang == Lang::Zh) {
    for (std::size_t i = 0; i < cps.size(); ++i) {
      if (is_space_cp(cps[i])) continue;
      tokens.push_back({utf8_encode(std::u32string_view(&cps[i], 1)), static_cast<std::int64_t>(i),
                        static_cast<std::int64_t>(i + 1)});
    }
    return tokens;
  }
  std::size_t i = 0;
  while (i < cps.size()) {
    if (is_space_cp(cps[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !is_space_cp(cps[j])) ++j;
    tokens.push_back({utf8_encode(std::u32string_view(&cps[i], j - i)), static_cast<std::int64_t>(i),
                      static_cast<std::int64_t>(j)});
    i = j;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Span alignment
// ---------------------------------------------------------------------------

namespace detail {

inline char32_t fold_ascii(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  return cp;
}

inline std::vector<std::size_t> find_occurrences(const std::u32string& text, const std::u32string& needle,
                                                 bool fold_case) {
  std::vector<std::size_t> hits;
  if (needle.empty() || needle.size() > text.size()) return hits;
  for (std::size_t pos = 0; pos + needle.size() <= text.size(); ++pos) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      char32_t a = text[pos + k], b = needle[k];
      if (fold_case) {
        a = fold_ascii(a);
        b = fold_ascii(b);
      }
      if (a != b) {
        match = false;
        break;
      }
    }
    if (match) hits.push_back(pos);
  }
  return hits;
}

}  // namespace detail

// Assigns a span to each requested entity value: leftmost occurrence that
// does not overlap a previously assigned span, exact match first with a
// case-insensitive fallback for English. Values are processed longest first
// so that textually nested values ("AAB" vs "AA") claim their own
// occurrences; output is restored to start order. The annotation value is
// the surface form found in the text.
inline std::vector<EntityAnnotation> align_spans(const std::string& text,
                                                 const std::vector<std::pair<std::string, Polarity>>& entity_values,
                                                 Lang lang) {
  const std::u32string cps = utf8_decode(text);
  std::vector<std::size_t> order(entity_values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::u32string> needles;
  needles.reserve(entity_values.size());
  for (const auto& [value, _] : entity_values) needles.push_back(utf8_decode(value));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return needles[a].size() > needles[b].size(); });

  std::vector<std::pair<std::int64_t, std::int64_t>> taken;
  auto overlaps = [&taken](std::int64_t s, std::int64_t e) {
    for (const auto& [ts, te] : taken)
      if (s < te && ts < e) return true;
    return false;
  };

  std::vector<EntityAnnotation> result;
  for (std::size_t idx : order) {
    const auto& needle = needles[idx];
    if (needle.empty()) throw UnalignableEntity(entity_values[idx].first);
    std::optional<std::size_t> chosen;
    for (bool fold : {false, true}) {
      if (fold && lang != Lang::En) break;
      for (std::size_t pos : detail::find_occurrences(cps, needle, fold)) {
        const auto s = static_cast<std::int64_t>(pos);
        const auto e = static_cast<std::int64_t>(pos + needle.size());
        if (!overlaps(s, e)) {
          chosen = pos;
          break;
        }
      }
      if (chosen) break;
    }
    if (!chosen) throw UnalignableEntity(entity_values[idx].first);
    const auto s = static_cast<std::int64_t>(*chosen);
    const auto e = static_cast<std::int64_t>(*chosen + needle.size());
    taken.emplace_back(s, e);
    result.push_back({utf8_encode(std::u32string_view(cps).substr(*chosen, needle.size())), s, e,
                      entity_values[idx].second});
  }
  std::sort(result.begin(), result.end(),
            [](const EntityAnnotation& a, const EntityAnnotation& b) { return a.start < b.start; });
  return result;
}

// ---------------------------------------------------------------------------
// BILOU codec
// ---------------------------------------------------------------------------

struct BilouToken {
  std::string token;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::string tag;  // "O" or {B,I,L,U}-{Positive,Negative,Neutral}

  friend bool operator==(const BilouToken&, const BilouToken&) = default;
};

inline std::vector<BilouToken> to_bilou(const Document& doc) {
  const std::vector<Token> tokens = tokenize(doc.text, doc.lang);
  std::vector<BilouToken> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back({t.text, t.start, t.end, "O"});

  for (const auto& e : doc.entities) {
    std::optional<std::size_t> first, last;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].start == e.start) first = i;
      if (tokens[i].end == e.end) last = i;
    }
    if (!first || !last || *first > *last) throw TokenBoundaryMismatch(e.start, e.end);
    // Tokens strictly inside must not leak past the span.
    for (std::size_t i = *first; i <= *last; ++i)
      if (tokens[i].start < e.start || tokens[i].end > e.end) throw TokenBoundaryMismatch(e.start, e.end);
    const std::string pol = polarity_name(e.sentiment);
    if (*first == *last) {
      out[*first].tag = "U-" + pol;
    } else {
      out[*first].tag = "B-" + pol;
      for (std::size_t i = *first + 1; i < *last; ++i) out[i].tag = "I-" + pol;
      out[*last].tag = "L-" + pol;
    }
  }
  return out;
}

// Inverse codec. Needs the source text to recover exact surface forms for
// multi-token entities (inter-token whitespace is not retained by tokens).
inline std::vector<EntityAnnotation> from_bilou(const std::string& text, const std::vector<BilouToken>& tagged) {
  std::vector<EntityAnnotation> entities;
  std::optional<std::pair<std::int64_t, Polarity>> open;  // (start, polarity)

  auto parse_tag = [](const std::string& tag) -> std::pair<char, Polarity> {
    if (tag.size() < 3 || tag[1] != '-') throw MalformedTagSequence("unrecognized tag '" + tag + "'");
    auto pol = parse_polarity(tag.substr(2));
    if (!pol) throw MalformedTagSequence("unrecognized polarity in tag '" + tag + "'");
    const char kind = tag[0];
    if (kind != 'B' && kind != 'I' && kind != 'L' && kind != 'U')
      throw MalformedTagSequence("unrecognized tag '" + tag + "'");
    return {kind, *pol};
  };

  for (const auto& t : tagged) {
    if (t.tag == "O") {
      if (open) throw MalformedTagSequence("entity left open at O tag");
      continue;
    }
    auto [kind, pol] = parse_tag(t.tag);
    switch (kind) {
      case 'U':
        if (open) throw MalformedTagSequence("U tag inside an open entity");
        entities.push_back({cp_substr(text, static_cast<std::size_t>(t.start), static_cast<std::size_t>(t.end)),
                            t.start, t.end, pol});
        break;
      case 'B':
        if (open) throw MalformedTagSequence("B tag inside an open entity");
        open = {t.start, pol};
        break;
      case 'I':
        if (!open) throw MalformedTagSequence("I tag without preceding B");
        if (open->second != pol) throw MalformedTagSequence("polarity change inside entity");
        break;
      case 'L': {
        if (!open) throw MalformedTagSequence("L tag without preceding B");
        if (open->second != pol) throw MalformedTagSequence("polarity change inside entity");
        entities.push_back({cp_substr(text, static_cast<std::size_t>(open->first), static_cast<std::size_t>(t.end)),
                            open->first, t.end, pol});
        open.reset();
        break;
      }
    }
  }
  if (open) throw MalformedTagSequence("dangling B/I at end of sequence");
  return entities;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
  std::int64_t n_texts = 0;
  std::int64_t n_single_entity = 0;
  std::int64_t n_multi_entity = 0;
  double avg_len_tokens = 0.0;
  std::int64_t max_len = 0;
  std::int64_t min_len = 0;
  std::int64_t n_positive = 0;
  std::int64_t n_negative = 0;
  std::int64_t n_neutral = 0;
  std::int64_t n_entities = 0;
  double avg_entities_per_text = 0.0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

inline double round2(double x) { return std::llround(x * 100.0) / 100.0; }

inline DatasetStats compute_stats(const Dataset& dataset) {
  DatasetStats s;
  s.n_texts = static_cast<std::int64_t>(dataset.size());
  if (dataset.empty()) return s;
  std::int64_t total_tokens = 0;
  s.min_len = std::numeric_limits<std::int64_t>::max();
  for (const auto& doc : dataset) {
    const auto len = static_cast<std::int64_t>(tokenize(doc.text, doc.lang).size());
    total_tokens += len;
    s.max_len = std::max(s.max_len, len);
    s.min_len = std::min(s.min_len, len);
    if (doc.entities.size() == 1) ++s.n_single_entity;
    if (doc.entities.size() > 1) ++s.n_multi_entity;
    for (const auto& e : doc.entities) {
      switch (e.sentiment) {
        case Polarity::Positive: ++s.n_positive; break;
        case Polarity::Negative: ++s.n_negative; break;
        case Polarity::Neutral: ++s.n_neutral; break;
      }
    }
    s.n_entities += static_cast<std::int64_t>(doc.entities.size());
  }
  s.avg_len_tokens = round2(static_cast<double>(total_tokens) / static_cast<double>(s.n_texts));
  s.avg_entities_per_text = round2(static_cast<double>(s.n_entities) / static_cast<double>(s.n_texts));
  return s;
}

inline nlohmann::json stats_to_json(const DatasetStats& s) {
  return {{"n_texts", s.n_texts},
          {"n_single_entity", s.n_single_entity},
          {"n_multi_entity", s.n_multi_entity},
          {"avg_len_tokens", s.avg_len_tokens},
          {"max_len", s.max_len},
          {"min_len", s.min_len},
          {"positive_entities", s.n_positive},
          {"negative_entities", s.n_negative},
          {"neutral_entities", s.n_neutral},
          {"n_entities", s.n_entities},
          {"avg_entities_per_text", s.avg_entities_per_text}};
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Deterministic split: document ids are sorted, shuffled with the seed, and
// the first round(f*n) ids form the test side. Membership therefore depends
// only on the id set and the spec, not on input order. Both parts keep the
// input dataset's relative order.
inline std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must be in (0, 1)");
  std::vector<std::string> ids;
  ids.reserve(dataset.size());
  for (const auto& d : dataset) ids.push_back(d.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(spec.seed);
  rng.shuffle(ids);
  const auto k = static_cast<std::size_t>(
      std::llround(spec.test_fraction * static_cast<double>(dataset.size())));
  std::set<std::string> test_ids(ids.begin(), ids.begin() + std::min(k, ids.size()));
  Dataset train, test;
  for (const auto& d : dataset) {
    if (test_ids.count(d.id))
      test.push_back(d);
    else
      train.push_back(d);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

inline nlohmann::json document_to_json(const Document& doc) {
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& e : doc.entities)
    entities.push_back({{"value", e.value}, {"start", e.start}, {"end", e.end}, {"tag", polarity_label(e.sentiment)}});
  return {{"id", doc.id}, {"text", doc.text}, {"lang", lang_label(doc.lang)}, {"entities", entities}};
}

inline Document document_from_json(const nlohmann::json& j, std::size_t line_no) {
  auto require = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw SchemaViolation(line_no, std::string("missing field '") + key + "'");
    return j.at(key);
  };
  Document doc;
  if (!require("id").is_string()) throw SchemaViolation(line_no, "'id' must be a string");
  doc.id = j.at("id").get<std::string>();
  if (!require("text").is_string()) throw SchemaViolation(line_no, "'text' must be a string");
  doc.text = j.at("text").get<std::string>();
  const auto lang = parse_lang(require("lang").is_string() ? j.at("lang").get<std::string>() : "");
  if (!lang) throw SchemaViolation(line_no, "'lang' must be \"en\" or \"zh\"");
  doc.lang = *lang;
  const auto& entities = require("entities");
  if (!entities.is_array()) throw SchemaViolation(line_no, "'entities' must be an array");
  for (const auto& ej : entities) {
    EntityAnnotation e;
    if (!ej.contains("value") || !ej.at("value").is_string())
      throw SchemaViolation(line_no, "entity missing string field 'value'");
    if (!ej.contains("start") || !ej.at("start").is_number_integer())
      throw SchemaViolation(line_no, "entity missing integer field 'start'");
    if (!ej.contains("end") || !ej.at("end").is_number_integer())
      throw SchemaViolation(line_no, "entity missing integer field 'end'");
    if (!ej.contains("tag") || !ej.at("tag").is_string())
      throw SchemaViolation(line_no, "entity missing string field 'tag'");
    e.value = ej.at("value").get<std::string>();
    e.start = ej.at("start").get<std::int64_t>();
    e.end = ej.at("end").get<std::int64_t>();
    const auto pol = parse_polarity(ej.at("tag").get<std::string>());
    if (!pol) throw SchemaViolation(line_no, "unrecognized tag '" + ej.at("tag").get<std::string>() + "'");
    e.sentiment = *pol;
    doc.entities.push_back(std::move(e));
  }
  std::sort(doc.entities.begin(), doc.entities.end(),
            [](const EntityAnnotation& a, const EntityAnnotation& b) { return a.start < b.start; });
  if (auto violation = document_violation(doc)) throw SchemaViolation(line_no, *violation);
  return doc;
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Dataset dataset;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaViolation(line_no, std::string("invalid JSON: ") + e.what());
    }
    Document doc = document_from_json(j, line_no);
    if (!seen_ids.insert(doc.id).second) throw SchemaViolation(line_no, "duplicate document id '" + doc.id + "'");
    dataset.push_back(std::move(doc));
  }
  return dataset;
}

inline void save_jsonl(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& doc : dataset) out << document_to_json(doc).dump() << "\n";
}

inline std::uint64_t dataset_fingerprint(const Dataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& doc : dataset) h = fnv1a64(document_to_json(doc).dump(), h);
  return h;
}

inline std::map<std::string, const Document*> index_by_id(const Dataset& dataset) {
  std::map<std::string, const Document*> m;
  for (const auto& d : dataset) m[d.id] = &d;
  return m;
}

}  // namespace silc
