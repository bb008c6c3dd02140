#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "silc/corpus.hpp"

namespace silc {

// One prediction tuple as emitted by a model. Syntactic shape only: span
// validity against the source text is a downstream concern, and models may
// emit offsets that are out of range or even negative.
struct PredictionRecord {
  std::string value;
  std::int64_t start = 0;
  std::int64_t end = 0;
  Polarity tag = Polarity::Neutral;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
  friend auto operator<=>(const PredictionRecord&, const PredictionRecord&) = default;
};

struct ParseFailure : std::runtime_error {
  explicit ParseFailure(const std::string& what) : std::runtime_error(what) {}
};

inline PredictionRecord record_from_annotation(const EntityAnnotation& e) {
  return {e.value, e.start, e.end, e.sentiment};
}

inline std::vector<PredictionRecord> records_from_document(const Document& doc) {
  std::vector<PredictionRecord> out;
  out.reserve(doc.entities.size());
  for (const auto& e : doc.entities) out.push_back(record_from_annotation(e));
  return out;
}

// Canonical serialized form, one record per line:
//   {value: Twitter Inc, start: 20, end: 31, tag: Positive}
// Chinese output uses the Chinese tag labels.
inline std::string serialize_record(const PredictionRecord& r, Lang lang = Lang::En) {
  std::string tag = lang == Lang::Zh ? polarity_name_zh(r.tag) : polarity_name(r.tag);
  return "{value: " + r.value + ", start: " + std::to_string(r.start) + ", end: " + std::to_string(r.end) +
         ", tag: " + tag + "}";
}

inline std::string serialize_records(const std::vector<PredictionRecord>& records, Lang lang = Lang::En) {
  if (records.empty()) return "no entities";
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) out.push_back('\n');
    out += serialize_record(records[i], lang);
  }
  return out;
}

namespace detail {

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t i = t[0] == '-' ? 1 : 0;
  if (i == t.size()) return std::nullopt;
  std::int64_t v = 0;
  for (; i < t.size(); ++i) {
    if (t[i] < '0' || t[i] > '9') return std::nullopt;
    v = v * 10 + (t[i] - '0');
  }
  return t[0] == '-' ? -v : v;
}

// Parses the interior of one brace group. Keys may appear in any order;
// the value field is delimited by the next ", <key>:" boundary so entity
// names containing commas survive.
inline std::optional<PredictionRecord> parse_brace_body(std::string_view body) {
  static const char* keys[] = {"value", "start", "end", "tag"};
  struct Field {
    std::size_t key_pos;
    std::size_t val_pos;
    const char* key;
  };
  std::vector<Field> fields;
  for (const char* key : keys) {
    const std::string marker = std::string(key) + ":";
    std::size_t pos = 0;
    while (pos < body.size()) {
      std::size_t hit = body.find(marker, pos);
      if (hit == std::string_view::npos) break;
      // Must start a field: preceded by start-of-body, '{', ',' or whitespace.
      bool boundary = hit == 0;
      if (!boundary) {
        char prev = body[hit - 1];
        boundary = prev == ',' || prev == '{' || prev == ' ' || prev == '\t' || prev == '"' || prev == '\'';
      }
      if (boundary) {
        fields.push_back({hit, hit + marker.size(), key});
        break;
      }
      pos = hit + 1;
    }
  }
  if (fields.size() != 4) return std::nullopt;
  std::sort(fields.begin(), fields.end(), [](const Field& a, const Field& b) { return a.key_pos < b.key_pos; });

  auto field_text = [&](std::size_t i) {
    const std::size_t end = i + 1 < fields.size() ? fields[i + 1].key_pos : body.size();
    std::string raw = trim(body.substr(fields[i].val_pos, end - fields[i].val_pos));
    while (!raw.empty() && (raw.back() == ',' || raw.back() == ' ')) raw.pop_back();
    // Strip symmetric quotes.
    if (raw.size() >= 2 && ((raw.front() == '"' && raw.back() == '"') || (raw.front() == '\'' && raw.back() == '\'')))
      raw = raw.substr(1, raw.size() - 2);
    return raw;
  };

  PredictionRecord rec;
  bool have_start = false, have_end = false, have_tag = false, have_value = false;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string text = field_text(i);
    if (std::string_view(fields[i].key) == "value") {
      rec.value = text;
      have_value = true;
    } else if (std::string_view(fields[i].key) == "start") {
      auto v = parse_int(text);
      if (!v) return std::nullopt;
      rec.start = *v;
      have_start = true;
    } else if (std::string_view(fields[i].key) == "end") {
      auto v = parse_int(text);
      if (!v) return std::nullopt;
      rec.end = *v;
      have_end = true;
    } else {
      auto pol = parse_polarity(text);
      if (!pol) return std::nullopt;
      rec.tag = *pol;
      have_tag = true;
    }
  }
  if (!(have_value && have_start && have_end && have_tag)) return std::nullopt;
  return rec;
}

inline std::optional<std::vector<PredictionRecord>> parse_json_records(const std::string& raw) {
  nlohmann::json j = nlohmann::json::parse(raw, nullptr, false);
  if (j.is_discarded() || !j.is_array()) return std::nullopt;
  std::vector<PredictionRecord> out;
  for (const auto& item : j) {
    if (!item.is_object()) return std::nullopt;
    if (!item.contains("value") || !item.contains("start") || !item.contains("end") || !item.contains("tag"))
      return std::nullopt;
    if (!item.at("value").is_string() || !item.at("tag").is_string()) return std::nullopt;
    if (!item.at("start").is_number_integer() || !item.at("end").is_number_integer()) return std::nullopt;
    auto pol = parse_polarity(item.at("tag").get<std::string>());
    if (!pol) return std::nullopt;
    out.push_back({item.at("value").get<std::string>(), item.at("start").get<std::int64_t>(),
                   item.at("end").get<std::int64_t>(), *pol});
  }
  return out;
}

}  // namespace detail

// Extracts prediction records from raw model output. Accepts either a JSON
// list of {value,start,end,tag} objects or the brace-delimited line format;
// tag strings are normalized through the bilingual label map and record
// order is preserved. Output with no record-like content parses to an empty
// list; output that looks like an attempted record but yields nothing
// throws ParseFailure.
inline std::vector<PredictionRecord> parse_prediction(const std::string& raw) {
  if (auto from_json = detail::parse_json_records(raw)) return *from_json;

  std::vector<PredictionRecord> out;
  bool saw_attempt = false;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    const std::size_t open = raw.find('{', pos);
    if (open == std::string::npos) break;
    const std::size_t close = raw.find('}', open + 1);
    if (close == std::string::npos) {
      saw_attempt = true;
      break;
    }
    const std::string_view body(raw.data() + open + 1, close - open - 1);
    if (auto rec = detail::parse_brace_body(body)) {
      out.push_back(std::move(*rec));
    } else if (body.find("value") != std::string_view::npos || body.find("start") != std::string_view::npos) {
      saw_attempt = true;
    }
    pos = close + 1;
  }
  if (out.empty() && (saw_attempt || raw.find("value:") != std::string::npos))
    throw ParseFailure("output appears to contain records but none parsed");
  return out;
}

}  // namespace silc
