#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "silc/corpus.hpp"
#include "silc/log.hpp"

namespace silc {

// Source-corpus readers. Each converts one upstream dataset into the span-
// annotated JSONL document schema, assigning spans with align_spans and
// dropping (with a logged warning) entities that cannot be placed.

struct RestructureReport {
  std::size_t rows_read = 0;
  std::size_t docs_kept = 0;
  std::size_t entities_dropped = 0;
  std::size_t rows_skipped = 0;
};

namespace detail {

// Minimal RFC-4180-ish CSV reader: quoted fields, embedded commas/newlines,
// doubled quotes.
inline std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n') {
      if (!field.empty() || !row.empty()) {
        row.push_back(field);
        field.clear();
        rows.push_back(row);
        row.clear();
      }
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

// Parses the decisions column of a SEntFiN row: a python-style dict such as
// {"entity A": "positive", 'entity B': 'negative'}. Quoting is inconsistent
// in the source, so this scans quoted strings pairwise instead of parsing
// JSON strictly.
inline std::vector<std::pair<std::string, std::string>> parse_decisions(const std::string& s) {
  std::vector<std::string> strings;
  std::size_t i = 0;
  while (i < s.size()) {
    char q = s[i];
    if (q == '"' || q == '\'') {
      std::size_t j = i + 1;
      std::string cur;
      while (j < s.size()) {
        // A closing quote is one followed by a structural character.
        if (s[j] == q) {
          std::size_t k = j + 1;
          while (k < s.size() && s[k] == ' ') ++k;
          if (k >= s.size() || s[k] == ':' || s[k] == ',' || s[k] == '}') break;
        }
        cur.push_back(s[j]);
        ++j;
      }
      strings.push_back(cur);
      i = j + 1;
    } else {
      ++i;
    }
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t k = 0; k + 1 < strings.size(); k += 2) pairs.emplace_back(strings[k], strings[k + 1]);
  return pairs;
}

}  // namespace detail

// SEntFiN: CSV with columns (S No., Title, Decisions); Decisions maps entity
// surface forms to sentiment labels. Output is English span-annotated docs.
inline Dataset restructure_sentfin(const std::string& path, RestructureReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto rows = detail::read_csv(in);
  if (rows.empty()) return {};
  // Header row: locate the title and decisions columns.
  std::size_t title_col = 1, decisions_col = 2;
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    const std::string h = lower_ascii(trim(rows[0][c]));
    if (h == "title") title_col = c;
    if (h == "decisions" || h == "decision") decisions_col = c;
  }
  Dataset out;
  RestructureReport rep;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    ++rep.rows_read;
    const auto& row = rows[r];
    if (row.size() <= std::max(title_col, decisions_col)) {
      ++rep.rows_skipped;
      continue;
    }
    const std::string& title = row[title_col];
    std::vector<std::pair<std::string, Polarity>> wanted;
    for (const auto& [entity, label] : detail::parse_decisions(row[decisions_col])) {
      if (auto pol = parse_polarity(label)) wanted.emplace_back(entity, *pol);
    }
    Document doc;
    doc.id = "sentfin-" + std::to_string(r);
    doc.text = title;
    doc.lang = Lang::En;
    // Align one entity at a time so a single unalignable value drops only
    // itself, not the whole row.
    std::vector<std::pair<std::string, Polarity>> placed;
    for (const auto& w : wanted) {
      auto attempt = placed;
      attempt.push_back(w);
      try {
        doc.entities = align_spans(doc.text, attempt, doc.lang);
        placed = std::move(attempt);
      } catch (const UnalignableEntity& e) {
        ++rep.entities_dropped;
        log_warn("restructure.unalignable_entity", {{"doc_id", doc.id}, {"value", e.value}});
        doc.entities = align_spans(doc.text, placed, doc.lang);
      }
    }
    if (doc.entities.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    ++rep.docs_kept;
    out.push_back(std::move(doc));
  }
  if (report) *report = rep;
  return out;
}

// EFSA-style Chinese corpus: JSON array (or JSONL) of objects carrying a
// text and a list of event tuples. Only the company entity and its sentiment
// are kept; event labels are discarded. Rows where any tuple lacks a company
// entity are skipped.
inline Dataset restructure_efsa(const std::string& path, RestructureReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  std::vector<nlohmann::json> rows;
  nlohmann::json parsed = nlohmann::json::parse(content, nullptr, false);
  if (parsed.is_array()) {
    for (auto& j : parsed) rows.push_back(std::move(j));
  } else {
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      if (trim(line).empty()) continue;
      rows.push_back(nlohmann::json::parse(line));
    }
  }

  auto text_of = [](const nlohmann::json& j) -> std::string {
    for (const char* key : {"content", "text", "news"})
      if (j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
    return {};
  };
  auto tuples_of = [](const nlohmann::json& j) -> nlohmann::json {
    for (const char* key : {"events", "labels", "tuples", "annotations"})
      if (j.contains(key) && j.at(key).is_array()) return j.at(key);
    return nlohmann::json::array();
  };

  Dataset out;
  RestructureReport rep;
  std::size_t row_no = 0;
  for (const auto& j : rows) {
    ++row_no;
    ++rep.rows_read;
    const std::string text = text_of(j);
    const nlohmann::json tuples = tuples_of(j);
    if (text.empty() || tuples.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    std::vector<std::pair<std::string, Polarity>> wanted;
    bool all_company = true;
    for (const auto& t : tuples) {
      std::string company =
          t.contains("company") && t.at("company").is_string() ? t.at("company").get<std::string>() : "";
      std::string label =
          t.contains("sentiment") && t.at("sentiment").is_string() ? t.at("sentiment").get<std::string>() : "";
      if (trim(company).empty()) {
        all_company = false;
        break;
      }
      if (auto pol = parse_polarity(label)) wanted.emplace_back(trim(company), *pol);
    }
    if (!all_company || wanted.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    // The same company may be annotated once per event tuple; collapse exact
    // duplicates so each surface form is placed once per distinct mention.
    std::vector<std::pair<std::string, Polarity>> dedup;
    for (const auto& w : wanted)
      if (std::find(dedup.begin(), dedup.end(), w) == dedup.end()) dedup.push_back(w);

    Document doc;
    doc.id = "efsa-" + std::to_string(row_no);
    doc.text = text;
    doc.lang = Lang::Zh;
    std::vector<std::pair<std::string, Polarity>> placed;
    for (const auto& w : dedup) {
      auto attempt = placed;
      attempt.push_back(w);
      try {
        doc.entities = align_spans(doc.text, attempt, doc.lang);
        placed = std::move(attempt);
      } catch (const UnalignableEntity& e) {
        ++rep.entities_dropped;
        log_warn("restructure.unalignable_entity", {{"doc_id", doc.id}, {"value", e.value}});
        doc.entities = align_spans(doc.text, placed, doc.lang);
      }
    }
    if (doc.entities.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    ++rep.docs_kept;
    out.push_back(std::move(doc));
  }
  if (report) *report = rep;
  return out;
}

// FinEntity: JSON array of {content, annotations:[{value,start,end,tag}]} —
// already span-annotated, so this is a schema conversion with validation.
// Spans that fail validation are re-aligned; still-unplaceable ones drop.
inline Dataset restructure_finentity(const std::string& path, RestructureReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json parsed;
  in >> parsed;
  if (!parsed.is_array()) throw std::runtime_error(path + ": expected a JSON array");
  Dataset out;
  RestructureReport rep;
  std::size_t row_no = 0;
  for (const auto& j : parsed) {
    ++row_no;
    ++rep.rows_read;
    Document doc;
    doc.id = "finentity-" + std::to_string(row_no);
    doc.lang = Lang::En;
    if (j.contains("content") && j.at("content").is_string()) doc.text = j.at("content").get<std::string>();
    if (doc.text.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    const std::u32string cps = utf8_decode(doc.text);
    std::vector<std::pair<std::string, Polarity>> fallback;
    if (j.contains("annotations") && j.at("annotations").is_array()) {
      for (const auto& a : j.at("annotations")) {
        if (!a.contains("value") || !a.contains("tag")) continue;
        const std::string value = a.at("value").get<std::string>();
        const auto pol = parse_polarity(a.at("tag").get<std::string>());
        if (!pol) continue;
        std::int64_t s = a.value("start", -1), e = a.value("end", -1);
        if (s >= 0 && e > s && e <= static_cast<std::int64_t>(cps.size()) &&
            utf8_encode(std::u32string_view(cps).substr(static_cast<std::size_t>(s),
                                                        static_cast<std::size_t>(e - s))) == value) {
          doc.entities.push_back({value, s, e, *pol});
        } else {
          fallback.emplace_back(value, *pol);
        }
      }
    }
    for (const auto& w : fallback) {
      try {
        auto aligned = align_spans(doc.text, {w}, doc.lang);
        bool clash = false;
        for (const auto& e : doc.entities)
          if (aligned[0].start < e.end && e.start < aligned[0].end) clash = true;
        if (clash) throw UnalignableEntity(w.first);
        doc.entities.push_back(aligned[0]);
      } catch (const UnalignableEntity& e) {
        ++rep.entities_dropped;
        log_warn("restructure.unalignable_entity", {{"doc_id", doc.id}, {"value", e.value}});
      }
    }
    std::sort(doc.entities.begin(), doc.entities.end(),
              [](const EntityAnnotation& a, const EntityAnnotation& b) { return a.start < b.start; });
    if (auto violation = document_violation(doc)) {
      ++rep.rows_skipped;
      log_warn("restructure.invalid_document", {{"doc_id", doc.id}, {"reason", *violation}});
      continue;
    }
    ++rep.docs_kept;
    out.push_back(std::move(doc));
  }
  if (report) *report = rep;
  return out;
}

inline Dataset restructure(const std::string& path, const std::string& format,
                           RestructureReport* report = nullptr) {
  if (format == "sentfin") return restructure_sentfin(path, report);
  if (format == "efsa") return restructure_efsa(path, report);
  if (format == "finentity") return restructure_finentity(path, report);
  throw std::invalid_argument("unknown restructure format '" + format + "'");
}

}  // namespace silc
