#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "silc/corpus.hpp"
#include "silc/records.hpp"

namespace silc {

struct UnknownDocId : std::runtime_error {
  explicit UnknownDocId(const std::string& id) : std::runtime_error("unknown document id '" + id + "'") {}
};

struct LengthMismatch : std::runtime_error {
  explicit LengthMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyInput : std::runtime_error {
  explicit EmptyInput(const std::string& what) : std::runtime_error(what) {}
};

using PredictionMap = std::map<std::string, std::vector<PredictionRecord>>;

struct ClassCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

// Precision with zero predictions is 0 by convention, as is F1 when P+R=0;
// this keeps every field total.
struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const Prf&, const Prf&) = default;
};

inline Prf prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  Prf r;
  r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

struct EvalReport {
  Prf micro;
  Prf per_class[kPolarityCount];          // indexed by Polarity
  ClassCounts counts[kPolarityCount];
  double macro_f1 = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct RelaxedReport {
  double entity_f1 = 0.0;
  double sentiment_f1 = 0.0;

  friend bool operator==(const RelaxedReport&, const RelaxedReport&) = default;
};

namespace detail {

inline std::size_t pol_index(Polarity p) { return static_cast<std::size_t>(p); }

// Classes with neither gold nor predicted tuples carry no information and
// are excluded from the macro mean, so a perfect prediction set scores 1.0
// even when a polarity is absent from the data.
inline double macro_over_present(const EvalReport& r) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kPolarityCount; ++c) {
    const auto& k = r.counts[c];
    if (k.tp + k.fp + k.fn == 0) continue;
    sum += r.per_class[c].f1;
    ++present;
  }
  return present ? sum / static_cast<double>(present) : 0.0;
}

}  // namespace detail

// Strict tuple-level scoring: a predicted (value, start, end, polarity)
// counts as a true positive iff it exactly matches a gold annotation, each
// gold tuple matched at most once. Exact equality makes greedy one-to-one
// matching unambiguous: duplicate predictions beyond the gold multiplicity
// are false positives.
inline EvalReport strict_prf(const Dataset& gold, const PredictionMap& pred) {
  const auto by_id = index_by_id(gold);
  for (const auto& [id, _] : pred)
    if (!by_id.count(id)) throw UnknownDocId(id);

  EvalReport report;
  for (const auto& doc : gold) {
    std::map<PredictionRecord, std::int64_t> gold_count;
    for (const auto& e : doc.entities) ++gold_count[record_from_annotation(e)];

    std::map<PredictionRecord, std::int64_t> pred_count;
    auto it = pred.find(doc.id);
    if (it != pred.end())
      for (const auto& r : it->second) ++pred_count[r];

    for (const auto& [tuple, np] : pred_count) {
      const auto git = gold_count.find(tuple);
      const std::int64_t ng = git == gold_count.end() ? 0 : git->second;
      const std::int64_t matched = std::min(np, ng);
      auto& k = report.counts[detail::pol_index(tuple.tag)];
      k.tp += matched;
      k.fp += np - matched;
    }
    for (const auto& [tuple, ng] : gold_count) {
      const auto pit = pred_count.find(tuple);
      const std::int64_t np = pit == pred_count.end() ? 0 : pit->second;
      report.counts[detail::pol_index(tuple.tag)].fn += ng - std::min(np, ng);
    }
  }

  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < kPolarityCount; ++c) {
    const auto& k = report.counts[c];
    report.per_class[c] = prf_from_counts(k.tp, k.fp, k.fn);
    tp += k.tp;
    fp += k.fp;
    fn += k.fn;
  }
  report.micro = prf_from_counts(tp, fp, fn);
  report.macro_f1 = detail::macro_over_present(report);
  return report;
}

// Relaxed membership scoring: the entity channel matches on the value string
// alone, the sentiment channel on (value, polarity); offsets are ignored.
// Both use per-document multiset semantics.
inline RelaxedReport relaxed_f1(const Dataset& gold, const PredictionMap& pred) {
  const auto by_id = index_by_id(gold);
  for (const auto& [id, _] : pred)
    if (!by_id.count(id)) throw UnknownDocId(id);

  std::int64_t ent_tp = 0, ent_fp = 0, ent_fn = 0;
  std::int64_t sen_tp = 0, sen_fp = 0, sen_fn = 0;
  for (const auto& doc : gold) {
    std::map<std::string, std::int64_t> gold_values;
    std::map<std::pair<std::string, Polarity>, std::int64_t> gold_pairs;
    for (const auto& e : doc.entities) {
      ++gold_values[e.value];
      ++gold_pairs[{e.value, e.sentiment}];
    }
    std::map<std::string, std::int64_t> pred_values;
    std::map<std::pair<std::string, Polarity>, std::int64_t> pred_pairs;
    auto it = pred.find(doc.id);
    if (it != pred.end()) {
      for (const auto& r : it->second) {
        ++pred_values[r.value];
        ++pred_pairs[{r.value, r.tag}];
      }
    }
    auto tally = [](const auto& gold_map, const auto& pred_map, std::int64_t& tp, std::int64_t& fp,
                    std::int64_t& fn) {
      for (const auto& [key, np] : pred_map) {
        const auto git = gold_map.find(key);
        const std::int64_t ng = git == gold_map.end() ? 0 : git->second;
        tp += std::min(np, ng);
        fp += np - std::min(np, ng);
      }
      for (const auto& [key, ng] : gold_map) {
        const auto pit = pred_map.find(key);
        const std::int64_t np = pit == pred_map.end() ? 0 : pit->second;
        fn += ng - std::min(np, ng);
      }
    };
    tally(gold_values, pred_values, ent_tp, ent_fp, ent_fn);
    tally(gold_pairs, pred_pairs, sen_tp, sen_fp, sen_fn);
  }
  RelaxedReport r;
  r.entity_f1 = prf_from_counts(ent_tp, ent_fp, ent_fn).f1;
  r.sentiment_f1 = prf_from_counts(sen_tp, sen_fp, sen_fn).f1;
  return r;
}

// Field-wise arithmetic mean of the ratio fields; tuple counts are omitted
// (zeroed) since they do not average meaningfully across runs.
inline EvalReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw EmptyInput("aggregate_runs requires at least one report");
  EvalReport mean;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    mean.micro.precision += r.micro.precision / n;
    mean.micro.recall += r.micro.recall / n;
    mean.micro.f1 += r.micro.f1 / n;
    mean.macro_f1 += r.macro_f1 / n;
    for (std::size_t c = 0; c < kPolarityCount; ++c) {
      mean.per_class[c].precision += r.per_class[c].precision / n;
      mean.per_class[c].recall += r.per_class[c].recall / n;
      mean.per_class[c].f1 += r.per_class[c].f1 / n;
    }
  }
  return mean;
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size())
    throw LengthMismatch("rmse: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  if (pred.empty()) throw LengthMismatch("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pred.size()));
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  static const Polarity pols[] = {Polarity::Positive, Polarity::Negative, Polarity::Neutral};
  for (Polarity p : pols) {
    const auto c = static_cast<std::size_t>(p);
    per_class[polarity_label(p)] = {{"precision", r.per_class[c].precision},
                                    {"recall", r.per_class[c].recall},
                                    {"f1", r.per_class[c].f1},
                                    {"tp", r.counts[c].tp},
                                    {"fp", r.counts[c].fp},
                                    {"fn", r.counts[c].fn}};
  }
  return {{"micro", {{"precision", r.micro.precision}, {"recall", r.micro.recall}, {"f1", r.micro.f1}}},
          {"macro_f1", r.macro_f1},
          {"per_class", per_class}};
}

inline nlohmann::json relaxed_to_json(const RelaxedReport& r) {
  return {{"entity_f1", r.entity_f1}, {"sentiment_f1", r.sentiment_f1}};
}

// Prediction JSONL mirrors the document schema without "text":
// {"id": ..., "entities": [{"value","start","end","tag"}]}.
inline PredictionMap load_predictions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  PredictionMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaViolation(line_no, "invalid JSON");
    if (!j.contains("id") || !j.at("id").is_string()) throw SchemaViolation(line_no, "missing string field 'id'");
    if (!j.contains("entities") || !j.at("entities").is_array())
      throw SchemaViolation(line_no, "missing array field 'entities'");
    std::vector<PredictionRecord> records;
    for (const auto& ej : j.at("entities")) {
      if (!ej.contains("value") || !ej.contains("start") || !ej.contains("end") || !ej.contains("tag"))
        throw SchemaViolation(line_no, "entity record missing a required field");
      auto pol = parse_polarity(ej.at("tag").get<std::string>());
      if (!pol) throw SchemaViolation(line_no, "unrecognized tag");
      records.push_back({ej.at("value").get<std::string>(), ej.at("start").get<std::int64_t>(),
                         ej.at("end").get<std::int64_t>(), *pol});
    }
    map[j.at("id").get<std::string>()] = std::move(records);
  }
  return map;
}

inline void save_predictions_jsonl(const std::string& path, const PredictionMap& pred) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [id, records] : pred) {
    nlohmann::json entities = nlohmann::json::array();
    for (const auto& r : records)
      entities.push_back(
          {{"value", r.value}, {"start", r.start}, {"end", r.end}, {"tag", polarity_label(r.tag)}});
    out << nlohmann::json{{"id", id}, {"entities", entities}}.dump() << "\n";
  }
}

}  // namespace silc
