#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "silc/corpus.hpp"
#include "silc/log.hpp"
#include "silc/random.hpp"
#include "silc/records.hpp"
#include "silc/util.hpp"

namespace silc {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct MissingPlaceholder : std::runtime_error {
  std::string name;
  explicit MissingPlaceholder(std::string n)
      : std::runtime_error("template placeholder '{" + n + "}' missing or unbound"), name(std::move(n)) {}
};

struct EndpointError : std::runtime_error {
  int status;  // 0 for transport-level failures
  EndpointError(int s, const std::string& what)
      : std::runtime_error("endpoint error (status " + std::to_string(s) + "): " + what), status(s) {}
};

struct RetriesExhausted : std::runtime_error {
  explicit RetriesExhausted(const std::string& what) : std::runtime_error(what) {}
};

struct TimeoutError : std::runtime_error {
  explicit TimeoutError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Backend configuration
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_ms = 200;
};

// Auth tokens are resolved from the named environment variable at request
// time; only the variable *name* is ever serialized or logged.
struct BackendConfig {
  std::string role;          // stage1_model | stage2_model
  std::string endpoint_url;  // full URL of the chat-completion endpoint
  std::string model_name;
  std::string auth_token_env_var;
  int max_in_flight = 4;
  RetryPolicy retry;
  int timeout_ms = 30000;
  nlohmann::json decoding = nlohmann::json::object();  // temperature etc., passed through opaquely
};

inline nlohmann::json backend_config_to_json(const BackendConfig& c) {
  return {{"role", c.role},
          {"endpoint_url", c.endpoint_url},
          {"model_name", c.model_name},
          {"auth_token_env_var", c.auth_token_env_var},
          {"max_in_flight", c.max_in_flight},
          {"retry", {{"max_attempts", c.retry.max_attempts}, {"backoff_ms", c.retry.backoff_ms}}},
          {"timeout_ms", c.timeout_ms},
          {"decoding", c.decoding}};
}

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  c.role = j.value("role", "");
  c.endpoint_url = j.value("endpoint_url", "");
  c.model_name = j.value("model_name", "");
  c.auth_token_env_var = j.value("auth_token_env_var", "");
  c.max_in_flight = std::max(1, j.value("max_in_flight", 4));
  if (j.contains("retry")) {
    c.retry.max_attempts = j.at("retry").value("max_attempts", 3);
    c.retry.backoff_ms = j.at("retry").value("backoff_ms", 200);
  }
  c.timeout_ms = j.value("timeout_ms", 30000);
  if (j.contains("decoding")) c.decoding = j.at("decoding");
  return c;
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

enum class Stage { Stage1, Stage2 };

struct PromptTemplate {
  std::string template_id;
  Lang language = Lang::En;
  Stage stage = Stage::Stage1;
  std::string body;  // UTF-8 text with {placeholder} slots
};

namespace detail {

// A brace group is a placeholder only when its interior is a bare
// [a-z_] identifier; everything else (e.g. literal record syntax shown in
// instructions) passes through untouched.
inline bool is_placeholder_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!((c >= 'a' && c <= 'z') || c == '_')) return false;
  return true;
}

}  // namespace detail

// Substitutes {name} slots from `bindings`. Every placeholder found in the
// body must be bound, and every key in `required` must occur in the body;
// either violation raises MissingPlaceholder.
inline std::string render_template(const std::string& body, const std::map<std::string, std::string>& bindings,
                                   const std::vector<std::string>& required = {}) {
  std::set<std::string> seen;
  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      const std::size_t close = body.find('}', i + 1);
      if (close != std::string::npos) {
        const std::string name = body.substr(i + 1, close - i - 1);
        if (detail::is_placeholder_name(name)) {
          auto it = bindings.find(name);
          if (it == bindings.end()) throw MissingPlaceholder(name);
          out += it->second;
          seen.insert(name);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(body[i]);
    ++i;
  }
  for (const auto& name : required)
    if (!seen.count(name)) throw MissingPlaceholder(name);
  return out;
}

inline const char* stage1_task_description(Lang lang) {
  if (lang == Lang::Zh)
    return "请识别输入文本中提到的所有金融实体，并结合上下文判断每个实体的情感倾向。"
           "每个实体输出一行，格式为 {value: <实体>, start: <起始位置>, end: <结束位置>, tag: <正面|负面|中立>}。"
           "位置按 Unicode 字符从 0 计数，start 含、end 不含。"
           "如果文本中没有金融实体，请输出：no entities";
  return "Identify every financial entity mentioned in the input text and classify its sentiment in "
         "context. For each entity output one record per line in the form "
         "{value: <entity text>, start: <start offset>, end: <end offset>, tag: <Positive|Negative|Neutral>}, "
         "where offsets count Unicode characters from the start of the input, start inclusive and end "
         "exclusive. If the text contains no financial entity, output exactly: no entities";
}

// Built-in template variants; external template files may replace them.
inline std::vector<PromptTemplate> default_templates() {
  std::vector<PromptTemplate> out;
  out.push_back({"stage1_en_base", Lang::En, Stage::Stage1,
                 "{task_description}\n\nExamples:\n{examples}\n\nInput: {input_text}\nOutput:\n"});
  out.push_back({"stage1_en_alt", Lang::En, Stage::Stage1,
                 "{task_description}\n\nHere are some worked examples:\n{examples}\n\nNow annotate the "
                 "following text.\nInput: {input_text}\nOutput:\n"});
  out.push_back({"stage1_zh_base", Lang::Zh, Stage::Stage1,
                 "{task_description}\n\n示例：\n{examples}\n\n输入：{input_text}\n输出：\n"});
  out.push_back({"stage1_zh_alt", Lang::Zh, Stage::Stage1,
                 "{task_description}\n\n以下是一些示例：\n{examples}\n\n请标注下面的文本。\n输入："
                 "{input_text}\n输出：\n"});
  out.push_back({"stage2_en_base", Lang::En, Stage::Stage2,
                 "Review the predicted entity sentiment records for the input text below. Decide whether "
                 "the predictions are correct. If they are correct, output them unchanged; if any record "
                 "is wrong, output the corrected records in the same format, one per line.\n\n"
                 "{retrieved_examples}\n\nInput: {input_text}\nPredicted records:\n{pseudo_labels}\nOutput:\n"});
  out.push_back({"stage2_en_alt", Lang::En, Stage::Stage2,
                 "Below is a text and the entity sentiment records predicted for it. Judge the "
                 "predictions and output the final records: repeat them if correct, otherwise output the "
                 "corrected records in the same format.\n\n"
                 "{retrieved_examples}\n\nInput: {input_text}\nPredicted records:\n{pseudo_labels}\nOutput:\n"});
  out.push_back({"stage2_zh_base", Lang::Zh, Stage::Stage2,
                 "请检查下面文本的实体情感预测结果是否正确。若正确，原样输出；若有错误，请按相同格式逐行输出"
                 "更正后的结果。\n\n{retrieved_examples}\n\n输入：{input_text}\n预测结果：\n{pseudo_labels}\n"
                 "输出：\n"});
  out.push_back({"stage2_zh_alt", Lang::Zh, Stage::Stage2,
                 "以下给出一段文本及其实体情感预测。请判断预测是否正确：正确则原样输出，错误则按相同格式输出"
                 "更正结果。\n\n{retrieved_examples}\n\n输入：{input_text}\n预测结果：\n{pseudo_labels}\n"
                 "输出：\n"});
  return out;
}

class TemplateSet {
 public:
  TemplateSet() : templates_(default_templates()) {}
  explicit TemplateSet(std::vector<PromptTemplate> templates) : templates_(std::move(templates)) {}

  // Loads every *.txt file in dir; file names follow
  // <stage>_<lang>_<variant>.txt (e.g. stage1_en_base.txt).
  static TemplateSet load_dir(const std::string& dir) {
    std::vector<PromptTemplate> templates;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".txt") continue;
      const std::string id = entry.path().stem().string();
      const auto parts = split(id, '_');
      if (parts.size() < 2) continue;
      PromptTemplate t;
      t.template_id = id;
      t.stage = parts[0] == "stage2" ? Stage::Stage2 : Stage::Stage1;
      t.language = parts[1] == "zh" ? Lang::Zh : Lang::En;
      std::ifstream in(entry.path());
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      t.body = std::move(body);
      templates.push_back(std::move(t));
    }
    if (templates.empty()) throw std::runtime_error("no templates found in " + dir);
    std::sort(templates.begin(), templates.end(),
              [](const PromptTemplate& a, const PromptTemplate& b) { return a.template_id < b.template_id; });
    return TemplateSet(std::move(templates));
  }

  const PromptTemplate& by_id(const std::string& id) const {
    for (const auto& t : templates_)
      if (t.template_id == id) return t;
    throw std::invalid_argument("unknown template id '" + id + "'");
  }

  // Several variants exist per stage; one is picked by seeded random choice
  // when no explicit id is requested.
  const PromptTemplate& select(Stage stage, Lang lang, const std::string& id, std::uint64_t seed) const {
    if (!id.empty()) return by_id(id);
    std::vector<const PromptTemplate*> candidates;
    for (const auto& t : templates_)
      if (t.stage == stage && t.language == lang) candidates.push_back(&t);
    if (candidates.empty()) throw std::invalid_argument("no template for requested stage/language");
    Rng rng(mix_seed(seed, 0x7e3a));
    return *candidates[rng.below(candidates.size())];
  }

  const std::vector<PromptTemplate>& all() const { return templates_; }

 private:
  std::vector<PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

inline std::string serialize_demo(const Document& doc) {
  const bool zh = doc.lang == Lang::Zh;
  std::string block = zh ? "输入：" : "Input: ";
  block += doc.text;
  block += zh ? "\n输出：\n" : "\nOutput:\n";
  block += serialize_records(records_from_document(doc), doc.lang);
  return block;
}

// Stage-1 prompt: task instruction, k gold-labeled demonstrations in the
// output record format, and the input text.
inline std::string render_stage1(const PromptTemplate& tmpl, const Document& doc,
                                 const std::vector<Document>& demos) {
  std::string examples;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (i) examples += "\n\n";
    examples += serialize_demo(demos[i]);
  }
  return render_template(tmpl.body,
                         {{"task_description", stage1_task_description(tmpl.language)},
                          {"examples", examples},
                          {"input_text", doc.text}},
                         {"task_description", "examples", "input_text"});
}

// One retrieved in-context example for the correction prompt, annotated
// with whether its pseudo-labels were correct (and the gold fix when not).
struct RetrievedExample {
  std::string channel;  // linguistic | sentiment | average
  std::string doc_id;
  std::string text;
  Lang lang = Lang::En;
  std::vector<PredictionRecord> pseudo;
  bool correct = false;
  std::vector<PredictionRecord> gold;
};

inline std::string serialize_retrieved(const RetrievedExample& ex) {
  const bool zh = ex.lang == Lang::Zh;
  std::string block = zh ? "示例（" + ex.channel + "）：\n输入：" : "Example (" + ex.channel + "):\nInput: ";
  block += ex.text;
  block += zh ? "\n预测结果：\n" : "\nPredicted records:\n";
  block += serialize_records(ex.pseudo, ex.lang);
  if (ex.correct) {
    block += zh ? "\n判断：正确" : "\nJudgment: correct";
  } else {
    block += zh ? "\n判断：错误\n更正结果：\n" : "\nJudgment: incorrect\nCorrected records:\n";
    block += serialize_records(ex.gold, ex.lang);
  }
  return block;
}

// Stage-2 prompt: the input, its pseudo-labels, and the retrieved examples
// with correctness markers. Stage-2 templates carry no {task_description}
// slot; rendering one with that placeholder fails, which keeps the stage-1
// task block out of correction prompts.
inline std::string render_stage2(const PromptTemplate& tmpl, const Document& doc,
                                 const std::vector<PredictionRecord>& pseudo,
                                 const std::vector<RetrievedExample>& retrieved) {
  std::string examples;
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (i) examples += "\n\n";
    examples += serialize_retrieved(retrieved[i]);
  }
  return render_template(tmpl.body,
                         {{"retrieved_examples", examples},
                          {"input_text", doc.text},
                          {"pseudo_labels", serialize_records(pseudo, tmpl.language)}},
                         {"retrieved_examples", "input_text", "pseudo_labels"});
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

inline std::string fingerprint_prompt(const std::string& prompt) { return to_hex(fnv1a64(prompt)); }

// request_id convention: "<stage>:<doc_id>"; the doc id half is used for
// audit records and by the mock's answer-key policies.
inline std::string doc_id_of_request(const std::string& request_id) {
  const auto pos = request_id.find(':');
  return pos == std::string::npos ? request_id : request_id.substr(pos + 1);
}

using AuditSink = std::function<void(const nlohmann::json&)>;

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  const BackendConfig& config() const { return config_; }
  void set_audit_sink(AuditSink sink) { audit_ = std::move(sink); }

  // Sends one prompt. Transient failures (HTTP 429/5xx, transport errors,
  // timeouts) are retried with exponential backoff; at most max_in_flight
  // requests run concurrently per backend.
  std::string complete(const std::string& prompt, const std::string& request_id) {
    SemaphoreGuard guard(sem_);
    const auto t0 = std::chrono::steady_clock::now();
    int attempt = 0;
    for (;;) {
      ++attempt;
      try {
        std::string reply = complete_once(prompt, request_id);
        audit(request_id, attempt, t0);
        return reply;
      } catch (const EndpointError& e) {
        const bool transient = e.status == 0 || e.status == 429 || e.status >= 500;
        if (!transient) {
          audit(request_id, attempt, t0);
          throw;
        }
        if (attempt >= config_.retry.max_attempts) {
          audit(request_id, attempt, t0);
          throw RetriesExhausted(std::string("retries exhausted: ") + e.what());
        }
      } catch (const TimeoutError&) {
        if (attempt >= config_.retry.max_attempts) {
          audit(request_id, attempt, t0);
          throw RetriesExhausted("retries exhausted after timeout");
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry.backoff_ms << (attempt - 1)));
    }
  }

 protected:
  explicit ChatBackend(BackendConfig config)
      : config_(std::move(config)), sem_(static_cast<std::size_t>(std::max(1, config_.max_in_flight))) {}

  virtual std::string complete_once(const std::string& prompt, const std::string& request_id) = 0;

  BackendConfig config_;

 private:
  void audit(const std::string& request_id, int attempts, std::chrono::steady_clock::time_point t0) {
    if (!audit_) return;
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    audit_({{"request_id", request_id},
            {"doc_id", doc_id_of_request(request_id)},
            {"backend", config_.model_name.empty() ? config_.role : config_.model_name},
            {"attempts", attempts},
            {"latency_ms", ms}});
  }

  Semaphore sem_;
  AuditSink audit_;
};

// Writes audit records as JSON lines.
class AuditLog {
 public:
  explicit AuditLog(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open audit log " + path);
  }

  AuditSink sink() {
    return [this](const nlohmann::json& j) {
      std::lock_guard lk(mu_);
      out_ << j.dump() << "\n";
      out_.flush();
    };
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Deterministic mock backend
// ---------------------------------------------------------------------------

// Fallback behavior when a prompt fingerprint has no canned reply.
enum class MockPolicy {
  Refuse,          // reply with the configured refusal text
  EchoGold,        // serialize the answer key's gold records for the doc
  PerturbGold,     // flip every polarity in a seeded subset of documents
  CorrectPlanted,  // undo a seeded fraction of PerturbGold's planted errors
  PassThrough,     // echo the pseudo-label block found in the prompt
};

inline Polarity flip_polarity(Polarity p) {
  switch (p) {
    case Polarity::Positive: return Polarity::Negative;
    case Polarity::Negative: return Polarity::Neutral;
    case Polarity::Neutral: return Polarity::Positive;
  }
  return Polarity::Neutral;
}

struct MockConfig {
  MockPolicy policy = MockPolicy::Refuse;
  double error_rate = 0.0;        // PerturbGold: fraction of docs planted with errors
  std::uint64_t seed = 0;         // PerturbGold/CorrectPlanted selection seed
  double correct_fraction = 1.0;  // CorrectPlanted: fraction of planted docs fixed
  double stage1_error_rate = 0.0; // CorrectPlanted: the generator mock's parameters
  std::uint64_t stage1_seed = 0;
  std::string refusal_text = "I cannot annotate this text.";
  int delay_ms = 0;  // optional artificial latency (test aid)
};

class MockBackend : public ChatBackend {
 public:
  MockBackend(BackendConfig backend_config, MockConfig mock_config, Dataset answer_key = {})
      : ChatBackend(std::move(backend_config)),
        mock_(std::move(mock_config)),
        answer_key_(std::move(answer_key)) {
    for (const auto& d : answer_key_) by_id_[d.id] = &d;
  }

  void add_canned(const std::string& prompt, const std::string& reply) {
    canned_[fingerprint_prompt(prompt)] = reply;
  }
  void add_canned_fingerprint(const std::string& fingerprint, const std::string& reply) {
    canned_[fingerprint] = reply;
  }

  // Documents selected for planted errors: ids are sorted, shuffled with the
  // seed, and the first round(p*n) are planted. Pure — tests can recompute.
  static std::set<std::string> planted_doc_ids(const Dataset& dataset, double error_rate, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& d : dataset) ids.push_back(d.id);
    std::sort(ids.begin(), ids.end());
    Rng rng(mix_seed(seed, 0x9e11));
    rng.shuffle(ids);
    const auto k = static_cast<std::size_t>(std::llround(error_rate * static_cast<double>(ids.size())));
    return {ids.begin(), ids.begin() + std::min(k, ids.size())};
  }

  static std::set<std::string> corrected_doc_ids(const std::set<std::string>& planted, double fraction,
                                                 std::uint64_t seed) {
    std::vector<std::string> ids(planted.begin(), planted.end());
    Rng rng(mix_seed(seed, 0x51c2));
    rng.shuffle(ids);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
    return {ids.begin(), ids.begin() + std::min(k, ids.size())};
  }

  static std::vector<PredictionRecord> perturbed_records(const Document& doc) {
    auto records = records_from_document(doc);
    for (auto& r : records) r.tag = flip_polarity(r.tag);
    return records;
  }

  // Perturbation log: doc_id -> records actually emitted for planted docs.
  std::map<std::string, std::vector<PredictionRecord>> perturbation_log() const {
    std::lock_guard lk(mu_);
    return log_;
  }

  std::size_t max_observed_concurrency() const { return max_concurrent_.load(); }

 protected:
  std::string complete_once(const std::string& prompt, const std::string& request_id) override {
    const std::size_t now = ++concurrent_;
    std::size_t seen_max = max_concurrent_.load();
    while (now > seen_max && !max_concurrent_.compare_exchange_weak(seen_max, now)) {
    }
    if (mock_.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(mock_.delay_ms));
    std::string reply = reply_for(prompt, request_id);
    --concurrent_;
    return reply;
  }

 private:
  std::string reply_for(const std::string& prompt, const std::string& request_id) {
    auto canned = canned_.find(fingerprint_prompt(prompt));
    if (canned != canned_.end()) return canned->second;

    const std::string doc_id = doc_id_of_request(request_id);
    switch (mock_.policy) {
      case MockPolicy::Refuse:
        return mock_.refusal_text;
      case MockPolicy::PassThrough:
        return pseudo_block_of(prompt);
      case MockPolicy::EchoGold: {
        const Document* doc = find_doc(doc_id);
        if (!doc) return mock_.refusal_text;
        return serialize_records(records_from_document(*doc), doc->lang);
      }
      case MockPolicy::PerturbGold: {
        const Document* doc = find_doc(doc_id);
        if (!doc) return mock_.refusal_text;
        ensure_planted();
        if (planted_.count(doc_id)) {
          auto records = perturbed_records(*doc);
          {
            std::lock_guard lk(mu_);
            log_[doc_id] = records;
          }
          return serialize_records(records, doc->lang);
        }
        return serialize_records(records_from_document(*doc), doc->lang);
      }
      case MockPolicy::CorrectPlanted: {
        const Document* doc = find_doc(doc_id);
        if (!doc) return mock_.refusal_text;
        ensure_planted();
        if (planted_.count(doc_id) && !corrected_.count(doc_id))
          return serialize_records(perturbed_records(*doc), doc->lang);
        return serialize_records(records_from_document(*doc), doc->lang);
      }
    }
    return mock_.refusal_text;
  }

  // Extracts the "Predicted records:" block from a stage-2 prompt; used by
  // the pass-through policy so stage 2 returns the pseudo-labels unchanged.
  static std::string pseudo_block_of(const std::string& prompt) {
    for (const char* marker : {"Predicted records:\n", "预测结果：\n"}) {
      const auto pos = prompt.rfind(marker);
      if (pos == std::string::npos) continue;
      const auto start = pos + std::string(marker).size();
      auto end = prompt.find("\nOutput:", start);
      if (end == std::string::npos) end = prompt.find("\n输出：", start);
      if (end == std::string::npos) end = prompt.size();
      return prompt.substr(start, end - start);
    }
    return "no entities";
  }

  const Document* find_doc(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    return it == by_id_.end() ? nullptr : it->second;
  }

  void ensure_planted() {
    std::call_once(planted_once_, [this] {
      if (mock_.policy == MockPolicy::PerturbGold) {
        planted_ = planted_doc_ids(answer_key_, mock_.error_rate, mock_.seed);
      } else if (mock_.policy == MockPolicy::CorrectPlanted) {
        planted_ = planted_doc_ids(answer_key_, mock_.stage1_error_rate, mock_.stage1_seed);
        corrected_ = corrected_doc_ids(planted_, mock_.correct_fraction, mock_.seed);
      }
    });
  }

  MockConfig mock_;
  Dataset answer_key_;
  std::map<std::string, const Document*> by_id_;
  std::map<std::string, std::string> canned_;
  std::once_flag planted_once_;
  std::set<std::string> planted_;
  std::set<std::string> corrected_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<PredictionRecord>> log_;
  std::atomic<std::size_t> concurrent_{0};
  std::atomic<std::size_t> max_concurrent_{0};
};

// Scripted backend for fault-injection tests: consumes a fixed sequence of
// replies / HTTP-style failures.
class ScriptedBackend : public ChatBackend {
 public:
  struct Step {
    int error_status = -1;  // -1: reply; otherwise throw EndpointError(status)
    std::string reply;
  };

  ScriptedBackend(BackendConfig config, std::vector<Step> script)
      : ChatBackend(std::move(config)), script_(std::move(script)) {}

  int calls() const { return calls_.load(); }

 protected:
  std::string complete_once(const std::string&, const std::string&) override {
    const int i = calls_++;
    if (static_cast<std::size_t>(i) >= script_.size())
      throw EndpointError(0, "script exhausted");
    const Step& step = script_[static_cast<std::size_t>(i)];
    if (step.error_status >= 0) throw EndpointError(step.error_status, "scripted failure");
    return step.reply;
  }

 private:
  std::vector<Step> script_;
  std::atomic<int> calls_{0};
};

}  // namespace silc
