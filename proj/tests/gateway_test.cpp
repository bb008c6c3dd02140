#include "silc/gateway.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "silc/http_backend.hpp"
#include "test_util.hpp"

namespace silc {
namespace {

// --- record parsing ----------------------------------------------------------

TEST(ParsePrediction, BraceFormatEnglish) {
  auto records = parse_prediction("{value: Twitter Inc, start: 20, end: 31, tag: Positive}");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].value, "Twitter Inc");
  EXPECT_EQ(records[0].start, 20);
  EXPECT_EQ(records[0].end, 31);
  EXPECT_EQ(records[0].tag, Polarity::Positive);
}

TEST(ParsePrediction, NoEntities) {
  EXPECT_TRUE(parse_prediction("no entities").empty());
  EXPECT_TRUE(parse_prediction("").empty());
  EXPECT_TRUE(parse_prediction("There are no financial entities in this text.").empty());
}

TEST(ParsePrediction, BraceFormatChinese) {
  auto records = parse_prediction("{value: 荣联科技, start: 5, end: 9, tag: 负面}");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].value, "荣联科技");
  EXPECT_EQ(records[0].start, 5);
  EXPECT_EQ(records[0].end, 9);
  EXPECT_EQ(records[0].tag, Polarity::Negative);
}

TEST(ParsePrediction, MultipleLinesPreserveOrder) {
  const std::string raw =
      "{value: Twitter Inc, start: 20, end: 31, tag: Positive}\n"
      "{value: Tesla Inc, start: 149, end: 158, tag: Neutral}";
  auto records = parse_prediction(raw);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].value, "Twitter Inc");
  EXPECT_EQ(records[1].value, "Tesla Inc");
}

TEST(ParsePrediction, JsonListAccepted) {
  const std::string raw =
      R"([{"value": "Acme", "start": 0, "end": 4, "tag": "positive"},)"
      R"( {"value": "Globex", "start": 9, "end": 15, "tag": "负面"}])";
  auto records = parse_prediction(raw);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].tag, Polarity::Positive);
  EXPECT_EQ(records[1].tag, Polarity::Negative);
}

TEST(ParsePrediction, SurroundingChatterIgnored) {
  const std::string raw =
      "Sure! Here are the records:\n{value: Acme, start: 0, end: 4, tag: Negative}\nHope this helps.";
  auto records = parse_prediction(raw);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].value, "Acme");
}

TEST(ParsePrediction, GarbageRecordThrows) {
  EXPECT_THROW(parse_prediction("{value: Acme, start: soon, end: later, tag: Positive}"), ParseFailure);
  EXPECT_THROW(parse_prediction("value: Acme, start: 0"), ParseFailure);
}

TEST(ParsePrediction, RoundTripProperty) {
  Rng rng(51);
  for (int i = 0; i < 200; ++i) {
    const Lang lang = i % 2 ? Lang::Zh : Lang::En;
    std::vector<PredictionRecord> records;
    const std::size_t n = rng.below(4);
    for (std::size_t k = 0; k < n; ++k) {
      const Document doc = lang == Lang::Zh ? testutil::random_zh_doc(rng, "d", 1)
                                            : testutil::random_en_doc(rng, "d", 6, 1);
      if (doc.entities.empty()) continue;
      records.push_back(record_from_annotation(doc.entities[0]));
    }
    EXPECT_EQ(parse_prediction(serialize_records(records, lang)), records);
  }
}

// --- rendering ----------------------------------------------------------------

Document sample_doc() {
  return {"case1",
          "Micro-blogging site Twitter Inc gained 3.8% after naming Tesla Inc CEO to its board",
          Lang::En,
          {{"Twitter Inc", 20, 31, Polarity::Positive}, {"Tesla Inc", 58, 67, Polarity::Neutral}}};
}

TEST(RenderStage1, ZeroShotContainsInstructionAndInput) {
  TemplateSet templates;
  const auto& tmpl = templates.by_id("stage1_en_base");
  const std::string prompt = render_stage1(tmpl, sample_doc(), {});
  EXPECT_NE(prompt.find("financial entity"), std::string::npos);
  EXPECT_NE(prompt.find(sample_doc().text), std::string::npos);
}

TEST(RenderStage1, Deterministic) {
  TemplateSet templates;
  const auto& tmpl = templates.by_id("stage1_en_base");
  std::vector<Document> demos = {sample_doc()};
  EXPECT_EQ(render_stage1(tmpl, sample_doc(), demos), render_stage1(tmpl, sample_doc(), demos));
}

TEST(RenderStage1, DemoSerializedVerbatim) {
  TemplateSet templates;
  const auto& tmpl = templates.by_id("stage1_en_base");
  const std::string prompt = render_stage1(tmpl, sample_doc(), {sample_doc()});
  EXPECT_NE(prompt.find("{value: Twitter Inc, start: 20, end: 31, tag: Positive}"), std::string::npos);
}

TEST(RenderStage1, MissingExamplesPlaceholderThrows) {
  PromptTemplate broken{"broken", Lang::En, Stage::Stage1, "{task_description}\nInput: {input_text}\n"};
  try {
    render_stage1(broken, sample_doc(), {});
    FAIL() << "expected MissingPlaceholder";
  } catch (const MissingPlaceholder& e) {
    EXPECT_EQ(e.name, "examples");
  }
}

TEST(RenderStage2, EmptyRetrievedStillValid) {
  TemplateSet templates;
  const auto& tmpl = templates.by_id("stage2_en_base");
  const auto pseudo = records_from_document(sample_doc());
  const std::string prompt = render_stage2(tmpl, sample_doc(), pseudo, {});
  EXPECT_NE(prompt.find("Predicted records:"), std::string::npos);
  EXPECT_NE(prompt.find(sample_doc().text), std::string::npos);
}

TEST(RenderStage2, IncorrectExampleShowsPseudoAndGold) {
  TemplateSet templates;
  const auto& tmpl = templates.by_id("stage2_en_base");
  Document doc = sample_doc();
  RetrievedExample ex;
  ex.channel = "linguistic";
  ex.doc_id = "n1";
  ex.text = "Globex sinks on weak results";
  ex.lang = Lang::En;
  ex.pseudo = {{"Globex", 0, 6, Polarity::Positive}};
  ex.correct = false;
  ex.gold = {{"Globex", 0, 6, Polarity::Negative}};
  const std::string prompt = render_stage2(tmpl, doc, records_from_document(doc), {ex});
  EXPECT_NE(prompt.find("{value: Globex, start: 0, end: 6, tag: Positive}"), std::string::npos);
  EXPECT_NE(prompt.find("{value: Globex, start: 0, end: 6, tag: Negative}"), std::string::npos);
  EXPECT_NE(prompt.find("Judgment: incorrect"), std::string::npos);
}

TEST(RenderStage2, NoStage1TaskBlockAllowed) {
  PromptTemplate bad{"bad", Lang::En, Stage::Stage2,
                     "{task_description}\n{retrieved_examples}\nInput: {input_text}\n{pseudo_labels}\n"};
  EXPECT_THROW(render_stage2(bad, sample_doc(), {}, {}), MissingPlaceholder);
}

TEST(Templates, LiteralBraceGroupsSurvive) {
  const std::string body = "Output format {value: X, start: 0}\nInput: {input_text}\n";
  const std::string rendered = render_template(body, {{"input_text", "hello"}});
  EXPECT_NE(rendered.find("{value: X, start: 0}"), std::string::npos);
  EXPECT_NE(rendered.find("hello"), std::string::npos);
}

TEST(Templates, SeededSelectionDeterministic) {
  TemplateSet templates;
  const auto& a = templates.select(Stage::Stage1, Lang::En, "", 7);
  const auto& b = templates.select(Stage::Stage1, Lang::En, "", 7);
  EXPECT_EQ(a.template_id, b.template_id);
}

TEST(Templates, LoadDir) {
  const auto dir = std::filesystem::path(testing::TempDir()) / "tmpl";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "stage1_en_custom.txt")
      << "{task_description}\nX:\n{examples}\nY: {input_text}\n";
  auto set = TemplateSet::load_dir(dir.string());
  const auto& tmpl = set.by_id("stage1_en_custom");
  EXPECT_EQ(tmpl.stage, Stage::Stage1);
  EXPECT_EQ(tmpl.language, Lang::En);
  EXPECT_NE(render_stage1(tmpl, sample_doc(), {}).find("Y: "), std::string::npos);
}

// --- mock backend --------------------------------------------------------------

BackendConfig mock_backend_config(int max_in_flight = 4) {
  BackendConfig c;
  c.role = "stage1_model";
  c.model_name = "mock";
  c.max_in_flight = max_in_flight;
  c.retry = {3, 1};
  return c;
}

TEST(MockBackend, CannedReplyByFingerprint) {
  MockBackend mock(mock_backend_config(), {});
  mock.add_canned("what is 2+2", "4");
  EXPECT_EQ(mock.complete("what is 2+2", "t:x"), "4");
}

TEST(MockBackend, RefusalOnMiss) {
  MockConfig mc;
  mc.policy = MockPolicy::Refuse;
  mc.refusal_text = "declined";
  MockBackend mock(mock_backend_config(), mc);
  EXPECT_EQ(mock.complete("anything", "t:x"), "declined");
}

TEST(MockBackend, EchoGoldMatchesAnswerKey) {
  Rng rng(61);
  auto ds = testutil::random_dataset(rng, 5);
  MockConfig mc;
  mc.policy = MockPolicy::EchoGold;
  MockBackend mock(mock_backend_config(), mc, ds);
  const std::string reply = mock.complete("prompt", "stage1:" + ds[2].id);
  EXPECT_EQ(parse_prediction(reply), records_from_document(ds[2]));
}

TEST(MockBackend, PerturbGoldIsSeededAndCountsExact) {
  Rng rng(62);
  auto ds = testutil::random_dataset(rng, 40);
  MockConfig mc;
  mc.policy = MockPolicy::PerturbGold;
  mc.error_rate = 0.25;
  mc.seed = 99;
  auto run = [&] {
    MockBackend mock(mock_backend_config(), mc, ds);
    std::map<std::string, std::vector<PredictionRecord>> replies;
    for (const auto& d : ds) replies[d.id] = parse_prediction(mock.complete("p", "stage1:" + d.id));
    return replies;
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a, b);  // identical across runs
  std::size_t differing = 0;
  for (const auto& d : ds)
    if (a[d.id] != records_from_document(d)) ++differing;
  EXPECT_EQ(differing, 10u);  // exactly round(0.25 * 40) docs differ
  EXPECT_EQ(MockBackend::planted_doc_ids(ds, 0.25, 99).size(), 10u);
}

TEST(MockBackend, ZeroErrorRateEchoesGold) {
  Rng rng(63);
  auto ds = testutil::random_dataset(rng, 10);
  MockConfig mc;
  mc.policy = MockPolicy::PerturbGold;
  mc.error_rate = 0.0;
  MockBackend mock(mock_backend_config(), mc, ds);
  for (const auto& d : ds)
    EXPECT_EQ(parse_prediction(mock.complete("p", "s:" + d.id)), records_from_document(d));
}

TEST(MockBackend, BoundedConcurrency) {
  MockConfig mc;
  mc.policy = MockPolicy::Refuse;
  mc.delay_ms = 15;
  MockBackend mock(mock_backend_config(/*max_in_flight=*/2), mc);
  parallel_for(8, 8, [&](std::size_t i) { mock.complete("p" + std::to_string(i), "t:x"); });
  EXPECT_LE(mock.max_observed_concurrency(), 2u);
}

// --- retry machinery -------------------------------------------------------------

TEST(Retry, TransientFailureThenSuccess) {
  std::vector<nlohmann::json> audits;
  ScriptedBackend backend(mock_backend_config(), {{429, ""}, {-1, "ok"}});
  backend.set_audit_sink([&](const nlohmann::json& j) { audits.push_back(j); });
  EXPECT_EQ(backend.complete("p", "stage1:doc-1"), "ok");
  EXPECT_EQ(backend.calls(), 2);
  ASSERT_EQ(audits.size(), 1u);
  EXPECT_EQ(audits[0]["attempts"], 2);
  EXPECT_EQ(audits[0]["doc_id"], "doc-1");
  EXPECT_EQ(audits[0]["request_id"], "stage1:doc-1");
}

TEST(Retry, ExhaustionThrows) {
  ScriptedBackend backend(mock_backend_config(), {{500, ""}, {500, ""}, {500, ""}, {500, ""}});
  EXPECT_THROW(backend.complete("p", "t:x"), RetriesExhausted);
  EXPECT_EQ(backend.calls(), 3);  // max_attempts
}

TEST(Retry, NonTransientFailsImmediately) {
  ScriptedBackend backend(mock_backend_config(), {{400, ""}, {-1, "never"}});
  EXPECT_THROW(backend.complete("p", "t:x"), EndpointError);
  EXPECT_EQ(backend.calls(), 1);
}

// --- HTTP backend against a local server ------------------------------------------

TEST(HttpBackendTest, CompletesAndRetries) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    if (auto it = req.headers.find("Authorization"); it != req.headers.end()) seen_auth = it->second;
    if (n == 1) {
      res.status = 429;
      return;
    }
    const nlohmann::json body = nlohmann::json::parse(req.body);
    EXPECT_EQ(body.at("model"), "test-model");
    nlohmann::json reply = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", "{value: Acme, start: 0, end: 4, tag: Positive}"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("SILC_TEST_TOKEN", "sekret-token-123", 1);
  BackendConfig cfg;
  cfg.role = "stage1_model";
  cfg.model_name = "test-model";
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.auth_token_env_var = "SILC_TEST_TOKEN";
  cfg.retry = {3, 1};

  std::vector<std::string> audit_lines;
  HttpBackend backend(cfg);
  backend.set_audit_sink([&](const nlohmann::json& j) { audit_lines.push_back(j.dump()); });
  const std::string reply = backend.complete("annotate this", "stage1:doc-9");
  EXPECT_EQ(parse_prediction(reply).size(), 1u);
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(seen_auth, "Bearer sekret-token-123");

  // Secret material never reaches audit output.
  for (const auto& line : audit_lines) EXPECT_EQ(line.find("sekret-token-123"), std::string::npos);
  EXPECT_EQ(backend_config_to_json(cfg).dump().find("sekret-token-123"), std::string::npos);

  server.stop();
  server_thread.join();
}

TEST(HttpBackendTest, ServerErrorExhaustsRetries) {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig cfg;
  cfg.model_name = "test-model";
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.retry = {2, 1};
  HttpBackend backend(cfg);
  EXPECT_THROW(backend.complete("p", "t:x"), RetriesExhausted);
  EXPECT_EQ(hits.load(), 2);

  server.stop();
  server_thread.join();
}

}  // namespace
}  // namespace silc
