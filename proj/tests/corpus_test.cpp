#include "silc/corpus.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace silc {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::path(testing::TempDir()) / name).string();
}

// --- align_spans ------------------------------------------------------------

TEST(AlignSpans, SingleEntityAtStart) {
  const std::string text = "Rupiah leads Asia FX losses after solid US data, weekly slides seen.";
  auto spans = align_spans(text, {{"Rupiah", Polarity::Negative}}, Lang::En);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].value, "Rupiah");
  EXPECT_EQ(spans[0].start, 0);
  EXPECT_EQ(spans[0].end, 6);
  EXPECT_EQ(spans[0].sentiment, Polarity::Negative);
}

TEST(AlignSpans, EmptyEntityList) {
  EXPECT_TRUE(align_spans("abc", {}, Lang::En).empty());
}

TEST(AlignSpans, RepeatedChineseEntity) {
  // Same surface form at code-point offsets 5 and 120.
  std::string text = "2月3日,荣联科技";  // 荣 starts at code point 5
  std::string filler;
  for (int i = 0; i < 111; ++i) filler += "股";
  text += filler + "荣联科技还录得涨停";
  ASSERT_EQ(cp_substr(text, 5, 9), "荣联科技");
  ASSERT_EQ(cp_substr(text, 120, 124), "荣联科技");

  auto spans = align_spans(text, {{"荣联科技", Polarity::Negative}, {"荣联科技", Polarity::Positive}}, Lang::Zh);
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].start, 5);
  EXPECT_EQ(spans[0].end, 9);
  EXPECT_EQ(spans[1].start, 120);
  EXPECT_EQ(spans[1].end, 124);
}

// Brute-force oracle: enumerate every assignment of values to occurrences and
// keep the non-overlapping ones.
TEST(AlignSpans, NestedValuesMatchBruteForce) {
  const std::string text = "AA in AAB";
  auto spans = align_spans(text, {{"AAB", Polarity::Neutral}, {"AA", Polarity::Neutral}}, Lang::En);
  ASSERT_EQ(spans.size(), 2u);

  // Occurrences: AA at {0, 6}; AAB at {6}. The only non-overlapping
  // assignment is AA->0, AAB->6; the rule must pick it.
  struct Choice {
    std::int64_t aa, aab;
  };
  std::vector<Choice> valid;
  for (std::int64_t aa : {0, 6})
    for (std::int64_t aab : {6}) {
      const bool overlap = aa < aab + 3 && aab < aa + 2;
      if (!overlap) valid.push_back({aa, aab});
    }
  ASSERT_EQ(valid.size(), 1u);
  EXPECT_EQ(spans[0].value, "AA");
  EXPECT_EQ(spans[0].start, valid[0].aa);
  EXPECT_EQ(spans[1].value, "AAB");
  EXPECT_EQ(spans[1].start, valid[0].aab);
}

TEST(AlignSpans, CaseInsensitiveFallbackEnglishOnly) {
  auto spans = align_spans("Infosys beats estimates", {{"INFOSYS", Polarity::Positive}}, Lang::En);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].value, "Infosys");  // surface form from the text
  EXPECT_EQ(spans[0].start, 0);
}

TEST(AlignSpans, UnalignableThrows) {
  EXPECT_THROW(align_spans("abc", {{"zzz", Polarity::Neutral}}, Lang::En), UnalignableEntity);
  // Two requests, one occurrence: the second cannot be placed.
  EXPECT_THROW(align_spans("Acme up", {{"Acme", Polarity::Positive}, {"Acme", Polarity::Negative}}, Lang::En),
               UnalignableEntity);
}

TEST(AlignSpans, Deterministic) {
  const std::string text = "Acme and Globex and Acme again";
  std::vector<std::pair<std::string, Polarity>> values = {{"Acme", Polarity::Positive},
                                                          {"Acme", Polarity::Negative}};
  auto a = align_spans(text, values, Lang::En);
  auto b = align_spans(text, values, Lang::En);
  EXPECT_EQ(a, b);
}

// --- BILOU ------------------------------------------------------------------

TEST(Bilou, NoEntitiesAllO) {
  Document doc{"d", "nothing to see here", Lang::En, {}};
  for (const auto& t : to_bilou(doc)) EXPECT_EQ(t.tag, "O");
}

TEST(Bilou, MultiTokenEntity) {
  Document doc{"d", "Twitter Inc gained", Lang::En, {{"Twitter Inc", 0, 11, Polarity::Positive}}};
  auto tags = to_bilou(doc);
  ASSERT_EQ(tags.size(), 3u);
  EXPECT_EQ(tags[0].tag, "B-Positive");
  EXPECT_EQ(tags[1].tag, "L-Positive");
  EXPECT_EQ(tags[2].tag, "O");
}

TEST(Bilou, SingleTokenEntityGetsU) {
  Document doc{"d", "Rupiah leads losses", Lang::En, {{"Rupiah", 0, 6, Polarity::Negative}}};
  auto tags = to_bilou(doc);
  ASSERT_GE(tags.size(), 1u);
  EXPECT_EQ(tags[0].tag, "U-Negative");
}

TEST(Bilou, InsideTagForLongEntity) {
  Document doc{"d", "New York Stock Exchange fell", Lang::En, {{"New York Stock Exchange", 0, 23, Polarity::Negative}}};
  auto tags = to_bilou(doc);
  ASSERT_EQ(tags.size(), 5u);
  EXPECT_EQ(tags[0].tag, "B-Negative");
  EXPECT_EQ(tags[1].tag, "I-Negative");
  EXPECT_EQ(tags[2].tag, "I-Negative");
  EXPECT_EQ(tags[3].tag, "L-Negative");
  EXPECT_EQ(tags[4].tag, "O");
}

TEST(Bilou, BoundaryMismatchThrows) {
  // Span cuts through the middle of "Twitter".
  Document doc{"d", "Twitter Inc gained", Lang::En, {{"Twit", 0, 4, Polarity::Positive}}};
  EXPECT_THROW(to_bilou(doc), TokenBoundaryMismatch);
}

TEST(Bilou, FromBilouEmpty) {
  std::vector<BilouToken> tags = {{"a", 0, 1, "O"}, {"b", 2, 3, "O"}};
  EXPECT_TRUE(from_bilou("a b", tags).empty());
}

TEST(Bilou, MalformedSequences) {
  // Polarity change inside an entity.
  std::vector<BilouToken> bad1 = {{"x", 0, 1, "B-Positive"}, {"y", 2, 3, "L-Negative"}};
  EXPECT_THROW(from_bilou("x y", bad1), MalformedTagSequence);
  // Dangling B.
  std::vector<BilouToken> bad2 = {{"x", 0, 1, "B-Positive"}};
  EXPECT_THROW(from_bilou("x", bad2), MalformedTagSequence);
  // I without B.
  std::vector<BilouToken> bad3 = {{"x", 0, 1, "I-Neutral"}, {"y", 2, 3, "L-Neutral"}};
  EXPECT_THROW(from_bilou("x y", bad3), MalformedTagSequence);
  // L without B.
  std::vector<BilouToken> bad4 = {{"x", 0, 1, "L-Neutral"}};
  EXPECT_THROW(from_bilou("x", bad4), MalformedTagSequence);
}

TEST(Bilou, RoundTripProperty) {
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    Document doc = i % 2 ? testutil::random_zh_doc(rng, "z", 1 + rng.below(3))
                         : testutil::random_en_doc(rng, "e", 6 + rng.below(10), 1 + rng.below(3));
    auto entities = from_bilou(doc.text, to_bilou(doc));
    EXPECT_EQ(entities, doc.entities) << "doc " << i << ": " << doc.text;
  }
}

// --- stats ------------------------------------------------------------------

TEST(Stats, HandComputed) {
  Dataset ds;
  ds.push_back({"a", "Acme gained today", Lang::En, {{"Acme", 0, 4, Polarity::Positive}}});
  ds.push_back({"b",
                "Globex fell and Initech rose",
                Lang::En,
                {{"Globex", 0, 6, Polarity::Negative}, {"Initech", 16, 23, Polarity::Positive}}});
  auto s = compute_stats(ds);
  EXPECT_EQ(s.n_texts, 2);
  EXPECT_EQ(s.n_single_entity, 1);
  EXPECT_EQ(s.n_multi_entity, 1);
  EXPECT_EQ(s.n_entities, 3);
  EXPECT_EQ(s.n_positive, 2);
  EXPECT_EQ(s.n_negative, 1);
  EXPECT_EQ(s.n_neutral, 0);
  EXPECT_DOUBLE_EQ(s.avg_entities_per_text, 1.5);
  EXPECT_DOUBLE_EQ(s.avg_len_tokens, 4.0);
  EXPECT_EQ(s.max_len, 5);
  EXPECT_EQ(s.min_len, 3);
}

TEST(Stats, ChineseLengthIsCodePoints) {
  Dataset ds;
  ds.push_back({"a", "公司上涨", Lang::Zh, {}});
  auto s = compute_stats(ds);
  EXPECT_DOUBLE_EQ(s.avg_len_tokens, 4.0);
}

TEST(Stats, EmptyDatasetAllZero) {
  auto s = compute_stats({});
  EXPECT_EQ(s.n_texts, 0);
  EXPECT_EQ(s.n_entities, 0);
  EXPECT_DOUBLE_EQ(s.avg_len_tokens, 0.0);
  EXPECT_DOUBLE_EQ(s.avg_entities_per_text, 0.0);
  EXPECT_EQ(s.min_len, 0);
}

TEST(Stats, ConsistencyProperty) {
  Rng rng(7);
  auto ds = testutil::random_dataset(rng, 60, /*bilingual=*/true);
  auto s = compute_stats(ds);
  EXPECT_EQ(s.n_entities, s.n_positive + s.n_negative + s.n_neutral);
  std::int64_t total = 0;
  for (const auto& d : ds) total += static_cast<std::int64_t>(d.entities.size());
  EXPECT_EQ(s.n_entities, total);
  EXPECT_EQ(s.n_single_entity + s.n_multi_entity,
            static_cast<std::int64_t>(std::count_if(ds.begin(), ds.end(),
                                                    [](const Document& d) { return !d.entities.empty(); })));
}

// --- split ------------------------------------------------------------------

TEST(Split, EightyTwenty) {
  Rng rng(11);
  auto ds = testutil::random_dataset(rng, 100);
  auto [train, test] = split(ds, {0.2, 42});
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(test.size(), 20u);
}

TEST(Split, DeterministicInSeed) {
  Rng rng(12);
  auto ds = testutil::random_dataset(rng, 50);
  auto [train1, test1] = split(ds, {0.3, 9});
  auto [train2, test2] = split(ds, {0.3, 9});
  EXPECT_EQ(test1, test2);
  EXPECT_EQ(train1, train2);
  auto [train3, test3] = split(ds, {0.3, 10});
  EXPECT_NE(test1, test3);  // overwhelmingly likely for 50 docs
}

TEST(Split, ValidationCarvedFromTrain) {
  Rng rng(13);
  auto ds = testutil::random_dataset(rng, 100);
  auto [train, test] = split(ds, {0.2, 1});
  auto [train2, val] = split(train, {0.1, 2});
  EXPECT_EQ(test.size(), 20u);
  EXPECT_EQ(val.size(), 8u);
  EXPECT_EQ(train2.size(), 72u);
}

TEST(Split, DisjointAndComplete) {
  Rng rng(14);
  auto ds = testutil::random_dataset(rng, 37);
  for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
    auto [train, test] = split(ds, {0.25, seed});
    EXPECT_EQ(train.size() + test.size(), ds.size());
    std::set<std::string> ids;
    for (const auto& d : train) ids.insert(d.id);
    for (const auto& d : test) EXPECT_FALSE(ids.count(d.id));
  }
}

TEST(Split, MembershipIndependentOfInputOrder) {
  Rng rng(15);
  auto ds = testutil::random_dataset(rng, 30);
  auto shuffled = ds;
  rng.shuffle(shuffled);
  auto [_, test_a] = split(ds, {0.2, 5});
  auto [__, test_b] = split(shuffled, {0.2, 5});
  std::set<std::string> a, b;
  for (const auto& d : test_a) a.insert(d.id);
  for (const auto& d : test_b) b.insert(d.id);
  EXPECT_EQ(a, b);
}

// --- JSONL ------------------------------------------------------------------

TEST(Jsonl, RoundTrip) {
  Rng rng(21);
  auto ds = testutil::random_dataset(rng, 25, /*bilingual=*/true);
  const std::string path = temp_path("roundtrip.jsonl");
  save_jsonl(path, ds);
  auto loaded = load_jsonl(path);
  EXPECT_EQ(loaded, ds);
}

TEST(Jsonl, EmptyFile) {
  const std::string path = temp_path("empty.jsonl");
  std::ofstream(path).close();
  EXPECT_TRUE(load_jsonl(path).empty());
}

TEST(Jsonl, MissingStartFieldReportsLine) {
  const std::string path = temp_path("bad.jsonl");
  std::ofstream out(path);
  out << R"({"id":"a","text":"Acme up","lang":"en","entities":[]})" << "\n";
  out << R"({"id":"b","text":"Acme up","lang":"en","entities":[{"value":"Acme","end":4,"tag":"positive"}]})"
      << "\n";
  out.close();
  try {
    load_jsonl(path);
    FAIL() << "expected SchemaViolation";
  } catch (const SchemaViolation& e) {
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(Jsonl, SpanValidityCheckedOnLoad) {
  const std::string path = temp_path("badspan.jsonl");
  std::ofstream out(path);
  out << R"({"id":"a","text":"Acme up","lang":"en","entities":[{"value":"Acme","start":1,"end":5,"tag":"positive"}]})"
      << "\n";
  out.close();
  EXPECT_THROW(load_jsonl(path), SchemaViolation);
}

TEST(Jsonl, BilingualTagNormalization) {
  const std::string path = temp_path("zh.jsonl");
  std::ofstream out(path);
  out << R"({"id":"a","text":"公司上涨","lang":"zh","entities":[{"value":"公司","start":0,"end":2,"tag":"正面"}]})"
      << "\n";
  out.close();
  auto ds = load_jsonl(path);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].entities[0].sentiment, Polarity::Positive);
}

TEST(Jsonl, DuplicateIdRejected) {
  const std::string path = temp_path("dup.jsonl");
  std::ofstream out(path);
  out << R"({"id":"a","text":"x","lang":"en","entities":[]})" << "\n";
  out << R"({"id":"a","text":"y","lang":"en","entities":[]})" << "\n";
  out.close();
  EXPECT_THROW(load_jsonl(path), SchemaViolation);
}

// --- polarity map -----------------------------------------------------------

TEST(Polarity, BilingualMap) {
  EXPECT_EQ(parse_polarity("Positive"), Polarity::Positive);
  EXPECT_EQ(parse_polarity("NEGATIVE"), Polarity::Negative);
  EXPECT_EQ(parse_polarity("正面"), Polarity::Positive);
  EXPECT_EQ(parse_polarity("负面"), Polarity::Negative);
  EXPECT_EQ(parse_polarity("中立"), Polarity::Neutral);
  EXPECT_EQ(parse_polarity(" neutral "), Polarity::Neutral);
  EXPECT_EQ(parse_polarity("bogus"), std::nullopt);
}

}  // namespace
}  // namespace silc
