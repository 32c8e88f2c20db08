#include "sftsel/corpus.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"

namespace sftsel {
namespace {

using testing::fixture;
using testing::golden;

TEST(LoadDataset, AlpacaArrayAssignsPositionalIds) {
  const auto ds = load_dataset(fixture("alpaca_small.json"), SourceFormat::alpaca_json);
  ASSERT_EQ(ds.size(), 4u);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.records[i].id, i);
  EXPECT_EQ(ds.name, "alpaca_small");
  EXPECT_EQ(ds.records[1].input, std::optional<std::string>("Dolphin"));
  EXPECT_FALSE(ds.records[0].has_input());
  EXPECT_TRUE(ds.records[1].has_input());
}

TEST(LoadDataset, ThreeRecordAlpacaArray) {
  const auto ds = parse_dataset(
      R"([{"instruction":"a","input":"","output":"x"},
          {"instruction":"b","input":"","output":"y"},
          {"instruction":"c","input":"","output":"z"}])",
      SourceFormat::alpaca_json, "t");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.records[2].id, 2u);
  EXPECT_EQ(ds.records[2].response, "z");
}

TEST(LoadDataset, DollyFieldMapping) {
  const auto ds = load_dataset(fixture("dolly_small.jsonl"), SourceFormat::dolly_jsonl);
  ASSERT_EQ(ds.size(), 2u);
  const auto& d = ds.records[0];
  EXPECT_EQ(d.instruction, "Q");
  EXPECT_EQ(d.input, std::optional<std::string>("C"));
  EXPECT_EQ(d.response, "R");
}

TEST(LoadDataset, WizardLmHasNoInput) {
  const auto ds = load_dataset(fixture("wizardlm_small.json"), SourceFormat::wizardlm_json);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_FALSE(ds.records[0].input.has_value());
  EXPECT_EQ(ds.records[0].instruction, "Write a haiku about autumn.");
}

TEST(LoadDataset, MissingInstructionNamesFieldAndRecord) {
  const std::string text =
      "{\"instruction\":\"ok\",\"response\":\"r\"}\n{\"input\":\"x\",\"response\":\"r\"}\n";
  try {
    parse_dataset(text, SourceFormat::generic_jsonl, "t");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("\"instruction\""), std::string::npos) << msg;
    EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
  }
}

TEST(LoadDataset, MalformedJsonlReportsRecordIndex) {
  const std::string text = "{\"instruction\":\"a\",\"response\":\"r\"}\n{not json}\n";
  try {
    parse_dataset(text, SourceFormat::generic_jsonl, "t");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, RejectsInvalidUtf8) {
  const std::string text = "{\"instruction\":\"caf\xE9\",\"response\":\"r\"}\n";
  EXPECT_THROW(parse_dataset(text, SourceFormat::generic_jsonl, "t"), ParseError);
}

TEST(LoadDataset, RejectsBlankInstructionAndEmptyFile) {
  EXPECT_THROW(parse_dataset("{\"instruction\":\"  \",\"response\":\"r\"}",
                             SourceFormat::generic_jsonl, "t"),
               SchemaError);
  EXPECT_THROW(parse_dataset("\n\n", SourceFormat::generic_jsonl, "t"), SchemaError);
  EXPECT_THROW(parse_dataset("[]", SourceFormat::alpaca_json, "t"), SchemaError);
}

TEST(LoadDataset, EmptyResponseIsKept) {
  const auto ds = parse_dataset("{\"instruction\":\"a\",\"response\":\"\"}",
                                SourceFormat::generic_jsonl, "t");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(count_response_tokens(ds.records[0], TokenCounter::bytes()), 0u);
}

TEST(LoadDataset, MissingFileIsConfigError) {
  EXPECT_THROW(load_dataset(fixture("nope.json"), SourceFormat::alpaca_json), ConfigError);
}

TEST(GenericJsonl, RoundTripPreservesRecords) {
  for (auto [file, format] : {std::pair{"alpaca_small.json", SourceFormat::alpaca_json},
                              std::pair{"dolly_small.jsonl", SourceFormat::dolly_jsonl},
                              std::pair{"wizardlm_small.json", SourceFormat::wizardlm_json}}) {
    const auto ds = load_dataset(fixture(file), format);
    const auto text = to_generic_jsonl(ds);
    const auto back = parse_dataset(text, SourceFormat::generic_jsonl, ds.name);
    EXPECT_EQ(back.records, ds.records) << file;
  }
}

TEST(GenericJsonl, NullInputIsWrittenAsNull) {
  Demonstration d{0, "i", std::nullopt, "r"};
  const auto j = to_generic_json(d);
  EXPECT_TRUE(j.at("input").is_null());
  EXPECT_EQ(j.at("id"), 0);
}

TEST(CountResponseTokens, SpecExamples) {
  Demonstration d{0, "instr", std::string("ignored input words"), "a b  c"};
  EXPECT_EQ(count_response_tokens(d, TokenCounter::whitespace_words()), 3u);
  d.response = "";
  EXPECT_EQ(count_response_tokens(d, TokenCounter::whitespace_words()), 0u);
  EXPECT_EQ(count_response_tokens(d, TokenCounter::bytes()), 0u);
  d.response = "hello";
  EXPECT_EQ(count_response_tokens(d, TokenCounter::bytes()), 5u);
}

TEST(CountResponseTokens, SubwordGreedyLongestMatch) {
  const auto c = TokenCounter::subword(fixture("vocab.txt"));
  EXPECT_EQ(c.count(""), 0u);
  EXPECT_EQ(c.count("the quick fox"), 3u);
  EXPECT_EQ(c.count("jumps"), 2u);         // jump + s
  EXPECT_EQ(c.count("unbelievable"), 3u);  // un + believ + able
  EXPECT_EQ(c.count("zzz"), 3u);           // unknown bytes, one per code point
  EXPECT_EQ(c.count("\xC3\xA9t\xC3\xA9"), 3u);  // "été": three code points
  Demonstration d{0, "the the the", std::nullopt, "dog"};
  EXPECT_EQ(count_response_tokens(d, c), 1u);
}

TEST(CountResponseTokens, SubwordWithoutVocabIsConfigError) {
  EXPECT_THROW(TokenCounter::subword(fixture("missing_vocab.txt")), ConfigError);
  EXPECT_THROW(TokenCounter::make(CountMode::subword, std::nullopt), ConfigError);
}

TEST(CountResponseTokens, DefaultFallsBackToWhitespace) {
  EXPECT_EQ(TokenCounter::make_default(std::nullopt).mode(), CountMode::whitespace_words);
  EXPECT_EQ(TokenCounter::make_default(fixture("vocab.txt")).mode(), CountMode::subword);
}

// count(a + b) >= count(a) for the bytes and whitespace counters.
TEST(CountResponseTokens, MonotoneUnderConcatenation) {
  std::mt19937 gen(123);
  const std::string alphabet = "ab \n\t.";
  auto random_text = [&] {
    std::string s;
    const int len = static_cast<int>(gen() % 20);
    for (int i = 0; i < len; ++i) s.push_back(alphabet[gen() % alphabet.size()]);
    return s;
  };
  for (auto counter : {TokenCounter::bytes(), TokenCounter::whitespace_words()}) {
    for (int trial = 0; trial < 2000; ++trial) {
      const auto a = random_text();
      const auto b = random_text();
      ASSERT_GE(counter.count(a + b), counter.count(a)) << '"' << a << "\" + \"" << b << '"';
      ASSERT_EQ(counter.count(a), counter.count(a));
    }
  }
}

TEST(RenderTrainPrompt, MatchesGoldenFiles) {
  const auto ds = load_dataset(fixture("alpaca_small.json"), SourceFormat::alpaca_json);
  EXPECT_EQ(render_train_prompt(ds.records[0], TrainTemplate::alpaca_dolly),
            golden("train_alpaca_no_input.txt"));
  EXPECT_EQ(render_train_prompt(ds.records[1], TrainTemplate::alpaca_dolly),
            golden("train_alpaca_with_input.txt"));
  const auto wiz = load_dataset(fixture("wizardlm_small.json"), SourceFormat::wizardlm_json);
  EXPECT_EQ(render_train_prompt(wiz.records[0], TrainTemplate::wizardlm),
            golden("train_wizardlm.txt"));
}

TEST(RenderTrainPrompt, SpecExamples) {
  Demonstration d{0, "I", std::nullopt, ""};
  const auto plain = render_train_prompt(d, TrainTemplate::alpaca_dolly);
  EXPECT_EQ(plain.rfind("Below is an instruction that describes a task. Write a response", 0), 0u);
  EXPECT_TRUE(plain.ends_with("### Response:"));
  d.input = "X";
  EXPECT_NE(render_train_prompt(d, TrainTemplate::alpaca_dolly).find("### Input:\nX"),
            std::string::npos);
  EXPECT_EQ(render_train_prompt(d, TrainTemplate::wizardlm), "I\n\n### Response:");
}

TEST(RenderTrainPrompt, EmptyInputUsesNoInputTemplate) {
  Demonstration d{0, "I", std::string(""), ""};
  EXPECT_EQ(render_train_prompt(d, TrainTemplate::alpaca_dolly).find("### Input:"),
            std::string::npos);
}

}  // namespace
}  // namespace sftsel
