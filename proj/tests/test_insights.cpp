#include "sftsel/insights.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

namespace sftsel {
namespace {

using testing::golden;
using testing::TempDir;

const auto kHeuristic = VerbNounExtractor::heuristic();

std::vector<std::string> repeat(std::vector<std::string> out, const std::string& s, int n) {
  out.insert(out.end(), static_cast<std::size_t>(n), s);
  return out;
}

TEST(ExtractVerbNoun, Examples) {
  EXPECT_EQ(extract_verb_noun_heuristic("Write a story about a cat."), (VerbNoun{"write", "story"}));
  EXPECT_EQ(extract_verb_noun_heuristic("Paris is the capital of what?"), std::nullopt);
  EXPECT_EQ(extract_verb_noun_heuristic("Generate a list of questions"),
            (VerbNoun{"generate", "list"}));
}

TEST(ExtractVerbNoun, LexiconDetails) {
  // plural objects are reduced to the lexicon singular
  EXPECT_EQ(extract_verb_noun_heuristic("Give three TIPS for staying healthy."),
            (VerbNoun{"give", "tip"}));
  EXPECT_EQ(extract_verb_noun_heuristic("Create five stories."), (VerbNoun{"create", "story"}));
  // noun must appear within six words of the verb
  EXPECT_EQ(extract_verb_noun_heuristic("Write one two three four five six poem"), std::nullopt);
  EXPECT_EQ(extract_verb_noun_heuristic("Write one two three four five poem"),
            (VerbNoun{"write", "poem"}));
  EXPECT_EQ(extract_verb_noun_heuristic("Write quickly."), std::nullopt);
  EXPECT_EQ(extract_verb_noun_heuristic(""), std::nullopt);
}

TEST(VerbNounDistribution, TenCopies) {
  const auto instructions = repeat({}, "Write a poem", 10);
  const auto t = verb_noun_distribution(instructions, kHeuristic);
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(t.entries[0].verb, "write");
  EXPECT_EQ(t.entries[0].nouns, (std::vector<std::pair<std::string, std::size_t>>{{"poem", 10}}));
  EXPECT_EQ(coverage(t, {"write"}), 1.0);
}

TEST(VerbNounDistribution, EmptyInput) {
  const auto t = verb_noun_distribution(std::vector<std::string>{}, kHeuristic);
  EXPECT_TRUE(t.entries.empty());
  EXPECT_EQ(t.unparsed_count, 0u);
  EXPECT_EQ(emit_sunburst(t).at("children").size(), 0u);
}

// 100 instructions whose verb/noun composition is tallied by hand below.
std::vector<std::string> mixed_fixture() {
  std::vector<std::string> v;
  v = repeat(v, "Write a poem about the ocean.", 18);
  v = repeat(v, "Write a short story about a robot.", 12);
  v = repeat(v, "Write an essay on climate change.", 6);
  v = repeat(v, "Write a letter to your landlord.", 2);
  v = repeat(v, "Write an email to a colleague.", 1);
  v = repeat(v, "Generate a list of interview questions.", 11);
  v = repeat(v, "Generate three names for a bakery.", 4);
  v = repeat(v, "Explain the concept of entropy.", 9);
  v = repeat(v, "Explain the difference between a virus and bacteria.", 3);
  v = repeat(v, "Give an example of a metaphor.", 5);
  v = repeat(v, "Give me some tips for sleeping well.", 5);
  v = repeat(v, "Describe the process of photosynthesis.", 4);
  v = repeat(v, "Translate the sentence into French.", 2);
  v = repeat(v, "What is the tallest mountain?", 10);
  v = repeat(v, "Summarize quickly.", 3);
  v = repeat(v, "How do airplanes fly?", 5);
  return v;
}

TEST(VerbNounDistribution, MatchesHandTally) {
  const auto inputs = mixed_fixture();
  ASSERT_EQ(inputs.size(), 100u);
  const auto t = verb_noun_distribution(inputs, kHeuristic, 20, 4);
  using Nouns = std::vector<std::pair<std::string, std::size_t>>;
  ASSERT_EQ(t.entries.size(), 6u);
  EXPECT_EQ(t.entries[0], (VerbEntry{"write", 39, Nouns{{"poem", 18}, {"story", 12}, {"essay", 6}, {"letter", 2}}}));
  EXPECT_EQ(t.entries[1], (VerbEntry{"generate", 15, Nouns{{"list", 11}, {"name", 4}}}));
  EXPECT_EQ(t.entries[2], (VerbEntry{"explain", 12, Nouns{{"concept", 9}, {"difference", 3}}}));
  EXPECT_EQ(t.entries[3], (VerbEntry{"give", 10, Nouns{{"example", 5}, {"tip", 5}}}));
  EXPECT_EQ(t.entries[4], (VerbEntry{"describe", 4, Nouns{{"process", 4}}}));
  EXPECT_EQ(t.entries[5], (VerbEntry{"translate", 2, Nouns{{"sentence", 2}}}));
  EXPECT_EQ(t.parsed_total, 82u);
  EXPECT_EQ(t.unparsed_count, 18u);
  EXPECT_EQ(t.input_size(), 100u);
  EXPECT_DOUBLE_EQ(coverage(t, {"write", "generate"}), 0.54);

  // truncation to top verbs keeps untruncated totals for coverage
  const auto top2 = verb_noun_distribution(inputs, kHeuristic, 2, 1);
  ASSERT_EQ(top2.entries.size(), 2u);
  EXPECT_EQ(top2.entries[0].nouns.size(), 1u);
  EXPECT_DOUBLE_EQ(coverage(top2, {"explain"}), 0.12);
}

TEST(VerbNounDistribution, PermutationInvariant) {
  auto inputs = mixed_fixture();
  const auto base = verb_noun_distribution(inputs, kHeuristic);
  std::mt19937 gen(9);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(inputs.begin(), inputs.end(), gen);
    const auto t = verb_noun_distribution(inputs, kHeuristic);
    EXPECT_EQ(t.entries, base.entries);
    EXPECT_EQ(t.verb_counts, base.verb_counts);
  }
}

TEST(VerbNounDistribution, FullCoveragePlusUnparsedIsOne) {
  const auto t = verb_noun_distribution(mixed_fixture(), kHeuristic, 1000, 1000);
  const double unparsed = static_cast<double>(t.unparsed_count) / static_cast<double>(t.input_size());
  EXPECT_DOUBLE_EQ(coverage(t, top_verb_set(t)) + unparsed, 1.0);
}

TEST(VerbNounDistribution, LexicographicTies) {
  const std::vector<std::string> inputs{"Write a poem", "List a story", "List a poem", "Write a story"};
  const auto t = verb_noun_distribution(inputs, kHeuristic);
  ASSERT_EQ(t.entries.size(), 2u);
  EXPECT_EQ(t.entries[0].verb, "list");
  EXPECT_EQ(t.entries[0].nouns[0].first, "poem");
}

TEST(ExternalParses, SidecarLookup) {
  TempDir dir;
  detail::write_file_atomic(dir / "p.jsonl",
                            "{\"id\":0,\"verb\":\"compose\",\"noun\":\"poem\"}\n"
                            "{\"id\":1,\"verb\":null,\"noun\":null}\n");
  const auto ex = VerbNounExtractor::external(ExternalParses::load(dir / "p.jsonl"));
  std::vector<std::string> warnings;
  EXPECT_EQ(ex.extract(0, "anything", &warnings), (VerbNoun{"compose", "poem"}));
  EXPECT_EQ(ex.extract(1, "Write a poem", &warnings), std::nullopt);
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(ex.extract(2, "Write a poem", &warnings), std::nullopt);
  ASSERT_EQ(warnings.size(), 1u);

  const std::vector<std::string> inputs{"a", "b", "c"};
  const auto t = verb_noun_distribution(inputs, ex);
  EXPECT_EQ(t.parsed_total, 1u);
  EXPECT_EQ(t.unparsed_count, 2u);
  EXPECT_EQ(t.warnings.size(), 1u);
}

TEST(Sunburst, SingleVerbNoun) {
  const auto t = verb_noun_distribution(std::vector<std::string>{"Write a poem"}, kHeuristic);
  const auto j = emit_sunburst(t);
  ASSERT_EQ(j.at("children").size(), 1u);
  EXPECT_EQ(j.at("children")[0].at("name"), "write");
  ASSERT_EQ(j.at("children")[0].at("children").size(), 1u);
  EXPECT_EQ(j.at("children")[0].at("children")[0].at("value"), 1);
}

TEST(Sunburst, MatchesGoldenFile) {
  std::vector<std::string> inputs;
  inputs = repeat(inputs, "Write a poem about the sea.", 3);
  inputs = repeat(inputs, "Write a short story.", 2);
  inputs = repeat(inputs, "Generate a list of questions", 2);
  inputs = repeat(inputs, "Explain the concept of gravity.", 1);
  inputs = repeat(inputs, "What is the capital of Peru?", 1);
  const auto t = verb_noun_distribution(inputs, kHeuristic);
  EXPECT_EQ(emit_sunburst(t), nlohmann::json::parse(golden("sunburst_small.json")));
}

TEST(Sunburst, TotalsMatchTable) {
  const auto t = verb_noun_distribution(mixed_fixture(), kHeuristic);
  const auto sunburst = emit_sunburst(t);
  std::size_t total = 0;
  for (const auto& verb : sunburst.at("children")) {
    for (const auto& leaf : verb.at("children")) total += leaf.at("value").get<std::size_t>();
  }
  EXPECT_EQ(total, t.displayed_total());
}

TEST(LengthStats, Examples) {
  const std::vector<std::size_t> three{1, 2, 3};
  auto s = length_stats(three);
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.median, 2.0);
  const std::vector<std::size_t> one{7};
  s = length_stats(one);
  EXPECT_EQ(s.min, 7u);
  EXPECT_EQ(s.max, 7u);
  EXPECT_EQ(s.mean, 7.0);
  const std::vector<std::size_t> four{4, 1, 3, 2};
  EXPECT_EQ(length_stats(four).median, 2.5);
  EXPECT_THROW(length_stats(std::span<const std::size_t>{}), ArgumentError);
}

TEST(LengthStats, PercentilesMatchSortOracle) {
  std::mt19937 gen(21);
  std::vector<std::size_t> lengths(1000);
  for (auto& l : lengths) l = gen() % 5000;
  const auto s = length_stats(lengths);
  auto sorted = lengths;
  std::sort(sorted.begin(), sorted.end());
  // nearest rank on 1000 items: p-th percentile is the (10 p)-th smallest
  for (int p : kReportedPercentiles) EXPECT_EQ(s.percentiles.at(p), sorted[10 * p - 1]) << p;
  EXPECT_EQ(s.min, sorted.front());
  EXPECT_EQ(s.max, sorted.back());
  EXPECT_EQ(s.median, (sorted[499] + sorted[500]) / 2.0);
  const auto j = to_json(s);
  EXPECT_EQ(j.at("percentiles").size(), 8u);
  EXPECT_TRUE(j.at("percentiles").contains("p95"));
}

}  // namespace
}  // namespace sftsel
