#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <map>

#include "mock_judge.hpp"
#include "sftsel/sftsel.hpp"
#include "test_support.hpp"

namespace sftsel {
namespace {

using nlohmann::json;
using testing::fixture;
using testing::golden;
using testing::TempDir;

struct Run {
  int code = -1;
  std::string output;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

Run run_cli(const TempDir& dir, const std::vector<std::string>& args) {
  std::string cmd = quote(SFTSEL_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const auto log = dir / "cli.log";
  cmd += " > " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = detail::read_file(log);
  return r;
}

json read_json(const std::filesystem::path& p) { return json::parse(detail::read_file(p)); }

TEST(CliSelect, LongestOnSmallFixture) {
  TempDir dir;
  const auto out = (dir / "out").string();
  const auto r = run_cli(dir, {"select", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--strategy", "longest", "--k", "2", "--out", out});
  ASSERT_EQ(r.code, 0) << r.output;
  const auto sel = read_json(dir / "out/selection.json");
  EXPECT_EQ(sel.at("indices"), json::array({2, 0}));
  EXPECT_EQ(sel.at("strategy"), "longest");
  const auto subset = parse_dataset(detail::read_file(dir / "out/subset.jsonl"),
                                    SourceFormat::generic_jsonl, "subset");
  ASSERT_EQ(subset.size(), 2u);
  EXPECT_EQ(subset.records[0].instruction, "Write a story about a cat.");
  const auto cfg = read_json(dir / "out/run_config.json");
  EXPECT_EQ(cfg.at("k"), 2);
  EXPECT_EQ(cfg.at("counter"), "whitespace_words");
}

TEST(CliSelect, KMeansOnBundledBlobs) {
  TempDir dir;
  auto select = [&](const std::string& out) {
    return run_cli(dir, {"select", "--dataset", fixture("blobs300.jsonl").string(), "--strategy",
                         "diversity_kmeans", "--embeddings", fixture("blobs300.sfte").string(),
                         "--clusters", "3", "--k", "30", "--seed", "11", "--out", (dir / out).string()});
  };
  const auto first = select("a");
  ASSERT_EQ(first.code, 0) << first.output;
  ASSERT_EQ(select("b").code, 0);
  const auto sel = read_json(dir / "a/selection.json");
  std::array<int, 3> per_blob{};
  for (const auto& id : sel.at("indices")) ++per_blob[id.get<std::size_t>() / 100];
  EXPECT_EQ(per_blob, (std::array<int, 3>{10, 10, 10}));
  EXPECT_EQ(detail::read_file(dir / "a/selection.json"), detail::read_file(dir / "b/selection.json"));
  EXPECT_EQ(detail::read_file(dir / "a/subset.jsonl"), detail::read_file(dir / "b/subset.jsonl"));
}

TEST(CliSelect, KLargerThanDatasetExitsTwo) {
  TempDir dir;
  const auto r = run_cli(dir, {"select", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--strategy", "random", "--k", "5", "--out",
                               (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("k=5"), std::string::npos) << r.output;
}

TEST(CliSelect, EmbeddingRowMismatchExitsTwo) {
  TempDir dir;
  const auto r = run_cli(dir, {"select", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--strategy", "diversity_kcenter", "--embeddings",
                               fixture("blobs300.sfte").string(), "--k", "2", "--out",
                               (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("300 rows"), std::string::npos) << r.output;
}

TEST(CliSelect, ConfigFileWithFlagOverride) {
  TempDir dir;
  const json cfg = {{"dataset", fixture("alpaca_small.json").string()},
                    {"format", "alpaca_json"},
                    {"strategy", "shortest"},
                    {"k", 3},
                    {"counter", "bytes"},
                    {"out", (dir / "out").string()}};
  detail::write_file_atomic(dir / "cfg.json", cfg.dump());
  const auto r = run_cli(dir, {"select", "--config", (dir / "cfg.json").string(), "--k", "1"});
  ASSERT_EQ(r.code, 0) << r.output;
  // "Red" (3 bytes) beats "Mammal" (6 bytes)
  EXPECT_EQ(read_json(dir / "out/selection.json").at("indices"), json::array({3}));
  EXPECT_EQ(read_json(dir / "out/run_config.json").at("k"), 1);

  detail::write_file_atomic(dir / "bad.json", R"({"dataset": "x", "colour": "blue"})");
  EXPECT_EQ(run_cli(dir, {"select", "--config", (dir / "bad.json").string()}).code, 2);
}

TEST(CliSelect, QualityFromGradedScores) {
  TempDir dir;
  std::filesystem::create_directories(dir / "g");
  std::filesystem::copy_file(testing::golden_path("alpaca_small.quality_scores.jsonl"),
                             dir / "g/quality_scores.jsonl");
  const auto r = run_cli(dir, {"select", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--strategy", "quality", "--scores",
                               (dir / "g/quality_scores.jsonl").string(), "--k", "2", "--out",
                               (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_json(dir / "out/selection.json").at("indices"), json::array({1, 0}));
}

TEST(CliMaterialize, RebuildsSubsetFromSelection) {
  TempDir dir;
  ASSERT_EQ(run_cli(dir, {"select", "--dataset", fixture("alpaca_small.json").string(), "--format",
                          "alpaca_json", "--strategy", "random", "--k", "3", "--seed", "4", "--out",
                          (dir / "a").string()})
                .code,
            0);
  const auto r = run_cli(dir, {"materialize", "--dataset", fixture("alpaca_small.json").string(),
                               "--format", "alpaca_json", "--selection",
                               (dir / "a/selection.json").string(), "--out", (dir / "b").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(detail::read_file(dir / "a/subset.jsonl"), detail::read_file(dir / "b/subset.jsonl"));
}

// ---------------------------------------------------------------------------

TEST(CliGrade, OfflineWithWarmCacheMatchesGolden) {
  TempDir dir;
  const auto cache = dir / "cache";
  const std::map<std::string, std::string> replies{
      {"Give three tips", "4.5\nThe tips are accurate."},
      {"Classify the following", "5\nCorrect classification."},
      {"Write a story", "3.5\nA short story."},
      {"Name a primary", "4\nCorrect but brief."}};
  {
    GatewayOptions opts;
    opts.cache_dir = cache;
    Gateway gw(opts, FunctionTransport::replying([&](const ChatRequest& r) {
      for (const auto& [needle, reply] : replies) {
        if (r.system.find(needle) != std::string::npos) return reply;
      }
      return std::string("?");
    }));
    grade_dataset(load_dataset(fixture("alpaca_small.json"), SourceFormat::alpaca_json), gw);
  }
  const auto r = run_cli(dir, {"grade", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--offline", "--cache-dir", cache.string(), "--out",
                               (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  const auto got = quality_table_from_jsonl(detail::read_file(dir / "out/quality_scores.jsonl"));
  const auto want = quality_table_from_jsonl(golden("alpaca_small.quality_scores.jsonl"));
  EXPECT_EQ(got.entries, want.entries);
  const auto hist = read_json(dir / "out/histogram.json");
  EXPECT_EQ(hist.at("bins").at("4.5"), 1);
  EXPECT_EQ(hist.at("total"), 4);
  const auto meta = read_json(dir / "out/quality_meta.json");
  EXPECT_EQ(meta.at("grader_model"), "gpt-3.5-turbo-0301");

  // a cold cache offline is an upstream failure
  const auto cold = run_cli(dir, {"grade", "--dataset", fixture("alpaca_small.json").string(),
                                  "--format", "alpaca_json", "--offline", "--cache-dir",
                                  (dir / "empty").string(), "--out", (dir / "cold").string()});
  EXPECT_EQ(cold.code, 1) << cold.output;
}

TEST(CliGrade, TooManyUnparsedExitsOneAfterWritingScores) {
  TempDir dir;
  const auto cache = dir / "cache";
  {
    GatewayOptions opts;
    opts.cache_dir = cache;
    Gateway gw(opts, FunctionTransport::replying([](const ChatRequest& r) {
      return r.system.find("Red") != std::string::npos ? "unsure" : "3";
    }));
    grade_dataset(load_dataset(fixture("alpaca_small.json"), SourceFormat::alpaca_json), gw);
  }
  const auto r = run_cli(dir, {"grade", "--dataset", fixture("alpaca_small.json").string(), "--format",
                               "alpaca_json", "--offline", "--cache-dir", cache.string(), "--out",
                               (dir / "out").string()});
  EXPECT_EQ(r.code, 1) << r.output;
  const auto table = quality_table_from_jsonl(detail::read_file(dir / "out/quality_scores.jsonl"));
  EXPECT_FALSE(table.entries.at(3).score.has_value());
  EXPECT_EQ(table.entries.at(0).score, 3.0);
}

// ---------------------------------------------------------------------------

// 252 items: A beats B on 151, ties 36, loses 65 under the merit judge.
void write_judge_fixture(const TempDir& dir) {
  std::string testset, a, b;
  for (int i = 0; i < 252; ++i) {
    const auto id = std::to_string(i);
    testset += json{{"id", i}, {"instruction", "Question number " + id}}.dump() + "\n";
    const int merit_a = i < 151 ? 9 : i < 187 ? 5 : 2;
    a += json{{"id", i}, {"response", "A answer " + id + " q=" + std::to_string(merit_a)}}.dump() + "\n";
    b += json{{"id", i}, {"response", "B answer " + id + " q=5"}}.dump() + "\n";
  }
  detail::write_file_atomic(dir / "testset.jsonl", testset);
  detail::write_file_atomic(dir / "a.jsonl", a);
  detail::write_file_atomic(dir / "b.jsonl", b);
}

void warm_judge_cache(const TempDir& dir, JudgeVariant variant) {
  GatewayOptions opts;
  opts.cache_dir = dir / "cache";
  Gateway gw(opts, testing::merit_judge());
  JudgeOptions jo;
  jo.variant = variant;
  compare_systems(load_testset(dir / "testset.jsonl"), load_responses(dir / "a.jsonl"),
                  load_responses(dir / "b.jsonl"), gw, jo);
}

std::vector<std::string> judge_args(const TempDir& dir, const std::string& out) {
  return {"judge",         "--testset",     (dir / "testset.jsonl").string(),
          "--responses-a", (dir / "a.jsonl").string(),
          "--responses-b", (dir / "b.jsonl").string(),
          "--offline",     "--cache-dir",   (dir / "cache").string(),
          "--out",         (dir / out).string()};
}

TEST(CliJudge, ReplayedVerdictsGiveExpectedWinningScore) {
  TempDir dir;
  write_judge_fixture(dir);
  warm_judge_cache(dir, JudgeVariant::standard);
  const auto r = run_cli(dir, judge_args(dir, "out"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = read_json(dir / "out/report.json");
  EXPECT_EQ(report.at("wins"), 151);
  EXPECT_EQ(report.at("ties"), 36);
  EXPECT_EQ(report.at("losses"), 65);
  EXPECT_EQ(report.at("testset_size"), 252);
  EXPECT_NEAR(report.at("winning_score").get<double>(), 1.3413, 1e-4);
  EXPECT_NE(r.output.find("winning score 1.3413"), std::string::npos) << r.output;

  // re-running is byte-identical
  ASSERT_EQ(run_cli(dir, judge_args(dir, "again")).code, 0);
  EXPECT_EQ(detail::read_file(dir / "out/report.json"), detail::read_file(dir / "again/report.json"));
}

TEST(CliJudge, DebiasedRunReportsAgreement) {
  TempDir dir;
  write_judge_fixture(dir);
  warm_judge_cache(dir, JudgeVariant::standard);
  warm_judge_cache(dir, JudgeVariant::debiased);
  ASSERT_EQ(run_cli(dir, judge_args(dir, "std")).code, 0);
  auto args = judge_args(dir, "deb");
  args.insert(args.end(), {"--variant", "debiased", "--agree-with", (dir / "std/report.json").string()});
  const auto r = run_cli(dir, args);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = read_json(dir / "deb/report.json");
  EXPECT_EQ(report.at("variant"), "debiased");
  EXPECT_EQ(report.at("agreement").at("rate"), 1.0);
}

TEST(CliJudge, MissingResponseExitsTwo) {
  TempDir dir;
  write_judge_fixture(dir);
  detail::write_file_atomic(dir / "b.jsonl", "{\"id\":0,\"response\":\"only one\"}\n");
  EXPECT_EQ(run_cli(dir, judge_args(dir, "out")).code, 2);
}

// ---------------------------------------------------------------------------

TEST(CliAnalyze, TenCopiesGiveFullCoverage) {
  TempDir dir;
  std::string data;
  for (int i = 0; i < 10; ++i) data += R"({"instruction":"Write a poem","input":null,"response":"Roses are red."})" "\n";
  detail::write_file_atomic(dir / "poems.jsonl", data);
  const auto r = run_cli(dir, {"analyze", "--dataset", (dir / "poems.jsonl").string(), "--out",
                               (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  const auto insights = read_json(dir / "out/insights.json");
  EXPECT_EQ(insights.at("verb_noun").at("top_verb_coverage"), 1.0);
  EXPECT_EQ(insights.at("verb_noun").at("top_verbs")[0].at("nouns").at("poem"), 10);
  EXPECT_EQ(insights.at("response_length").at("median"), 3.0);
  const auto sunburst = read_json(dir / "out/sunburst.json");
  EXPECT_EQ(sunburst.at("children")[0].at("name"), "write");
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, {}).code, 2);
  EXPECT_EQ(run_cli(dir, {"select", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run_cli(dir, {"select", "--k", "two"}).code, 2);
  EXPECT_EQ(run_cli(dir, {"select", "--out", (dir / "o").string()}).code, 2);
  EXPECT_EQ(run_cli(dir, {"--help"}).code, 0);
}

}  // namespace
}  // namespace sftsel
