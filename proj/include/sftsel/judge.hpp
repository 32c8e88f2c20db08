#pragma once

// Pairwise LLM judging with a position-swapped double pass.

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sftsel/detail/parallel.hpp"
#include "sftsel/detail/text.hpp"
#include "sftsel/gateway.hpp"
#include "sftsel/grader.hpp"

namespace sftsel {

enum class JudgeVariant { standard, debiased };

inline std::string_view to_string(JudgeVariant v) noexcept {
  return v == JudgeVariant::standard ? "standard" : "debiased";
}

inline JudgeVariant parse_judge_variant(std::string_view name) {
  if (name == "standard") return JudgeVariant::standard;
  if (name == "debiased") return JudgeVariant::debiased;
  throw ConfigError("unknown judge variant: " + std::string(name));
}

struct JudgePrompt {
  std::string system;
  std::string user;
};

namespace judge_text {

inline constexpr std::string_view kSystem =
    "You are a helpful and precise assistant for checking the quality of the answer.";
inline constexpr std::string_view kFeedbackRequest =
    "We would like to request your feedback on the performance of two AI assistants in response "
    "to the user question displayed above.";
inline constexpr std::string_view kRating =
    "Please rate the helpfulness, relevance, accuracy, level of details of their responses. Each "
    "assistant receives an overall score on a scale of 1 to 10, where a higher score indicates "
    "better overall performance.";
inline constexpr std::string_view kOutputFormat =
    "Please first output a single line containing only two values indicating the scores for "
    "Assistant 1 and 2, respectively. The two scores are separated by a space. In the subsequent "
    "line, please provide a comprehensive explanation of your evaluation, avoiding any potential "
    "bias and ensuring that the order in which the responses were presented does not affect your "
    "judgment.";

inline constexpr std::string_view kDetailCriterion = ", level of details";
inline constexpr std::string_view kLengthDisclaimer =
    " Do not allow the length of the responses to influence your evaluation.";

}  // namespace judge_text

// Drops the level-of-detail criterion and appends the length disclaimer to
// the rating instruction.
inline std::string debias_rating_instruction(std::string_view rating) {
  std::string out(rating);
  const auto pos = out.find(judge_text::kDetailCriterion);
  if (pos == std::string::npos) {
    throw ConfigError("rating instruction has no level-of-detail criterion to remove");
  }
  out.erase(pos, judge_text::kDetailCriterion.size());
  out.append(judge_text::kLengthDisclaimer);
  return out;
}

/// Renders the judge prompt with `response_1` in the first slot.
inline JudgePrompt build_judge_prompt(std::string_view question, std::string_view response_1,
                                      std::string_view response_2, JudgeVariant variant) {
  using namespace judge_text;
  const std::string rating =
      variant == JudgeVariant::standard ? std::string(kRating) : debias_rating_instruction(kRating);
  JudgePrompt p;
  p.system = kSystem;
  p.user.append("[Question]\n")
      .append(question)
      .append("\n\n[The Start of Assistant 1's Answer]\n")
      .append(response_1)
      .append("\n[The End of Assistant 1's Answer]\n\n[The Start of Assistant 2's Answer]\n")
      .append(response_2)
      .append("\n[The End of Assistant 2's Answer]\n\n[System]\n")
      .append(kFeedbackRequest)
      .append("\n")
      .append(rating)
      .append("\n")
      .append(kOutputFormat);
  return p;
}

struct JudgeScores {
  double first = 0.0;
  double second = 0.0;
};

/// Exactly two numbers on the first non-empty line, each clamped to [1, 10].
inline JudgeScores parse_judge_scores(std::string_view reply) {
  const auto line = detail::first_nonempty_line(reply);
  const auto nums = detail::numbers_in(line);
  if (nums.size() != 2) {
    throw ParseError("judge reply must start with two scores, found " +
                     std::to_string(nums.size()) + " numbers: \"" +
                     std::string(line.substr(0, 80)) + "\"");
  }
  return {std::clamp(nums[0], 1.0, 10.0), std::clamp(nums[1], 1.0, 10.0)};
}

// ---------------------------------------------------------------------------

enum class SlotOrder { AB, BA };
enum class Result { win, tie, lose };

inline std::string_view to_string(Result r) noexcept {
  switch (r) {
    case Result::win: return "win";
    case Result::tie: return "tie";
    case Result::lose: return "lose";
  }
  return "tie";
}

inline Result parse_result(std::string_view s) {
  if (s == "win") return Result::win;
  if (s == "tie") return Result::tie;
  if (s == "lose") return Result::lose;
  throw SchemaError("unknown comparison result: " + std::string(s));
}

inline Result flipped(Result r) noexcept {
  return r == Result::win ? Result::lose : r == Result::lose ? Result::win : Result::tie;
}

/// One judging pass. Scores refer to the slots, not the systems; `order`
/// says which system sat in slot 1. An invalid verdict never parsed.
struct Verdict {
  double score_first = 0.0;
  double score_second = 0.0;
  std::string explanation;
  SlotOrder order = SlotOrder::AB;
  bool valid = false;
  std::size_t attempts = 0;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct Outcome {
  std::string instruction_id;
  Verdict verdict_ab;
  Verdict verdict_ba;
  Result result_for_A = Result::tie;
  bool invalid = false;

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

/// A wins only if preferred in both orderings, loses only if dispreferred in
/// both; every other combination, including equal scores, is a tie.
inline Result classify(const Verdict& ab, const Verdict& ba) noexcept {
  if (!ab.valid || !ba.valid) return Result::tie;
  const bool a_first_pass = ab.score_first > ab.score_second;
  const bool a_second_pass = ba.score_second > ba.score_first;
  const bool b_first_pass = ab.score_second > ab.score_first;
  const bool b_second_pass = ba.score_first > ba.score_second;
  if (a_first_pass && a_second_pass) return Result::win;
  if (b_first_pass && b_second_pass) return Result::lose;
  return Result::tie;
}

struct JudgeOptions {
  std::string model = "gpt-4";
  JudgeVariant variant = JudgeVariant::standard;
  std::size_t parse_retries = 2;
  std::size_t parallelism = 4;
  std::optional<int> max_tokens;
};

namespace detail {

inline Verdict run_pass(std::string_view question, std::string_view first,
                        std::string_view second, SlotOrder order, ChatGateway& gateway,
                        const JudgeOptions& opts) {
  const auto prompt = build_judge_prompt(question, first, second, opts.variant);
  ChatRequest req{opts.model, prompt.system, prompt.user, 0.0, opts.max_tokens, 0};
  Verdict v;
  v.order = order;
  for (unsigned attempt = 0; attempt <= opts.parse_retries; ++attempt) {
    req.retry_tag = attempt;
    const auto reply = gateway.complete(req);
    ++v.attempts;
    try {
      const auto scores = parse_judge_scores(reply);
      v.score_first = scores.first;
      v.score_second = scores.second;
      std::string_view rest;
      first_nonempty_line(reply, &rest);
      v.explanation = std::string(trim(rest));
      v.valid = true;
      return v;
    } catch (const ParseError&) {
    }
  }
  return v;
}

}  // namespace detail

/// Judges (A, B) and then (B, A). An unparseable pass marks the outcome
/// invalid and scores it as a tie.
inline Outcome judge_pair(std::string instruction_id, std::string_view instruction,
                          std::string_view resp_a, std::string_view resp_b, ChatGateway& gateway,
                          const JudgeOptions& opts = {}) {
  Outcome out;
  out.instruction_id = std::move(instruction_id);
  out.verdict_ab = detail::run_pass(instruction, resp_a, resp_b, SlotOrder::AB, gateway, opts);
  out.verdict_ba = detail::run_pass(instruction, resp_b, resp_a, SlotOrder::BA, gateway, opts);
  out.invalid = !out.verdict_ab.valid || !out.verdict_ba.valid;
  out.result_for_A = classify(out.verdict_ab, out.verdict_ba);
  return out;
}

// ---------------------------------------------------------------------------

/// (wins - losses) / total + 1, in [0, 2].
inline double winning_score(std::size_t wins, std::size_t ties, std::size_t losses) {
  const std::size_t total = wins + ties + losses;
  if (total == 0) throw ArgumentError("winning_score: no comparisons");
  return (static_cast<double>(wins) - static_cast<double>(losses)) / static_cast<double>(total) +
         1.0;
}

struct ComparisonReport {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  std::size_t testset_size = 0;
  double winning_score = 1.0;
  std::size_t invalid = 0;
  std::string judge_model;
  JudgeVariant variant = JudgeVariant::standard;
  std::vector<Outcome> per_item;
  std::vector<std::string> warnings;

  friend bool operator==(const ComparisonReport&, const ComparisonReport&) = default;
};

inline ComparisonReport summarize(std::vector<Outcome> outcomes, const JudgeOptions& opts = {}) {
  ComparisonReport r;
  r.judge_model = opts.model;
  r.variant = opts.variant;
  for (const auto& o : outcomes) {
    switch (o.result_for_A) {
      case Result::win: ++r.wins; break;
      case Result::tie: ++r.ties; break;
      case Result::lose: ++r.losses; break;
    }
    if (o.invalid) {
      ++r.invalid;
      r.warnings.push_back("instruction " + o.instruction_id +
                           ": judge reply unparseable after retries, counted as tie");
    }
  }
  r.testset_size = outcomes.size();
  r.winning_score = winning_score(r.wins, r.ties, r.losses);
  r.per_item = std::move(outcomes);
  return r;
}

struct TestItem {
  std::string id;
  std::string instruction;
};

/// Judges system A against system B on every test item. Responses are keyed
/// by test item id; a missing response is a schema error.
inline ComparisonReport compare_systems(const std::vector<TestItem>& testset,
                                        const std::map<std::string, std::string>& responses_a,
                                        const std::map<std::string, std::string>& responses_b,
                                        ChatGateway& gateway, const JudgeOptions& opts = {}) {
  if (testset.empty()) throw ArgumentError("compare_systems: empty test set");
  for (const auto& item : testset) {
    if (!responses_a.count(item.id)) throw SchemaError("system A has no response for id " + item.id);
    if (!responses_b.count(item.id)) throw SchemaError("system B has no response for id " + item.id);
  }
  std::vector<Outcome> outcomes(testset.size());
  detail::parallel_for(testset.size(), opts.parallelism, [&](std::size_t i) {
    const auto& item = testset[i];
    outcomes[i] = judge_pair(item.id, item.instruction, responses_a.at(item.id),
                             responses_b.at(item.id), gateway, opts);
  });
  return summarize(std::move(outcomes), opts);
}

/// Fraction of instruction ids whose result for A is identical across two
/// runs. Both runs must cover the same ids.
inline double agreement_rate(const std::map<std::string, Result>& a,
                             const std::map<std::string, Result>& b) {
  if (a.empty()) throw ArgumentError("agreement_rate: no outcomes");
  if (a.size() != b.size()) throw ArgumentError("agreement_rate: runs cover different ids");
  std::size_t same = 0;
  for (const auto& [id, result] : a) {
    auto it = b.find(id);
    if (it == b.end()) throw ArgumentError("agreement_rate: id " + id + " missing from second run");
    if (it->second == result) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(a.size());
}

inline std::map<std::string, Result> results_by_id(const std::vector<Outcome>& outcomes) {
  std::map<std::string, Result> out;
  for (const auto& o : outcomes) {
    if (!out.emplace(o.instruction_id, o.result_for_A).second) {
      throw ArgumentError("duplicate instruction id " + o.instruction_id);
    }
  }
  return out;
}

inline double agreement_rate(const std::vector<Outcome>& a, const std::vector<Outcome>& b) {
  return agreement_rate(results_by_id(a), results_by_id(b));
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::string id_string(const nlohmann::json& id) {
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return id.dump();
  throw SchemaError("id must be a string or integer");
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  const auto text = read_file(path);
  for (const auto& [line_no, line] : jsonl_lines(text)) {
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline nlohmann::json to_json(const Verdict& v) {
  nlohmann::json j = {{"order", v.order == SlotOrder::AB ? "AB" : "BA"},
                      {"valid", v.valid},
                      {"attempts", v.attempts}};
  if (v.valid) {
    j["score_first"] = v.score_first;
    j["score_second"] = v.score_second;
    j["explanation"] = v.explanation;
  }
  return j;
}

}  // namespace detail

// JSONL {id, instruction}
inline std::vector<TestItem> load_testset(const std::filesystem::path& path) {
  std::vector<TestItem> out;
  std::set<std::string> seen;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    TestItem item{detail::id_string(j.at("id")), j.at("instruction").get<std::string>()};
    if (!seen.insert(item.id).second) throw SchemaError("duplicate test id " + item.id);
    out.push_back(std::move(item));
  });
  return out;
}

// JSONL {id, response}
inline std::map<std::string, std::string> load_responses(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j) {
    auto id = detail::id_string(j.at("id"));
    if (!out.emplace(id, j.at("response").get<std::string>()).second) {
      throw SchemaError("duplicate response id " + id);
    }
  });
  return out;
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& o : r.per_item) {
    items.push_back({{"id", o.instruction_id},
                     {"result", std::string(to_string(o.result_for_A))},
                     {"invalid", o.invalid},
                     {"ab", detail::to_json(o.verdict_ab)},
                     {"ba", detail::to_json(o.verdict_ba)}});
  }
  return {{"wins", r.wins},
          {"ties", r.ties},
          {"losses", r.losses},
          {"testset_size", r.testset_size},
          {"winning_score", r.winning_score},
          {"invalid", r.invalid},
          {"judge_model", r.judge_model},
          {"variant", std::string(to_string(r.variant))},
          {"warnings", r.warnings},
          {"per_item", items}};
}

// Per-item results of a previously written report, for agreement checks.
inline std::map<std::string, Result> report_results(const nlohmann::json& report) {
  std::map<std::string, Result> out;
  try {
    for (const auto& item : report.at("per_item")) {
      out.emplace(detail::id_string(item.at("id")), parse_result(item.at("result").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("comparison report: ") + e.what());
  }
  return out;
}

}  // namespace sftsel
