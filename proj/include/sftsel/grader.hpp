#pragma once

// Single-record quality grading with an LLM auto-grader on a 0-5 scale.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sftsel/corpus.hpp"
#include "sftsel/detail/parallel.hpp"
#include "sftsel/gateway.hpp"
#include "sftsel/hash.hpp"
#include "sftsel/selection.hpp"

namespace sftsel {

enum class GraderVariant { with_input, without_input };

struct GraderPromptPair {
  std::string system;
  std::string user;
  GraderVariant variant = GraderVariant::without_input;
};

namespace grader_text {

inline constexpr std::string_view kSystemLeadNoInput =
    "We would like to request your feedback on the performance of AI assistant in response to "
    "the instruction displayed following.";
inline constexpr std::string_view kSystemLeadWithInput =
    "We would like to request your feedback on the performance of AI assistant in response to "
    "the instruction and the given input displayed following.";
inline constexpr std::string_view kUserNoInput =
    "Please rate according to the accuracy of the response to the instruction. Each assistant "
    "receives a score on a scale of 0 to 5, where a higher score indicates higher level of the "
    "accuracy. Please first output a single line containing value indicating the scores. In the "
    "subsequent line, please provide a comprehensive explanation of your evaluation, avoiding any "
    "potential bias.";
inline constexpr std::string_view kUserWithInput =
    "Please rate according to the accuracy of the response to the instruction and the input. Each "
    "assistant receives a score on a scale of 0 to 5, where a higher score indicates higher level "
    "of the accuracy. Please first output a single line containing value indicating the scores. "
    "In the subsequent line, please provide a comprehensive explanation of your evaluation, "
    "avoiding any potential bias.";

}  // namespace grader_text

inline GraderPromptPair build_quality_prompt(const Demonstration& demo) {
  using namespace grader_text;
  GraderPromptPair out;
  if (demo.has_input()) {
    out.variant = GraderVariant::with_input;
    out.system.append(kSystemLeadWithInput)
        .append("\n\nInstruction: ")
        .append(demo.instruction)
        .append("\nInput: ")
        .append(*demo.input)
        .append("\nResponse: ")
        .append(demo.response);
    out.user = kUserWithInput;
  } else {
    out.variant = GraderVariant::without_input;
    out.system.append(kSystemLeadNoInput)
        .append("\n\nInstruction: ")
        .append(demo.instruction)
        .append("\nResponse: ")
        .append(demo.response);
    out.user = kUserNoInput;
  }
  return out;
}

// Hash of the unsubstituted templates; changes whenever any prompt text does.
inline std::string grader_prompt_fingerprint() {
  using namespace grader_text;
  std::string all;
  for (auto part : {kSystemLeadNoInput, kSystemLeadWithInput, kUserNoInput, kUserWithInput}) {
    all.append(part).push_back('\x1f');
  }
  return sha256_hex(all);
}

// ---------------------------------------------------------------------------

struct ParsedScore {
  double value = 0.0;
  bool rounded = false;
  bool clamped = false;
};

namespace detail {

// Splits off the first non-empty line (trimmed); `rest` is everything after it.
inline std::string_view first_nonempty_line(std::string_view text,
                                            std::string_view* rest = nullptr) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(pos, end - pos));
    if (!line.empty()) {
      if (rest) *rest = end < text.size() ? text.substr(end + 1) : std::string_view{};
      return line;
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  if (rest) *rest = {};
  return {};
}

inline const std::regex& number_pattern() {
  static const std::regex re(R"([-+]?(?:\d+(?:\.\d*)?|\.\d+))");
  return re;
}

inline std::vector<double> numbers_in(std::string_view line) {
  std::vector<double> out;
  const std::string s(line);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), number_pattern());
       it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod(it->str()));
  }
  return out;
}

}  // namespace detail

/// First number on the first non-empty line, snapped to the 0.5 grid and
/// clamped to [0, 5]. Throws ParseError when that line holds no number.
inline ParsedScore parse_quality_score(std::string_view reply) {
  const auto line = detail::first_nonempty_line(reply);
  const auto nums = detail::numbers_in(line);
  if (nums.empty()) {
    throw ParseError("grader reply has no score on its first line: \"" +
                     std::string(line.substr(0, 80)) + "\"");
  }
  ParsedScore out;
  const double raw = nums.front();
  double v = std::round(raw * 2.0) / 2.0;
  out.rounded = v != raw;
  if (v < 0.0 || v > 5.0) {
    v = std::clamp(v, 0.0, 5.0);
    out.clamped = true;
  }
  out.value = v + 0.0;  // normalise -0.0
  return out;
}

// ---------------------------------------------------------------------------

struct GradeOptions {
  std::string model = "gpt-3.5-turbo-0301";
  std::size_t parse_retries = 2;  // re-asks after an unparseable reply
  std::size_t parallelism = 4;
  std::optional<int> max_tokens;
};

struct GradeResult {
  QualityScoreTable table;
  std::size_t null_count = 0;
  std::size_t rounded_count = 0;
  std::size_t clamped_count = 0;
  std::size_t requests = 0;

  double null_fraction() const {
    return table.entries.empty() ? 0.0
                                 : static_cast<double>(null_count) /
                                       static_cast<double>(table.entries.size());
  }

  nlohmann::json summary() const {
    return {{"records", table.entries.size()},
            {"scored", table.entries.size() - null_count},
            {"null", null_count},
            {"rounded", rounded_count},
            {"clamped", clamped_count},
            {"requests", requests},
            {"grader_model", table.grader_model},
            {"prompt_fingerprint", table.prompt_fingerprint}};
  }
};

/// Scores every record. A reply with no parseable score is re-asked up to
/// `parse_retries` times (each with a distinct retry tag, so cached replays
/// follow the same path); a record still unparsed becomes a null entry.
/// Transport failures propagate.
inline GradeResult grade_dataset(const Dataset& ds, ChatGateway& gateway,
                                 const GradeOptions& opts = {}) {
  struct Slot {
    QualityEntry entry;
    std::size_t requests = 0;
  };
  std::vector<Slot> slots(ds.size());

  detail::parallel_for(ds.size(), opts.parallelism, [&](std::size_t i) {
    const auto prompt = build_quality_prompt(ds.records[i]);
    ChatRequest req{opts.model, prompt.system, prompt.user, 0.0, opts.max_tokens, 0};
    auto& slot = slots[i];
    for (unsigned attempt = 0; attempt <= opts.parse_retries; ++attempt) {
      req.retry_tag = attempt;
      const auto reply = gateway.complete(req);
      ++slot.requests;
      slot.entry.raw_reply_hash = sha256_hex(reply);
      try {
        const auto parsed = parse_quality_score(reply);
        slot.entry.score = parsed.value;
        slot.entry.rounded = parsed.rounded;
        slot.entry.clamped = parsed.clamped;
        return;
      } catch (const ParseError&) {
      }
    }
  });

  GradeResult out;
  out.table.dataset_name = ds.name;
  out.table.grader_model = opts.model;
  out.table.prompt_fingerprint = grader_prompt_fingerprint();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& slot = slots[i];
    out.requests += slot.requests;
    if (!slot.entry.score) ++out.null_count;
    if (slot.entry.rounded) ++out.rounded_count;
    if (slot.entry.clamped) ++out.clamped_count;
    out.table.entries.emplace(ds.records[i].id, slot.entry);
  }
  return out;
}

/// Raised when more than the tolerated fraction of records stayed unparsed.
class GradingFailure : public TransportError {
 public:
  GradingFailure(const std::string& what, nlohmann::json summary)
      : TransportError(what), summary_(std::move(summary)) {}
  const nlohmann::json& summary() const noexcept { return summary_; }

 private:
  nlohmann::json summary_;
};

inline void check_failure_rate(const GradeResult& result, double max_null_fraction = 0.01) {
  if (result.null_fraction() > max_null_fraction) {
    throw GradingFailure(std::to_string(result.null_count) + " of " +
                             std::to_string(result.table.entries.size()) +
                             " records could not be graded",
                         result.summary());
  }
}

// ---------------------------------------------------------------------------

/// Counts per 0.5 bin over [0, 5]; every bin is present. Null scores are
/// counted separately.
struct ScoreHistogram {
  std::map<double, std::size_t> bins;
  std::size_t null_count = 0;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& [_, c] : bins) t += c;
    return t;
  }
};

inline ScoreHistogram score_histogram(const QualityScoreTable& table) {
  ScoreHistogram h;
  for (int i = 0; i <= 10; ++i) h.bins[i * 0.5] = 0;
  for (const auto& [_, entry] : table.entries) {
    if (!entry.score) {
      ++h.null_count;
      continue;
    }
    if (!is_valid_quality_score(*entry.score)) {
      throw SchemaError("histogram: off-grid score " + std::to_string(*entry.score));
    }
    ++h.bins[*entry.score];
  }
  return h;
}

inline nlohmann::json to_json(const ScoreHistogram& h) {
  nlohmann::json bins = nlohmann::json::object();
  for (const auto& [score, count] : h.bins) {
    char key[8];
    std::snprintf(key, sizeof key, "%.1f", score);
    bins[key] = count;
  }
  return {{"bins", bins}, {"null", h.null_count}, {"total", h.total()}};
}

}  // namespace sftsel
