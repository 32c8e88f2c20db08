#pragma once

// Instruction-distribution and length diagnostics.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "sftsel/corpus.hpp"
#include "sftsel/detail/text.hpp"
#include "sftsel/error.hpp"

namespace sftsel {

struct VerbNoun {
  std::string verb;
  std::string noun;

  friend bool operator==(const VerbNoun&, const VerbNoun&) = default;
};

namespace lexicon {

// Imperative verbs that open instruction-style prompts.
inline const std::unordered_set<std::string_view>& verbs() {
  static const std::unordered_set<std::string_view> set = {
      "add",       "analyze",   "answer",    "arrange",    "assess",     "brainstorm",
      "build",     "calculate", "categorize", "change",    "check",      "choose",
      "classify",  "combine",   "come",      "compare",    "compile",    "complete",
      "compose",   "compute",   "construct", "convert",    "correct",    "count",
      "craft",     "create",    "define",    "delete",     "describe",   "design",
      "detect",    "determine", "develop",   "devise",     "discuss",    "draft",
      "draw",      "edit",      "estimate",  "evaluate",   "explain",    "explore",
      "extract",   "fill",      "find",      "fix",        "format",     "formulate",
      "generate",  "give",      "guess",     "help",       "identify",   "illustrate",
      "imagine",   "implement", "improve",   "include",    "indicate",   "insert",
      "invent",    "label",     "list",      "make",       "match",      "modify",
      "name",      "offer",     "organize",  "outline",    "paraphrase", "pick",
      "plan",      "predict",   "prepare",   "present",    "produce",    "propose",
      "provide",   "rank",      "rate",      "rearrange",  "recommend",  "reformulate",
      "remove",    "rephrase",  "replace",   "research",   "restate",    "reverse",
      "review",    "revise",    "rewrite",   "select",     "show",       "simplify",
      "solve",     "sort",      "specify",   "state",      "suggest",    "summarize",
      "take",      "teach",     "tell",      "transform",  "translate",  "use",
      "verify",    "write",
  };
  return set;
}

// Object nouns common in instruction datasets, singular form.
inline const std::unordered_set<std::string_view>& nouns() {
  static const std::unordered_set<std::string_view> set = {
      "abstract",  "acronym",    "ad",          "advertisement", "advice",    "algorithm",
      "analogy",   "analysis",   "answer",      "antonym",       "app",       "application",
      "argument",  "article",    "benefit",     "blog",          "book",      "business",
      "campaign",  "caption",    "category",    "character",     "chart",     "code",
      "company",   "comparison", "concept",     "conclusion",    "conversation", "definition",
      "description", "design",   "dialogue",    "difference",    "email",     "equation",
      "essay",     "example",    "experiment",  "explanation",   "fact",      "feature",
      "formula",   "function",   "game",        "guide",         "haiku",     "headline",
      "hypothesis", "idea",      "instruction", "introduction",  "item",      "joke",
      "letter",    "limerick",   "list",        "logo",          "menu",      "message",
      "metaphor",  "method",     "model",       "name",          "narrative", "number",
      "outline",   "paragraph",  "passage",     "phrase",        "plan",      "poem",
      "post",      "problem",    "process",     "product",       "program",   "proposal",
      "query",     "question",   "quiz",        "quote",         "reason",    "recipe",
      "recommendation", "report", "response",   "review",        "riddle",    "rule",
      "scenario",  "scene",      "script",      "sentence",      "sequence",  "simile",
      "slogan",    "solution",   "song",        "speech",        "statement", "step",
      "story",     "strategy",   "summary",     "survey",        "synonym",   "table",
      "tagline",   "text",       "theory",      "thing",         "tip",       "title",
      "topic",     "tweet",      "type",        "use",           "way",       "website",
      "word",
  };
  return set;
}

// Maps a plural to its singular when the singular is a known noun.
inline std::optional<std::string> as_noun(const std::string& word) {
  const auto& set = nouns();
  if (set.count(word)) return word;
  auto ends_with = [&](std::string_view suffix) {
    return word.size() > suffix.size() &&
           word.compare(word.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("ies")) {
    auto s = word.substr(0, word.size() - 3) + "y";
    if (set.count(s)) return s;
  }
  if (ends_with("es")) {
    auto s = word.substr(0, word.size() - 2);
    if (set.count(s)) return s;
  }
  if (ends_with("s")) {
    auto s = word.substr(0, word.size() - 1);
    if (set.count(s)) return s;
  }
  return std::nullopt;
}

}  // namespace lexicon

namespace detail {

// Lowercased runs of ASCII letters and digits (apostrophes kept inside words).
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.back() == '\'') cur.pop_back();
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (ch == '\'' && !cur.empty()) {
      cur.push_back(ch);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace detail

inline constexpr std::size_t kNounWindow = 6;

/// Lexicon heuristic: the first word must be a known imperative verb; the
/// noun is the first known noun among the next six words.
inline std::optional<VerbNoun> extract_verb_noun_heuristic(std::string_view instruction) {
  const auto words = detail::word_tokens(instruction);
  if (words.empty() || !lexicon::verbs().count(words.front())) return std::nullopt;
  const std::size_t end = std::min(words.size(), 1 + kNounWindow);
  for (std::size_t i = 1; i < end; ++i) {
    if (auto noun = lexicon::as_noun(words[i])) return VerbNoun{words.front(), *noun};
  }
  return std::nullopt;
}

enum class ParseSource { external_parse, heuristic };

inline ParseSource parse_parse_source(std::string_view name) {
  if (name == "heuristic") return ParseSource::heuristic;
  if (name == "external_parse") return ParseSource::external_parse;
  throw ConfigError("unknown verb-noun source: " + std::string(name));
}

/// Verb-noun pairs produced by an external parser, keyed by record id.
/// Sidecar JSONL: {"id", "verb", "noun"}; a null verb or noun marks a record
/// the parser could not handle.
class ExternalParses {
 public:
  ExternalParses() = default;

  static ExternalParses load(const std::filesystem::path& path) {
    ExternalParses out;
    const auto text = detail::read_file(path);
    for (const auto& [line_no, line] : detail::jsonl_lines(text)) {
      try {
        const auto j = nlohmann::json::parse(line);
        const auto id = j.at("id").get<std::size_t>();
        std::optional<VerbNoun> vn;
        const auto& verb = j.at("verb");
        const auto& noun = j.at("noun");
        if (verb.is_string() && noun.is_string()) {
          vn = VerbNoun{detail::to_lower_ascii(verb.get<std::string>()),
                        detail::to_lower_ascii(noun.get<std::string>())};
        }
        out.parses_[id] = std::move(vn);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return out;
  }

  void set(std::size_t id, std::optional<VerbNoun> vn) { parses_[id] = std::move(vn); }

  // nullopt outer: id missing from sidecar.
  std::optional<std::optional<VerbNoun>> find(std::size_t id) const {
    auto it = parses_.find(id);
    if (it == parses_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<std::size_t, std::optional<VerbNoun>> parses_;
};

class VerbNounExtractor {
 public:
  static VerbNounExtractor heuristic() { return VerbNounExtractor(ParseSource::heuristic, {}); }
  static VerbNounExtractor external(ExternalParses parses) {
    return VerbNounExtractor(ParseSource::external_parse, std::move(parses));
  }

  ParseSource source() const noexcept { return source_; }

  // Missing sidecar entries yield nullopt and a warning.
  std::optional<VerbNoun> extract(std::size_t id, std::string_view instruction,
                                  std::vector<std::string>* warnings = nullptr) const {
    if (source_ == ParseSource::heuristic) return extract_verb_noun_heuristic(instruction);
    auto found = parses_.find(id);
    if (!found) {
      if (warnings) warnings->push_back("no external parse for record " + std::to_string(id));
      return std::nullopt;
    }
    return *found;
  }

 private:
  VerbNounExtractor(ParseSource s, ExternalParses p) : source_(s), parses_(std::move(p)) {}

  ParseSource source_;
  ExternalParses parses_;
};

struct VerbEntry {
  std::string verb;
  std::size_t total = 0;  // all instructions with this verb, any noun
  std::vector<std::pair<std::string, std::size_t>> nouns;  // top nouns, count desc

  friend bool operator==(const VerbEntry&, const VerbEntry&) = default;
};

/// Verb-noun tally truncated to the top verbs and their top nouns.
/// `verb_counts` keeps the untruncated per-verb totals so coverage can be
/// computed for any verb set.
struct VerbNounTable {
  std::vector<VerbEntry> entries;
  std::map<std::string, std::size_t> verb_counts;
  std::size_t parsed_total = 0;
  std::size_t unparsed_count = 0;
  std::vector<std::string> warnings;

  std::size_t input_size() const noexcept { return parsed_total + unparsed_count; }

  // Sum of the counts actually shown in `entries`.
  std::size_t displayed_total() const {
    std::size_t t = 0;
    for (const auto& e : entries) {
      for (const auto& [_, c] : e.nouns) t += c;
    }
    return t;
  }

  friend bool operator==(const VerbNounTable&, const VerbNounTable&) = default;
};

/// Ranks verbs by count (ties lexicographic) and, within each, nouns the same way.
inline VerbNounTable verb_noun_distribution(std::span<const std::string> instructions,
                                            const VerbNounExtractor& extractor,
                                            std::size_t top_verbs = 20, std::size_t top_nouns = 4) {
  VerbNounTable table;
  std::map<std::string, std::map<std::string, std::size_t>> tally;
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    if (auto vn = extractor.extract(i, instructions[i], &table.warnings)) {
      ++tally[vn->verb][vn->noun];
      ++table.verb_counts[vn->verb];
      ++table.parsed_total;
    } else {
      ++table.unparsed_count;
    }
  }

  auto by_count = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::vector<std::pair<std::string, std::size_t>> verbs(table.verb_counts.begin(),
                                                         table.verb_counts.end());
  std::sort(verbs.begin(), verbs.end(), by_count);
  if (verbs.size() > top_verbs) verbs.resize(top_verbs);

  for (const auto& [verb, total] : verbs) {
    VerbEntry entry{verb, total, {}};
    const auto& nouns = tally[verb];
    entry.nouns.assign(nouns.begin(), nouns.end());
    std::sort(entry.nouns.begin(), entry.nouns.end(), by_count);
    if (entry.nouns.size() > top_nouns) entry.nouns.resize(top_nouns);
    table.entries.push_back(std::move(entry));
  }
  return table;
}

inline VerbNounTable verb_noun_distribution(const Dataset& ds, const VerbNounExtractor& extractor,
                                            std::size_t top_verbs = 20, std::size_t top_nouns = 4) {
  std::vector<std::string> instructions;
  instructions.reserve(ds.size());
  for (const auto& d : ds.records) instructions.push_back(d.instruction);
  return verb_noun_distribution(instructions, extractor, top_verbs, top_nouns);
}

// Fraction of all instructions whose verb is in `verbs`.
inline double coverage(const VerbNounTable& table, const std::set<std::string>& verbs) {
  if (table.input_size() == 0) return 0.0;
  std::size_t hit = 0;
  for (const auto& v : verbs) {
    if (auto it = table.verb_counts.find(v); it != table.verb_counts.end()) hit += it->second;
  }
  return static_cast<double>(hit) / static_cast<double>(table.input_size());
}

inline std::set<std::string> top_verb_set(const VerbNounTable& table) {
  std::set<std::string> out;
  for (const auto& e : table.entries) out.insert(e.verb);
  return out;
}

// {"name": "root", "children": [{"name": verb, "children": [{"name": noun, "value": n}]}]}
inline nlohmann::json emit_sunburst(const VerbNounTable& table) {
  nlohmann::json children = nlohmann::json::array();
  for (const auto& e : table.entries) {
    nlohmann::json leaves = nlohmann::json::array();
    for (const auto& [noun, count] : e.nouns) leaves.push_back({{"name", noun}, {"value", count}});
    children.push_back({{"name", e.verb}, {"children", leaves}});
  }
  return {{"name", "root"}, {"children", children}};
}

inline nlohmann::json to_json(const VerbNounTable& table) {
  nlohmann::json verbs = nlohmann::json::array();
  for (const auto& e : table.entries) {
    nlohmann::json nouns = nlohmann::json::object();
    for (const auto& [noun, count] : e.nouns) nouns[noun] = count;
    verbs.push_back({{"verb", e.verb}, {"total", e.total}, {"nouns", nouns}});
  }
  return {{"top_verbs", verbs},
          {"parsed", table.parsed_total},
          {"unparsed", table.unparsed_count},
          {"input_size", table.input_size()},
          {"top_verb_coverage", coverage(table, top_verb_set(table))},
          {"warnings", table.warnings}};
}

// ---------------------------------------------------------------------------

/// Exact order statistics. The median averages the two middle values for an
/// even count; percentile p is the nearest-rank value sorted[ceil(p/100 * n) - 1].
struct LengthStats {
  std::size_t count = 0;
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
  double median = 0.0;
  std::map<int, std::size_t> percentiles;
};

inline constexpr int kReportedPercentiles[] = {5, 10, 25, 50, 75, 90, 95, 99};

inline LengthStats length_stats(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw ArgumentError("length_stats: no lengths");
  std::vector<std::size_t> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  LengthStats s;
  s.count = n;
  s.min = sorted.front();
  s.max = sorted.back();
  long double sum = 0;
  for (auto v : sorted) sum += v;
  s.mean = static_cast<double>(sum / static_cast<long double>(n));
  s.median = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                        : (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
  for (int p : kReportedPercentiles) {
    // integer ceil(p * n / 100), at least 1
    const std::size_t rank = std::max<std::size_t>(1, (static_cast<std::size_t>(p) * n + 99) / 100);
    s.percentiles[p] = sorted[rank - 1];
  }
  return s;
}

inline LengthStats length_stats(const Dataset& ds, const TokenCounter& counter) {
  const auto lengths = response_lengths(ds, counter);
  return length_stats(lengths);
}

inline nlohmann::json to_json(const LengthStats& s) {
  nlohmann::json pct = nlohmann::json::object();
  for (const auto& [p, v] : s.percentiles) pct["p" + std::to_string(p)] = v;
  return {{"count", s.count}, {"min", s.min},       {"max", s.max},
          {"mean", s.mean},   {"median", s.median}, {"percentiles", pct}};
}

}  // namespace sftsel
