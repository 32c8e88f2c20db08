#pragma once

// Dataset ingestion, response-length counting and training prompt rendering.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "sftsel/detail/text.hpp"
#include "sftsel/error.hpp"
#include "sftsel/utf8.hpp"

namespace sftsel {

using RecordId = std::size_t;

/// One instruction-following training record.
struct Demonstration {
  RecordId id = 0;
  std::string instruction;
  std::optional<std::string> input;  // Alpaca "input" / Dolly "context"
  std::string response;

  bool has_input() const noexcept {
    return input.has_value() && !detail::trim(*input).empty();
  }

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

enum class SourceFormat { alpaca_json, dolly_jsonl, wizardlm_json, generic_jsonl };

inline std::string_view to_string(SourceFormat f) noexcept {
  switch (f) {
    case SourceFormat::alpaca_json: return "alpaca_json";
    case SourceFormat::dolly_jsonl: return "dolly_jsonl";
    case SourceFormat::wizardlm_json: return "wizardlm_json";
    case SourceFormat::generic_jsonl: return "generic_jsonl";
  }
  return "unknown";
}

inline SourceFormat parse_source_format(std::string_view name) {
  for (auto f : {SourceFormat::alpaca_json, SourceFormat::dolly_jsonl,
                 SourceFormat::wizardlm_json, SourceFormat::generic_jsonl}) {
    if (name == to_string(f)) return f;
  }
  throw ConfigError("unknown dataset format: " + std::string(name));
}

/// An immutable, ordered collection of demonstrations. Record ids equal their
/// position in the source file.
struct Dataset {
  std::string name;
  SourceFormat source_format = SourceFormat::generic_jsonl;
  std::vector<Demonstration> records;

  std::size_t size() const noexcept { return records.size(); }
  const Demonstration& operator[](RecordId id) const { return records.at(id); }
};

namespace detail {

struct FieldMap {
  const char* instruction;
  const char* input;  // nullptr when the format has no input field
  const char* response;
};

constexpr FieldMap field_map(SourceFormat f) noexcept {
  switch (f) {
    case SourceFormat::alpaca_json: return {"instruction", "input", "output"};
    case SourceFormat::dolly_jsonl: return {"instruction", "context", "response"};
    case SourceFormat::wizardlm_json: return {"instruction", nullptr, "output"};
    case SourceFormat::generic_jsonl: return {"instruction", "input", "response"};
  }
  return {"instruction", "input", "response"};
}

inline std::string record_prefix(std::size_t index) {
  return "record " + std::to_string(index) + ": ";
}

inline std::string required_string(const nlohmann::json& obj, const char* key,
                                   std::size_t index) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw SchemaError(record_prefix(index) + "missing field \"" + key + "\"");
  }
  if (!it->is_string()) {
    throw SchemaError(record_prefix(index) + "field \"" + key + "\" must be a string");
  }
  return it->get<std::string>();
}

inline Demonstration to_demonstration(const nlohmann::json& obj, SourceFormat format,
                                      std::size_t index) {
  if (!obj.is_object()) throw SchemaError(record_prefix(index) + "expected a JSON object");
  const auto fields = field_map(format);
  Demonstration demo;
  demo.id = index;
  demo.instruction = required_string(obj, fields.instruction, index);
  if (trim(demo.instruction).empty()) {
    throw SchemaError(record_prefix(index) + "field \"instruction\" is empty");
  }
  if (fields.input != nullptr) {
    auto it = obj.find(fields.input);
    if (it != obj.end() && !it->is_null()) {
      if (!it->is_string()) {
        throw SchemaError(record_prefix(index) + "field \"" + fields.input +
                          "\" must be a string or null");
      }
      demo.input = it->get<std::string>();
    }
  }
  demo.response = required_string(obj, fields.response, index);
  return demo;
}

}  // namespace detail

/// Parses dataset text already in memory. `name` labels the dataset for
/// provenance only.
inline Dataset parse_dataset(std::string_view text, SourceFormat format, std::string name) {
  if (auto bad = utf8::first_invalid(text)) {
    throw ParseError("invalid UTF-8 at byte offset " + std::to_string(*bad));
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.source_format = format;

  const bool is_array = format == SourceFormat::alpaca_json ||
                        format == SourceFormat::wizardlm_json;
  if (is_array) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON array (") + std::string(to_string(format)) +
                       "): " + e.what());
    }
    if (!doc.is_array()) throw SchemaError("expected a top-level JSON array of records");
    ds.records.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
      ds.records.push_back(detail::to_demonstration(doc[i], format, i));
    }
  } else {
    for (const auto& [line_no, line] : detail::jsonl_lines(text)) {
      const std::size_t index = ds.records.size();
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(detail::record_prefix(index) + "malformed JSON on line " +
                         std::to_string(line_no) + ": " + e.what());
      }
      ds.records.push_back(detail::to_demonstration(obj, format, index));
    }
  }
  if (ds.records.empty()) throw SchemaError("dataset contains no records");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, SourceFormat format) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("dataset file not found: " + path.string());
  }
  return parse_dataset(detail::read_file(path), format, path.stem().string());
}

// {"id", "instruction", "input" (nullable), "response"}
inline nlohmann::json to_generic_json(const Demonstration& demo) {
  nlohmann::json obj;
  obj["id"] = demo.id;
  obj["instruction"] = demo.instruction;
  obj["input"] = demo.input ? nlohmann::json(*demo.input) : nlohmann::json(nullptr);
  obj["response"] = demo.response;
  return obj;
}

inline std::string to_generic_jsonl(std::span<const Demonstration> records) {
  std::string out;
  for (const auto& demo : records) {
    out += to_generic_json(demo).dump();
    out += '\n';
  }
  return out;
}

inline std::string to_generic_jsonl(const Dataset& ds) { return to_generic_jsonl(ds.records); }

// ---------------------------------------------------------------------------
// Token counting

/// Token vocabulary for greedy longest-match subword counting. Loaded from a
/// plain text file with one token per line, or from a JSON object whose keys
/// are tokens (the usual `vocab.json` layout).
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens) {
    for (auto& t : tokens) {
      if (t.empty()) continue;
      max_len_ = std::max(max_len_, t.size());
      tokens_.insert(std::move(t));
    }
    if (tokens_.empty()) throw ConfigError("vocabulary is empty");
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::string text;
    try {
      text = detail::read_file(path);
    } catch (const ConfigError&) {
      throw ConfigError("cannot load vocabulary: " + path.string());
    }
    std::vector<std::string> tokens;
    if (path.extension() == ".json") {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot load vocabulary " + path.string() + ": " + e.what());
      }
      if (doc.is_object()) {
        for (auto it = doc.begin(); it != doc.end(); ++it) tokens.push_back(it.key());
      } else if (doc.is_array()) {
        for (const auto& t : doc) {
          if (t.is_string()) tokens.push_back(t.get<std::string>());
        }
      } else {
        throw ConfigError("vocabulary JSON must be an object or array: " + path.string());
      }
    } else {
      for (const auto& [_, line] : detail::jsonl_lines(text)) tokens.emplace_back(line);
    }
    return Vocabulary(std::move(tokens));
  }

  bool contains(std::string_view token) const {
    return tokens_.find(std::string(token)) != tokens_.end();
  }
  std::size_t max_token_length() const noexcept { return max_len_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  // Whitespace-separated words are segmented left to right by the longest
  // vocabulary entry matching at the cursor; a position with no match
  // consumes one code point as one token.
  std::size_t count(std::string_view text) const {
    std::size_t total = 0;
    for (auto word : detail::split_whitespace(text)) {
      std::size_t pos = 0;
      while (pos < word.size()) {
        std::size_t best = 0;
        const std::size_t limit = std::min(max_len_, word.size() - pos);
        for (std::size_t len = limit; len > 0; --len) {
          if (contains(word.substr(pos, len))) {
            best = len;
            break;
          }
        }
        if (best == 0) best = utf8::code_point_length(word.substr(pos));
        pos += best;
        ++total;
      }
    }
    return total;
  }

 private:
  std::unordered_set<std::string> tokens_;
  std::size_t max_len_ = 0;
};

enum class CountMode { bytes, whitespace_words, subword };

inline std::string_view to_string(CountMode m) noexcept {
  switch (m) {
    case CountMode::bytes: return "bytes";
    case CountMode::whitespace_words: return "whitespace_words";
    case CountMode::subword: return "subword";
  }
  return "unknown";
}

inline CountMode parse_count_mode(std::string_view name) {
  for (auto m : {CountMode::bytes, CountMode::whitespace_words, CountMode::subword}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown counter mode: " + std::string(name));
}

/// Pure text-length function. Copies share the loaded vocabulary.
class TokenCounter {
 public:
  static TokenCounter bytes() { return TokenCounter(CountMode::bytes); }
  static TokenCounter whitespace_words() { return TokenCounter(CountMode::whitespace_words); }

  static TokenCounter subword(const std::filesystem::path& vocab_path) {
    TokenCounter c(CountMode::subword);
    c.vocab_source_ = vocab_path;
    c.vocab_ = std::make_shared<const Vocabulary>(Vocabulary::load(vocab_path));
    return c;
  }

  static TokenCounter make(CountMode mode, const std::optional<std::filesystem::path>& vocab) {
    switch (mode) {
      case CountMode::bytes: return bytes();
      case CountMode::whitespace_words: return whitespace_words();
      case CountMode::subword:
        if (!vocab) throw ConfigError("subword counter requires a vocabulary file");
        return subword(*vocab);
    }
    throw ConfigError("unknown counter mode");
  }

  // Subword when a vocabulary is supplied, whitespace words otherwise.
  static TokenCounter make_default(const std::optional<std::filesystem::path>& vocab) {
    return vocab ? subword(*vocab) : whitespace_words();
  }

  CountMode mode() const noexcept { return mode_; }
  const std::optional<std::filesystem::path>& vocab_source() const noexcept {
    return vocab_source_;
  }

  std::size_t count(std::string_view text) const {
    switch (mode_) {
      case CountMode::bytes: return text.size();
      case CountMode::whitespace_words: return detail::split_whitespace(text).size();
      case CountMode::subword: return vocab_->count(text);
    }
    return 0;
  }

  nlohmann::json describe() const {
    nlohmann::json j;
    j["mode"] = std::string(to_string(mode_));
    if (vocab_source_) j["vocab"] = vocab_source_->string();
    return j;
  }

 private:
  explicit TokenCounter(CountMode mode) : mode_(mode) {}

  CountMode mode_;
  std::optional<std::filesystem::path> vocab_source_;
  std::shared_ptr<const Vocabulary> vocab_;
};

// Length of the response field only; instruction and input never count.
inline std::size_t count_response_tokens(const Demonstration& demo, const TokenCounter& counter) {
  return counter.count(demo.response);
}

inline std::vector<std::size_t> response_lengths(const Dataset& ds, const TokenCounter& counter) {
  std::vector<std::size_t> out;
  out.reserve(ds.size());
  for (const auto& demo : ds.records) out.push_back(count_response_tokens(demo, counter));
  return out;
}

// ---------------------------------------------------------------------------
// Training prompts

enum class TrainTemplate { alpaca_dolly, wizardlm };

inline std::string_view to_string(TrainTemplate t) noexcept {
  return t == TrainTemplate::alpaca_dolly ? "alpaca_dolly" : "wizardlm";
}

inline TrainTemplate parse_train_template(std::string_view name) {
  if (name == "alpaca_dolly") return TrainTemplate::alpaca_dolly;
  if (name == "wizardlm") return TrainTemplate::wizardlm;
  throw ConfigError("unknown training template: " + std::string(name));
}

inline constexpr std::string_view kAlpacaPreambleWithInput =
    "Below is an instruction that describes a task, paired with an input that provides "
    "further context. Write a response that appropriately completes the request.";
inline constexpr std::string_view kAlpacaPreambleNoInput =
    "Below is an instruction that describes a task. Write a response that appropriately "
    "completes the request.";

inline std::string render_train_prompt(const Demonstration& demo, TrainTemplate tmpl) {
  std::string out;
  if (tmpl == TrainTemplate::wizardlm) {
    out.append(demo.instruction).append("\n\n### Response:");
    return out;
  }
  if (demo.has_input()) {
    out.append(kAlpacaPreambleWithInput)
        .append("\n\n### Instruction:\n")
        .append(demo.instruction)
        .append("\n\n### Input:\n")
        .append(*demo.input)
        .append("\n\n### Response:");
  } else {
    out.append(kAlpacaPreambleNoInput)
        .append("\n\n### Instruction:\n")
        .append(demo.instruction)
        .append("\n\n### Response:");
  }
  return out;
}

}  // namespace sftsel
