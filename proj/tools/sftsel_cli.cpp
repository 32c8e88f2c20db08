// sftsel: select, grade, judge and analyze instruction-tuning data.
//
// Exit codes: 0 success, 1 upstream/LLM failure, 2 invalid input or arguments.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sftsel/sftsel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace sftsel;

// Flags explicitly given on the command line, layered over the config file.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App& app, const std::string& name, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app.add_option("--" + name, *value, help);
    const auto key = key_for(name);
    keys_.insert(key);
    apply_.push_back([opt, value, key](json& cfg) {
      if (opt->count()) cfg[key] = *value;
    });
    return opt;
  }

  void add_flag(CLI::App& app, const std::string& name, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    auto* opt = app.add_flag("--" + name, *value, help);
    const auto key = key_for(name);
    keys_.insert(key);
    apply_.push_back([opt, value, key](json& cfg) {
      if (opt->count()) cfg[key] = *value;
    });
  }

  void apply(json& cfg) const {
    for (const auto& f : apply_) f(cfg);
  }

  const std::set<std::string>& keys() const noexcept { return keys_; }

 private:
  static std::string key_for(std::string name) {
    for (auto& c : name) {
      if (c == '-') c = '_';
    }
    return name;
  }

  std::set<std::string> keys_;
  std::vector<std::function<void(json&)>> apply_;
};

// Resolved configuration; every value read is recorded so the archived copy
// is complete, defaults included.
class Config {
 public:
  explicit Config(json values) : values_(std::move(values)) {}

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!values_.contains(key) || values_[key].is_null()) values_[key] = fallback;
    return read<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    if (!values_.contains(key) || values_[key].is_null()) {
      throw ConfigError("missing required setting --" + dashed(key));
    }
    return read<T>(key);
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    if (!values_.contains(key) || values_[key].is_null()) return std::nullopt;
    return read<T>(key);
  }

  bool has(const std::string& key) const { return values_.contains(key) && !values_[key].is_null(); }

  const json& values() const noexcept { return values_; }

 private:
  template <typename T>
  T read(const std::string& key) const {
    try {
      return values_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("setting --" + dashed(key) + " has the wrong type: " + values_.at(key).dump());
    }
  }

  static std::string dashed(std::string key) {
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    return key;
  }

  json values_;
};

json load_config_file(const std::string& path, const std::set<std::string>& allowed) {
  if (path.empty()) return json::object();
  json cfg;
  try {
    cfg = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  for (const auto& [key, _] : cfg.items()) {
    if (!allowed.count(key)) throw ConfigError("config file " + path + ": unknown key \"" + key + "\"");
  }
  return cfg;
}

void write_json(const fs::path& path, const json& j) { detail::write_file_atomic(path, j.dump(2) + "\n"); }

fs::path prepare_out(Config& cfg) {
  const fs::path out = cfg.require<std::string>("out");
  fs::create_directories(out);
  return out;
}

void archive(const fs::path& out, const std::string& command, const Config& cfg) {
  json j = cfg.values();
  j["command"] = command;
  write_json(out / "run_config.json", j);
}

Dataset load_input_dataset(Config& cfg) {
  const auto path = cfg.require<std::string>("dataset");
  const auto format = parse_source_format(cfg.get<std::string>("format", "generic_jsonl"));
  return load_dataset(path, format);
}

TokenCounter make_counter(Config& cfg) {
  const auto vocab = cfg.optional<std::string>("vocab");
  const auto fallback = vocab ? "subword" : "whitespace_words";
  const auto mode = parse_count_mode(cfg.get<std::string>("counter", fallback));
  return TokenCounter::make(mode, vocab ? std::optional<fs::path>(*vocab) : std::nullopt);
}

EmbeddingMatrix load_embeddings(Config& cfg, const Dataset& ds) {
  auto emb = read_sfte(cfg.require<std::string>("embeddings"));
  if (emb.rows() != ds.size()) {
    throw DataError("embedding file has " + std::to_string(emb.rows()) + " rows but dataset has " +
                    std::to_string(ds.size()) + " records");
  }
  return emb;
}

std::unique_ptr<Gateway> make_gateway(Config& cfg) {
  GatewayOptions opts;
  opts.endpoint = cfg.get<std::string>("endpoint", opts.endpoint);
  if (auto dir = cfg.optional<std::string>("cache_dir")) opts.cache_dir = *dir;
  opts.max_in_flight = cfg.get<std::size_t>("max_in_flight", opts.max_in_flight);
  opts.retry.max_attempts = cfg.get<std::size_t>("max_attempts", opts.retry.max_attempts);
  std::shared_ptr<Transport> transport;
  if (!cfg.get<bool>("offline", false)) {
    transport = std::make_shared<HttpTransport>(HttpTransport::Options{
        opts.endpoint, cfg.get<std::string>("api_key_env", "OPENAI_API_KEY"), std::chrono::seconds(120)});
  } else if (!opts.cache_dir) {
    throw ConfigError("--offline needs --cache-dir");
  }
  return std::make_unique<Gateway>(opts, transport);
}

void write_subset(const fs::path& out, const Dataset& ds, const Selection& sel) {
  detail::write_file_atomic(out / "subset.jsonl", to_generic_jsonl(materialize(ds, sel)));
}

// ---------------------------------------------------------------------------

void cmd_select(Config& cfg) {
  const auto out = prepare_out(cfg);
  const auto ds = load_input_dataset(cfg);
  const auto strategy = parse_strategy(cfg.require<std::string>("strategy"));
  const auto k = cfg.require<std::size_t>("k");
  Selection sel;
  switch (strategy) {
    case Strategy::longest: sel = select_longest(ds, k, make_counter(cfg)); break;
    case Strategy::shortest: sel = select_shortest(ds, k, make_counter(cfg)); break;
    case Strategy::random: sel = select_random(ds, k, cfg.get<std::uint64_t>("seed", 0)); break;
    case Strategy::quality: {
      const fs::path scores = cfg.require<std::string>("scores");
      auto table = quality_table_from_jsonl(detail::read_file(scores));
      table.dataset_name = ds.name;
      if (const auto meta = scores.parent_path() / "quality_meta.json"; fs::exists(meta)) {
        const auto m = json::parse(detail::read_file(meta));
        table.grader_model = m.value("grader_model", "");
        table.prompt_fingerprint = m.value("prompt_fingerprint", "");
      }
      validate(table, ds.size());
      sel = select_by_quality(table, k, cfg.get<std::uint64_t>("seed", 0));
      break;
    }
    case Strategy::diversity_kmeans: {
      const auto emb = load_embeddings(cfg, ds);
      KMeansOptions opts;
      opts.max_iter = cfg.get<std::size_t>("max_iter", opts.max_iter);
      opts.tol = cfg.get<double>("tol", opts.tol);
      sel = select_diverse_kmeans(emb, k, cfg.get<std::size_t>("clusters", 100),
                                  cfg.get<std::uint64_t>("seed", 0), opts, ds.name);
      break;
    }
    case Strategy::diversity_kcenter: {
      const auto emb = load_embeddings(cfg, ds);
      sel = select_diverse_kcenter(emb, k, cfg.get<std::size_t>("start", 0), ds.name);
      break;
    }
  }
  sel.dataset_name = ds.name;
  write_json(out / "selection.json", to_json(sel));
  write_subset(out, ds, sel);
  archive(out, "select", cfg);
  std::cout << "selected " << sel.indices.size() << " of " << ds.size() << " records ("
            << to_string(strategy) << ")\n";
}

void cmd_materialize(Config& cfg) {
  const auto out = prepare_out(cfg);
  const auto ds = load_input_dataset(cfg);
  json j;
  const auto path = cfg.require<std::string>("selection");
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  const auto sel = selection_from_json(j);
  write_subset(out, ds, sel);
  archive(out, "materialize", cfg);
  std::cout << "wrote " << sel.indices.size() << " records\n";
}

int cmd_grade(Config& cfg) {
  const auto out = prepare_out(cfg);
  const auto ds = load_input_dataset(cfg);
  GradeOptions opts;
  opts.model = cfg.get<std::string>("model", opts.model);
  opts.parse_retries = cfg.get<std::size_t>("retries", opts.parse_retries);
  opts.parallelism = cfg.get<std::size_t>("parallelism", opts.parallelism);
  const double max_null = cfg.get<double>("max_null_fraction", 0.01);
  auto gateway = make_gateway(cfg);
  archive(out, "grade", cfg);

  const auto result = grade_dataset(ds, *gateway, opts);
  detail::write_file_atomic(out / "quality_scores.jsonl", to_jsonl(result.table));
  write_json(out / "quality_meta.json", result.summary());
  write_json(out / "histogram.json", to_json(score_histogram(result.table)));
  std::cout << "graded " << ds.size() << " records, " << result.null_count << " unparsed\n";
  try {
    check_failure_rate(result, max_null);
  } catch (const GradingFailure& e) {
    std::cerr << "sftsel grade: " << e.what() << "\n" << e.summary().dump(2) << "\n";
    return 1;
  }
  return 0;
}

void cmd_judge(Config& cfg) {
  const auto out = prepare_out(cfg);
  const auto testset = load_testset(cfg.require<std::string>("testset"));
  const auto a = load_responses(cfg.require<std::string>("responses_a"));
  const auto b = load_responses(cfg.require<std::string>("responses_b"));
  JudgeOptions opts;
  opts.model = cfg.get<std::string>("model", opts.model);
  opts.variant = parse_judge_variant(cfg.get<std::string>("variant", "standard"));
  opts.parse_retries = cfg.get<std::size_t>("retries", opts.parse_retries);
  opts.parallelism = cfg.get<std::size_t>("parallelism", opts.parallelism);
  const auto agree_with = cfg.optional<std::string>("agree_with");
  auto gateway = make_gateway(cfg);
  archive(out, "judge", cfg);

  const auto report = compare_systems(testset, a, b, *gateway, opts);
  auto j = to_json(report);
  if (agree_with) {
    const auto other = json::parse(detail::read_file(*agree_with));
    j["agreement"] = {{"other_report", *agree_with},
                      {"rate", agreement_rate(results_by_id(report.per_item), report_results(other))}};
  }
  write_json(out / "report.json", j);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  char score[32];
  std::snprintf(score, sizeof score, "%.4f", report.winning_score);
  std::cout << "win " << report.wins << " tie " << report.ties << " lose " << report.losses
            << " of " << report.testset_size << ", winning score " << score << "\n";
}

void cmd_analyze(Config& cfg) {
  const auto out = prepare_out(cfg);
  const auto ds = load_input_dataset(cfg);
  const auto counter = make_counter(cfg);
  const auto top_verbs = cfg.get<std::size_t>("top_verbs", 20);
  const auto top_nouns = cfg.get<std::size_t>("top_nouns", 4);
  const auto sidecar = cfg.optional<std::string>("sidecar");
  const auto extractor = sidecar ? VerbNounExtractor::external(ExternalParses::load(*sidecar))
                                 : VerbNounExtractor::heuristic();
  const auto table = verb_noun_distribution(ds, extractor, top_verbs, top_nouns);
  json report = {{"dataset", ds.name},
                 {"verb_noun_source", sidecar ? "external_parse" : "heuristic"},
                 {"verb_noun", to_json(table)},
                 {"response_length", to_json(length_stats(ds, counter))},
                 {"counter", counter.describe()}};
  write_json(out / "insights.json", report);
  write_json(out / "sunburst.json", emit_sunburst(table));
  archive(out, "analyze", cfg);
  std::cout << "parsed " << table.parsed_total << " of " << table.input_size()
            << " instructions; top-verb coverage "
            << report["verb_noun"]["top_verb_coverage"].get<double>() << "\n";
}

int exit_code_for(const Error& e) { return e.is_transport() ? 1 : 2; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-tuning data selection and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sftsel 1.0.0");

  struct Command {
    CLI::App* app;
    Overrides flags;
    std::string config_path;
  };
  std::vector<std::unique_ptr<Command>> commands;
  auto make_command = [&](const std::string& name, const std::string& help) -> Command& {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(name, help);
    cmd->app->add_option("--config", cmd->config_path, "JSON config file; flags take precedence");
    cmd->flags.add<std::string>(*cmd->app, "out", "output directory");
    commands.push_back(std::move(cmd));
    return *commands.back();
  };
  auto dataset_flags = [](Command& c) {
    c.flags.add<std::string>(*c.app, "dataset", "dataset file");
    c.flags.add<std::string>(*c.app, "format", "alpaca_json | dolly_jsonl | wizardlm_json | generic_jsonl");
  };
  auto counter_flags = [](Command& c) {
    c.flags.add<std::string>(*c.app, "counter", "bytes | whitespace_words | subword");
    c.flags.add<std::string>(*c.app, "vocab", "subword vocabulary file");
  };
  auto gateway_flags = [](Command& c) {
    c.flags.add<std::string>(*c.app, "model", "chat model name");
    c.flags.add<std::string>(*c.app, "endpoint", "OpenAI-compatible base URL");
    c.flags.add<std::string>(*c.app, "api-key-env", "environment variable holding the API key");
    c.flags.add<std::string>(*c.app, "cache-dir", "response cache directory");
    c.flags.add_flag(*c.app, "offline", "serve every request from the cache");
    c.flags.add<std::size_t>(*c.app, "parallelism", "concurrent records");
    c.flags.add<std::size_t>(*c.app, "max-in-flight", "concurrent upstream requests");
    c.flags.add<std::size_t>(*c.app, "max-attempts", "upstream attempts per request");
    c.flags.add<std::size_t>(*c.app, "retries", "re-asks after an unparseable reply");
  };

  auto& select = make_command("select", "select a training subset");
  dataset_flags(select);
  counter_flags(select);
  select.flags.add<std::string>(*select.app, "strategy",
                                "longest | shortest | random | quality | diversity_kmeans | diversity_kcenter");
  select.flags.add<std::size_t>(*select.app, "k", "subset size");
  select.flags.add<std::uint64_t>(*select.app, "seed", "random seed");
  select.flags.add<std::string>(*select.app, "scores", "quality_scores.jsonl from `grade`");
  select.flags.add<std::string>(*select.app, "embeddings", "SFTE embedding file, one row per record");
  select.flags.add<std::size_t>(*select.app, "clusters", "k-means cluster count");
  select.flags.add<std::size_t>(*select.app, "max-iter", "k-means iteration cap");
  select.flags.add<double>(*select.app, "tol", "k-means relative inertia tolerance");
  select.flags.add<std::size_t>(*select.app, "start", "k-center start record");

  auto& materialize_cmd = make_command("materialize", "write the records named by a selection file");
  dataset_flags(materialize_cmd);
  materialize_cmd.flags.add<std::string>(*materialize_cmd.app, "selection", "selection.json");

  auto& grade = make_command("grade", "score every record with the quality grader");
  dataset_flags(grade);
  gateway_flags(grade);
  grade.flags.add<double>(*grade.app, "max-null-fraction", "tolerated share of ungraded records");

  auto& judge = make_command("judge", "pairwise comparison of two systems' responses");
  gateway_flags(judge);
  judge.flags.add<std::string>(*judge.app, "testset", "JSONL {id, instruction}");
  judge.flags.add<std::string>(*judge.app, "responses-a", "JSONL {id, response} of system A");
  judge.flags.add<std::string>(*judge.app, "responses-b", "JSONL {id, response} of system B");
  judge.flags.add<std::string>(*judge.app, "variant", "standard | debiased");
  judge.flags.add<std::string>(*judge.app, "agree-with", "earlier report.json to compare results with");

  auto& analyze = make_command("analyze", "verb-noun distribution and response length statistics");
  dataset_flags(analyze);
  counter_flags(analyze);
  analyze.flags.add<std::string>(*analyze.app, "sidecar", "external parses, JSONL {id, verb, noun}");
  analyze.flags.add<std::size_t>(*analyze.app, "top-verbs", "verbs to report");
  analyze.flags.add<std::size_t>(*analyze.app, "top-nouns", "nouns per verb");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto& cmd : commands) {
      if (!cmd->app->parsed()) continue;
      Config cfg([&] {
        auto values = load_config_file(cmd->config_path, cmd->flags.keys());
        cmd->flags.apply(values);
        return values;
      }());
      const auto name = cmd->app->get_name();
      if (name == "select") cmd_select(cfg);
      else if (name == "materialize") cmd_materialize(cfg);
      else if (name == "grade") return cmd_grade(cfg);
      else if (name == "judge") cmd_judge(cfg);
      else if (name == "analyze") cmd_analyze(cfg);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "sftsel: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "sftsel: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "sftsel: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
