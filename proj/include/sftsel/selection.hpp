#pragma once

// Subset selection strategies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "sftsel/corpus.hpp"
#include "sftsel/error.hpp"
#include "sftsel/geometry.hpp"
#include "sftsel/rng.hpp"

namespace sftsel {

inline constexpr std::string_view kPrngName = "xoshiro256**";

enum class Strategy { longest, shortest, random, quality, diversity_kmeans, diversity_kcenter };

inline std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::longest: return "longest";
    case Strategy::shortest: return "shortest";
    case Strategy::random: return "random";
    case Strategy::quality: return "quality";
    case Strategy::diversity_kmeans: return "diversity_kmeans";
    case Strategy::diversity_kcenter: return "diversity_kcenter";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::longest, Strategy::shortest, Strategy::random, Strategy::quality,
                 Strategy::diversity_kmeans, Strategy::diversity_kcenter}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown strategy: " + std::string(name));
}

/// An ordered subset of record ids together with every parameter that
/// determined it.
struct Selection {
  std::string dataset_name;
  Strategy strategy = Strategy::longest;
  nlohmann::json params = nlohmann::json::object();
  std::vector<RecordId> indices;

  friend bool operator==(const Selection&, const Selection&) = default;
};

inline nlohmann::json to_json(const Selection& sel) {
  return {{"dataset", sel.dataset_name},
          {"strategy", std::string(to_string(sel.strategy))},
          {"params", sel.params},
          {"indices", sel.indices}};
}

inline Selection selection_from_json(const nlohmann::json& j) {
  try {
    Selection sel;
    sel.dataset_name = j.at("dataset").get<std::string>();
    sel.strategy = parse_strategy(j.at("strategy").get<std::string>());
    sel.params = j.at("params");
    sel.indices = j.at("indices").get<std::vector<RecordId>>();
    return sel;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("selection file: ") + e.what());
  }
}

// Selected records in selection order, original ids preserved.
inline std::vector<Demonstration> materialize(const Dataset& ds, const Selection& sel) {
  std::vector<Demonstration> out;
  out.reserve(sel.indices.size());
  for (auto id : sel.indices) {
    if (id >= ds.size()) {
      throw SizeError("selection id " + std::to_string(id) + " out of range for dataset of " +
                      std::to_string(ds.size()));
    }
    out.push_back(ds.records[id]);
  }
  return out;
}

namespace detail {

inline void check_k(std::size_t k, std::size_t available, std::string_view what) {
  if (k == 0) throw ArgumentError(std::string(what) + ": k must be positive");
  if (k > available) {
    throw SizeError(std::string(what) + ": requested k=" + std::to_string(k) + " but only " +
                    std::to_string(available) + " records are available");
  }
}

// Records with an empty response rank after every non-empty one in both
// directions; remaining ties break by ascending id.
inline std::vector<RecordId> rank_by_length(std::span<const std::size_t> lengths,
                                            std::span<const std::uint8_t> empty, std::size_t k,
                                            bool descending) {
  std::vector<RecordId> ids(lengths.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  auto is_empty = [&](RecordId i) { return !empty.empty() && empty[i] != 0; };
  auto before = [&](RecordId a, RecordId b) {
    if (is_empty(a) != is_empty(b)) return is_empty(b);
    if (lengths[a] != lengths[b]) {
      return descending ? lengths[a] > lengths[b] : lengths[a] < lengths[b];
    }
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), before);
  ids.resize(k);
  return ids;
}

inline Selection length_selection(const Dataset& ds, std::size_t k, const TokenCounter& counter,
                                  bool descending) {
  const auto strategy = descending ? Strategy::longest : Strategy::shortest;
  check_k(k, ds.size(), to_string(strategy));
  const auto lengths = response_lengths(ds, counter);
  std::vector<std::uint8_t> empty(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) empty[i] = ds.records[i].response.empty() ? 1 : 0;
  Selection sel;
  sel.dataset_name = ds.name;
  sel.strategy = strategy;
  sel.params = {{"k", k}, {"counter", counter.describe()}};
  sel.indices = rank_by_length(lengths, empty, k, descending);
  return sel;
}

}  // namespace detail

/// The k records with the longest responses, ordered by (length desc, id asc).
inline Selection select_longest(const Dataset& ds, std::size_t k, const TokenCounter& counter) {
  return detail::length_selection(ds, k, counter, true);
}

/// The k records with the shortest non-empty responses, ordered by
/// (length asc, id asc). Empty responses are only taken once every
/// non-empty record is selected.
inline Selection select_shortest(const Dataset& ds, std::size_t k, const TokenCounter& counter) {
  return detail::length_selection(ds, k, counter, false);
}

// Length-only variants used when lengths are computed elsewhere.
inline std::vector<RecordId> longest_ids(std::span<const std::size_t> lengths, std::size_t k) {
  detail::check_k(k, lengths.size(), "longest");
  return detail::rank_by_length(lengths, {}, k, true);
}

inline std::vector<RecordId> shortest_ids(std::span<const std::size_t> lengths, std::size_t k) {
  detail::check_k(k, lengths.size(), "shortest");
  return detail::rank_by_length(lengths, {}, k, false);
}

/// Uniform sample of k ids without replacement, in draw order.
inline Selection select_random(std::string dataset_name, std::size_t n, std::size_t k,
                               std::uint64_t seed) {
  detail::check_k(k, n, "random");
  std::vector<RecordId> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  Xoshiro256 rng(seed);
  Selection sel;
  sel.dataset_name = std::move(dataset_name);
  sel.strategy = Strategy::random;
  sel.params = {{"k", k}, {"seed", seed}, {"prng", std::string(kPrngName)}};
  sel.indices = sample_without_replacement<RecordId>(pool, k, rng);
  return sel;
}

inline Selection select_random(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  return select_random(ds.name, ds.size(), k, seed);
}

// ---------------------------------------------------------------------------
// Quality

/// Grader output for one record. A null score means the reply could not be
/// parsed within the retry budget.
struct QualityEntry {
  std::optional<double> score;
  std::string raw_reply_hash;
  bool rounded = false;
  bool clamped = false;

  friend bool operator==(const QualityEntry&, const QualityEntry&) = default;
};

struct QualityScoreTable {
  std::string dataset_name;
  std::map<RecordId, QualityEntry> entries;
  std::string grader_model;
  std::string prompt_fingerprint;

  std::size_t scored_count() const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [](const auto& kv) { return kv.second.score.has_value(); }));
  }
  std::size_t null_count() const { return entries.size() - scored_count(); }

  friend bool operator==(const QualityScoreTable&, const QualityScoreTable&) = default;
};

// A multiple of 0.5 within [0, 5].
inline bool is_valid_quality_score(double s) noexcept {
  return s >= 0.0 && s <= 5.0 && std::floor(s * 2.0) == s * 2.0;
}

// Throws unless every score is on the grid and every id is below `dataset_size`.
inline void validate(const QualityScoreTable& table, std::optional<std::size_t> dataset_size = {}) {
  for (const auto& [id, entry] : table.entries) {
    if (dataset_size && id >= *dataset_size) {
      throw SchemaError("quality table id " + std::to_string(id) + " not in dataset");
    }
    if (entry.score && !is_valid_quality_score(*entry.score)) {
      throw SchemaError("quality table id " + std::to_string(id) + " has off-grid score " +
                        std::to_string(*entry.score));
    }
  }
}

// One JSON object per line: {"id", "score" (number or null), "raw_reply_hash"},
// plus "rounded"/"clamped" when the grader reply needed adjusting.
inline std::string to_jsonl(const QualityScoreTable& table) {
  std::string out;
  for (const auto& [id, entry] : table.entries) {
    nlohmann::json line = {{"id", id},
                           {"score", entry.score ? nlohmann::json(*entry.score) : nlohmann::json()},
                           {"raw_reply_hash", entry.raw_reply_hash}};
    if (entry.rounded) line["rounded"] = true;
    if (entry.clamped) line["clamped"] = true;
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline QualityScoreTable quality_table_from_jsonl(std::string_view text) {
  QualityScoreTable table;
  for (const auto& [line_no, line] : detail::jsonl_lines(text)) {
    try {
      const auto j = nlohmann::json::parse(line);
      QualityEntry entry;
      const auto& score = j.at("score");
      if (!score.is_null()) entry.score = score.get<double>();
      if (auto it = j.find("raw_reply_hash"); it != j.end() && it->is_string()) {
        entry.raw_reply_hash = it->get<std::string>();
      }
      entry.rounded = j.value("rounded", false);
      entry.clamped = j.value("clamped", false);
      const auto id = j.at("id").get<RecordId>();
      if (!table.entries.emplace(id, std::move(entry)).second) {
        throw SchemaError("quality table line " + std::to_string(line_no) + ": duplicate id " +
                          std::to_string(id));
      }
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("quality table line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("quality table line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(table);
  return table;
}

/// Threshold fill: whole score buckets are taken from the top down while
/// they fit in k; the first bucket that would overflow contributes a seeded
/// uniform sample of exactly the remainder. Null scores are never selected.
/// Output is ordered by (score desc, id asc).
inline Selection select_by_quality(const QualityScoreTable& table, std::size_t k,
                                   std::uint64_t seed) {
  validate(table);
  detail::check_k(k, table.scored_count(), "quality");

  std::map<double, std::vector<RecordId>, std::greater<>> buckets;
  for (const auto& [id, entry] : table.entries) {
    if (entry.score) buckets[*entry.score].push_back(id);  // ids ascending
  }

  Xoshiro256 rng(seed);
  Selection sel;
  sel.dataset_name = table.dataset_name;
  sel.strategy = Strategy::quality;
  nlohmann::json taken = nlohmann::json::array();
  for (const auto& [score, ids] : buckets) {
    const std::size_t remaining = k - sel.indices.size();
    if (remaining == 0) break;
    if (ids.size() <= remaining) {
      sel.indices.insert(sel.indices.end(), ids.begin(), ids.end());
      taken.push_back({{"score", score}, {"taken", ids.size()}, {"bucket_size", ids.size()}});
    } else {
      auto sampled = sample_without_replacement<RecordId>(ids, remaining, rng);
      std::sort(sampled.begin(), sampled.end());
      sel.indices.insert(sel.indices.end(), sampled.begin(), sampled.end());
      taken.push_back({{"score", score}, {"taken", remaining}, {"bucket_size", ids.size()}});
    }
  }
  sel.params = {{"k", k},
                {"seed", seed},
                {"prng", std::string(kPrngName)},
                {"grader_model", table.grader_model},
                {"prompt_fingerprint", table.prompt_fingerprint},
                {"excluded_null", table.null_count()},
                {"buckets", taken}};
  return sel;
}

// ---------------------------------------------------------------------------
// Diversity

/// Per-cluster draw counts summing to k: floor(k/C) each, the remainder one
/// apiece to the largest clusters (ties to the lower index); a cluster that
/// cannot meet its quota gives all members and the shortfall is handed out
/// round-robin over clusters ordered by descending size.
inline std::vector<std::size_t> allocate_cluster_quotas(std::span<const std::size_t> sizes,
                                                        std::size_t k) {
  const std::size_t clusters = sizes.size();
  if (clusters == 0) throw ArgumentError("cluster quotas: no clusters");
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  detail::check_k(k, total, "cluster quotas");

  std::vector<std::size_t> by_size(clusters);
  for (std::size_t c = 0; c < clusters; ++c) by_size[c] = c;
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });

  std::vector<std::size_t> quota(clusters, k / clusters);
  for (std::size_t r = 0; r < k % clusters; ++r) ++quota[by_size[r]];

  std::size_t shortfall = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    if (quota[c] > sizes[c]) {
      shortfall += quota[c] - sizes[c];
      quota[c] = sizes[c];
    }
  }
  while (shortfall > 0) {
    for (auto c : by_size) {
      if (shortfall == 0) break;
      if (quota[c] < sizes[c]) {
        ++quota[c];
        --shortfall;
      }
    }
  }
  return quota;
}

struct KMeansSelection {
  Selection selection;
  Clustering clustering;
};

/// Clusters the embeddings, then draws each cluster's quota uniformly
/// (seeded). Indices are grouped by cluster index, ascending id within each.
inline KMeansSelection select_diverse_kmeans_detailed(const EmbeddingMatrix& emb, std::size_t k,
                                                      std::size_t clusters, std::uint64_t seed,
                                                      const KMeansOptions& opts = {},
                                                      std::string dataset_name = {}) {
  detail::check_k(k, emb.rows(), "diversity_kmeans");
  if (clusters == 0) throw ArgumentError("diversity_kmeans: cluster count must be positive");
  if (clusters > emb.rows()) {
    throw SizeError("diversity_kmeans: " + std::to_string(clusters) + " clusters for " +
                    std::to_string(emb.rows()) + " points");
  }
  KMeansSelection out;
  out.clustering = kmeans(emb, clusters, seed, opts);
  const auto members = out.clustering.members();
  const auto sizes = out.clustering.cluster_sizes();
  const auto quota = allocate_cluster_quotas(sizes, k);

  Xoshiro256 rng(derive_seed(seed, 1));
  auto& sel = out.selection;
  sel.dataset_name = std::move(dataset_name);
  sel.strategy = Strategy::diversity_kmeans;
  for (std::size_t c = 0; c < clusters; ++c) {
    auto drawn = sample_without_replacement<RecordId>(members[c], quota[c], rng);
    std::sort(drawn.begin(), drawn.end());
    sel.indices.insert(sel.indices.end(), drawn.begin(), drawn.end());
  }
  sel.params = {{"k", k},
                {"clusters", clusters},
                {"seed", seed},
                {"prng", std::string(kPrngName)},
                {"max_iter", opts.max_iter},
                {"tol", opts.tol},
                {"embedding_rows", emb.rows()},
                {"embedding_dim", emb.dim()},
                {"cluster_sizes", sizes},
                {"quotas", quota}};
  return out;
}

inline Selection select_diverse_kmeans(const EmbeddingMatrix& emb, std::size_t k,
                                       std::size_t clusters, std::uint64_t seed,
                                       const KMeansOptions& opts = {},
                                       std::string dataset_name = {}) {
  return select_diverse_kmeans_detailed(emb, k, clusters, seed, opts, std::move(dataset_name))
      .selection;
}

/// Greedy farthest-point coreset from `start`; indices in insertion order.
inline Selection select_diverse_kcenter(const EmbeddingMatrix& emb, std::size_t k,
                                        std::size_t start = 0, std::string dataset_name = {}) {
  detail::check_k(k, emb.rows(), "diversity_kcenter");
  if (start >= emb.rows()) {
    throw ArgumentError("diversity_kcenter: start id " + std::to_string(start) + " out of range");
  }
  auto trace = kcenter_greedy(emb, k, start);
  Selection sel;
  sel.dataset_name = std::move(dataset_name);
  sel.strategy = Strategy::diversity_kcenter;
  sel.params = {{"k", k},
                {"start", start},
                {"embedding_rows", emb.rows()},
                {"embedding_dim", emb.dim()},
                {"covering_radius", covering_radius(emb, trace.order)}};
  sel.indices = std::move(trace.order);
  return sel;
}

}  // namespace sftsel
