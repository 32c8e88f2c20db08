#pragma once

// Numerical core for diversity selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "sftsel/error.hpp"
#include "sftsel/rng.hpp"

namespace sftsel {

/// Dense row-major n x d matrix of 32-bit floats; row i embeds record id i.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
      : rows_(rows), dim_(dim), data_(std::move(data)) {
    if (dim_ == 0) throw DataError("embedding dimension must be positive");
    if (data_.size() != rows_ * dim_) {
      throw DataError("embedding data has " + std::to_string(data_.size()) +
                      " values, expected " + std::to_string(rows_ * dim_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw DataError("non-finite embedding value at row " + std::to_string(i / dim_) +
                        ", column " + std::to_string(i % dim_));
      }
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const float> values() const noexcept { return data_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// SFTE binary format (little-endian, no padding):
//   "SFTE" | u32 version = 1 | u64 n | u64 d | n*d float32 row-major

inline constexpr std::array<char, 4> kSfteMagic{'S', 'F', 'T', 'E'};
inline constexpr std::uint32_t kSfteVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, float>) {
    std::uint32_t b;
    std::memcpy(&b, &value, sizeof b);
    bits = b;
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{p[i]} << (8 * i);
  if constexpr (std::is_same_v<T, float>) {
    const auto b = static_cast<std::uint32_t>(bits);
    float f;
    std::memcpy(&f, &b, sizeof f);
    return f;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace detail

inline std::string encode_sfte(const EmbeddingMatrix& emb) {
  std::string out(kSfteMagic.begin(), kSfteMagic.end());
  detail::put_le<std::uint32_t>(out, kSfteVersion);
  detail::put_le<std::uint64_t>(out, emb.rows());
  detail::put_le<std::uint64_t>(out, emb.dim());
  out.reserve(out.size() + emb.values().size() * 4);
  for (float v : emb.values()) detail::put_le<float>(out, v);
  return out;
}

inline EmbeddingMatrix decode_sfte(std::string_view bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 8 + 8;
  if (bytes.size() < kHeader) throw DataError("SFTE: truncated header");
  if (!std::equal(kSfteMagic.begin(), kSfteMagic.end(), bytes.begin())) {
    throw DataError("SFTE: bad magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kSfteVersion) {
    throw DataError("SFTE: unsupported version " + std::to_string(version));
  }
  const auto n = detail::get_le<std::uint64_t>(p + 8);
  const auto d = detail::get_le<std::uint64_t>(p + 16);
  if (d == 0) throw DataError("SFTE: dimension must be positive");
  if (n > (bytes.size() - kHeader) / 4 / d || bytes.size() - kHeader != n * d * 4) {
    throw DataError("SFTE: payload size does not match header (n=" + std::to_string(n) +
                    ", d=" + std::to_string(d) + ")");
  }
  std::vector<float> data(n * d);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::get_le<float>(p + kHeader + 4 * i);
  return EmbeddingMatrix(n, d, std::move(data));
}

inline void write_sfte(const std::filesystem::path& path, const EmbeddingMatrix& emb) {
  const auto bytes = encode_sfte(emb);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write embeddings: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline EmbeddingMatrix read_sfte(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open embeddings: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sfte(bytes);
}

// ---------------------------------------------------------------------------
// Distances

inline double squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += diff * diff;
  }
  return acc;
}

inline double squared_distance(std::span<const float> a, std::span<const double> b) noexcept {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - b[j];
    acc += diff * diff;
  }
  return acc;
}

inline double distance(const EmbeddingMatrix& emb, std::size_t i, std::size_t j) noexcept {
  return std::sqrt(squared_distance(emb.row(i), emb.row(j)));
}

/// Euclidean distance from every row to its nearest row in `selected`.
/// Selected rows map to 0.
inline std::vector<double> pairwise_min_distance(const EmbeddingMatrix& emb,
                                                 std::span<const std::size_t> selected) {
  if (selected.empty()) throw ArgumentError("pairwise_min_distance: selected set is empty");
  for (auto s : selected) {
    if (s >= emb.rows()) throw ArgumentError("pairwise_min_distance: id out of range");
  }
  std::vector<double> best(emb.rows(), std::numeric_limits<double>::infinity());
  for (auto s : selected) {
    const auto centre = emb.row(s);
    for (std::size_t i = 0; i < emb.rows(); ++i) {
      best[i] = std::min(best[i], squared_distance(emb.row(i), centre));
    }
  }
  for (auto s : selected) best[s] = 0.0;
  for (auto& b : best) b = std::sqrt(b);
  return best;
}

// Largest distance from any row to its nearest centre.
inline double covering_radius(const EmbeddingMatrix& emb, std::span<const std::size_t> centres) {
  const auto d = pairwise_min_distance(emb, centres);
  return *std::max_element(d.begin(), d.end());
}

/// Farthest-point traversal. `order[0]` is the start; `gains[t]` is the
/// distance from `order[t]` to {order[0..t-1]} at the time it was added
/// (gains[0] is +inf). Ties go to the smaller id.
struct KCenterTrace {
  std::vector<std::size_t> order;
  std::vector<double> gains;
};

inline KCenterTrace kcenter_greedy(const EmbeddingMatrix& emb, std::size_t k, std::size_t start) {
  const std::size_t n = emb.rows();
  if (k > n) {
    throw SizeError("k-center: requested " + std::to_string(k) + " centres from " +
                    std::to_string(n) + " points");
  }
  if (start >= n) throw ArgumentError("k-center: start id " + std::to_string(start) + " out of range");
  KCenterTrace trace;
  if (k == 0) return trace;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  trace.order.reserve(k);
  trace.gains.reserve(k);

  std::size_t next = start;
  double gain = std::numeric_limits<double>::infinity();
  while (true) {
    trace.order.push_back(next);
    trace.gains.push_back(gain);
    chosen[next] = true;
    if (trace.order.size() == k) break;
    const auto centre = emb.row(next);
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(emb.row(i), centre));
    }
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i] && nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    gain = std::sqrt(best);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// K-Means

struct KMeansOptions {
  std::size_t max_iter = 100;
  double tol = 1e-4;  // relative inertia improvement
};

/// Result of Lloyd's algorithm. `assignment[i]` is the nearest centroid to row
/// i (ties to the lower cluster index); `inertia` is the sum of squared
/// distances under that assignment. `inertia_history[t]` is the inertia after
/// the t-th assignment step (t = 0 is the initial seeding).
struct Clustering {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // clusters x dim, row-major
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;

  std::span<const double> centroid(std::size_t c) const noexcept {
    return {centroids.data() + c * dim, dim};
  }
  std::vector<std::size_t> cluster_sizes() const {
    std::vector<std::size_t> sizes(clusters, 0);
    for (auto a : assignment) ++sizes[a];
    return sizes;
  }
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(clusters);
    for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
    return out;
  }

  friend bool operator==(const Clustering&, const Clustering&) = default;
};

namespace detail {

// Returns true when any assignment changed; writes inertia.
inline bool assign_nearest(const EmbeddingMatrix& emb, const std::vector<double>& centroids,
                           std::size_t clusters, std::vector<std::size_t>& assignment,
                           std::vector<double>& sq_dist, double& inertia) {
  const std::size_t d = emb.dim();
  bool changed = false;
  inertia = 0.0;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const auto x = emb.row(i);
    std::size_t best_c = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < clusters; ++c) {
      const double dist = squared_distance(x, std::span<const double>(centroids.data() + c * d, d));
      if (dist < best) {
        best = dist;
        best_c = c;
      }
    }
    if (assignment[i] != best_c) changed = true;
    assignment[i] = best_c;
    sq_dist[i] = best;
    inertia += best;
  }
  return changed;
}

inline std::vector<double> kmeanspp_init(const EmbeddingMatrix& emb, std::size_t clusters,
                                         Xoshiro256& rng) {
  const std::size_t n = emb.rows();
  const std::size_t d = emb.dim();
  std::vector<double> centroids;
  centroids.reserve(clusters * d);
  std::vector<bool> picked(n, false);
  auto take = [&](std::size_t i) {
    picked[i] = true;
    for (float v : emb.row(i)) centroids.push_back(v);
  };

  take(static_cast<std::size_t>(rng.below(n)));
  std::vector<double> weight(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < clusters; ++c) {
    const std::span<const double> last(centroids.data() + (c - 1) * d, d);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      weight[i] = std::min(weight[i], squared_distance(emb.row(i), last));
      total += weight[i];
    }
    std::size_t choice = n;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] <= 0.0) continue;
        acc += weight[i];
        choice = i;
        if (acc > target) break;
      }
    } else {
      // every point coincides with a centroid: take the lowest unpicked id
      for (std::size_t i = 0; i < n; ++i) {
        if (!picked[i]) {
          choice = i;
          break;
        }
      }
    }
    take(choice);
  }
  return centroids;
}

}  // namespace detail

/// Lloyd's algorithm from seeded k-means++ initialisation. Stops when the
/// relative inertia improvement drops below `tol`, the assignment is stable,
/// or `max_iter` update steps have run. A cluster left empty by an update is
/// reseeded at the point farthest from its current centroid.
///
/// Single-threaded with a fixed summation order: identical (matrix, seed)
/// produce a bitwise-identical Clustering.
inline Clustering kmeans(const EmbeddingMatrix& emb, std::size_t clusters, std::uint64_t seed,
                         const KMeansOptions& opts = {}) {
  const std::size_t n = emb.rows();
  const std::size_t d = emb.dim();
  if (clusters == 0) throw ArgumentError("kmeans: cluster count must be positive");
  if (clusters > n) {
    throw SizeError("kmeans: " + std::to_string(clusters) + " clusters requested for " +
                    std::to_string(n) + " points");
  }
  if (opts.max_iter == 0) throw ArgumentError("kmeans: max_iter must be positive");
  if (!(opts.tol >= 0.0)) throw ArgumentError("kmeans: tol must be non-negative");

  Xoshiro256 rng(seed);
  Clustering out;
  out.clusters = clusters;
  out.dim = d;
  out.centroids = detail::kmeanspp_init(emb, clusters, rng);
  out.assignment.assign(n, clusters);  // sentinel so the first pass counts as a change
  std::vector<double> sq_dist(n, 0.0);

  double inertia = 0.0;
  detail::assign_nearest(emb, out.centroids, clusters, out.assignment, sq_dist, inertia);
  out.inertia_history.push_back(inertia);

  std::vector<double> sums(clusters * d);
  std::vector<std::size_t> counts(clusters);
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = out.assignment[i];
      ++counts[c];
      const auto x = emb.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += x[j];
    }
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        out.centroids[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
      }
    }

    // Empty clusters: move the centroid onto the point farthest from its own
    // (updated) centroid. Each repair claims a distinct point.
    bool repaired = false;
    std::vector<bool> claimed;
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] != 0) continue;
      if (claimed.empty()) claimed.assign(n, false);
      std::size_t far = n;
      double far_dist = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (claimed[i]) continue;
        const double dist = squared_distance(emb.row(i), out.centroid(out.assignment[i]));
        if (dist > far_dist) {
          far_dist = dist;
          far = i;
        }
      }
      if (far == n) break;
      claimed[far] = true;
      const auto x = emb.row(far);
      for (std::size_t j = 0; j < d; ++j) out.centroids[c * d + j] = x[j];
      repaired = true;
    }

    const double previous = inertia;
    const bool changed =
        detail::assign_nearest(emb, out.centroids, clusters, out.assignment, sq_dist, inertia);
    out.inertia_history.push_back(inertia);
    out.iterations = iter;
    if (!changed && !repaired) break;
    if (inertia == 0.0) break;
    if (previous > 0.0 && (previous - inertia) / previous < opts.tol) break;
  }
  out.inertia = inertia;
  return out;
}

// Inertia recomputed from the assignment and centroids alone.
inline double recompute_inertia(const EmbeddingMatrix& emb, const Clustering& cl) {
  double acc = 0.0;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    acc += squared_distance(emb.row(i), cl.centroid(cl.assignment[i]));
  }
  return acc;
}

}  // namespace sftsel
