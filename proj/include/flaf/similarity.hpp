#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flaf/error.hpp"
#include "flaf/features.hpp"

namespace flaf {

inline constexpr std::size_t kDistanceGroups = 8;
inline constexpr std::size_t kRpGroup = 7;
inline constexpr std::array<const char*, kDistanceGroups> kGroupNames = {
    "ssd.mean", "ssd.median", "ssd.variance", "ssd.skewness",
    "ssd.kurtosis", "ssd.min", "ssd.max", "rp"};

using GroupDistances = std::array<double, kDistanceGroups>;

// Euclidean distance per SSD statistic group. Groups are never mixed or
// rescaled: each compares values of one unit only.
inline std::array<double, kSsdStats> grouped_ssd_distances(const SsdVector& a, const SsdVector& b) {
  if (a.values.size() != kSsdDims || b.values.size() != kSsdDims) {
    throw Error(ErrorCode::kDimensionMismatch, "SSD vectors must have 168 values");
  }
  std::array<double, kSsdStats> out{};
  for (std::size_t g = 0; g < kSsdStats; ++g) {
    double acc = 0.0;
    for (std::size_t i = g * kReducedBands; i < (g + 1) * kReducedBands; ++i) {
      const double d = a.values[i] - b.values[i];
      acc += d * d;
    }
    out[g] = std::sqrt(acc);
  }
  return out;
}

// 1 - Pearson correlation, in [0, 2]. A constant vector has no defined
// correlation: distance 0 when both vectors are identical, 1 otherwise.
inline double correlation_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "correlation distance needs equal-length vectors");
  }
  const double n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) {
    return std::equal(a.begin(), a.end(), b.begin()) ? 0.0 : 1.0;
  }
  return std::clamp(1.0 - cov / std::sqrt(var_a * var_b), 0.0, 2.0);
}

inline double correlation_distance(const RpVector& a, const RpVector& b) {
  if (a.values.size() != kRpDims || b.values.size() != kRpDims) {
    throw Error(ErrorCode::kDimensionMismatch, "RP vectors must have 1440 values");
  }
  return correlation_distance(std::span<const double>(a.values), std::span<const double>(b.values));
}

inline GroupDistances group_distances(const SegmentFeatures& a, const SegmentFeatures& b) {
  GroupDistances d{};
  const auto ssd = grouped_ssd_distances(a.ssd, b.ssd);
  std::copy(ssd.begin(), ssd.end(), d.begin());
  d[kRpGroup] = correlation_distance(a.rp, b.rp);
  return d;
}

// Converts a named distance map; every one of the eight groups must be present.
inline GroupDistances to_group_distances(const std::map<std::string, double>& named) {
  GroupDistances d{};
  for (std::size_t g = 0; g < kDistanceGroups; ++g) {
    const auto it = named.find(kGroupNames[g]);
    if (it == named.end()) {
      throw Error(ErrorCode::kMissingGroup, std::string("missing distance group ") + kGroupNames[g]);
    }
    d[g] = it->second;
  }
  return d;
}

struct FusionCandidate {
  SegmentRef segment;
  GroupDistances distances{};
};

struct SimilarityHit {
  SegmentRef segment;
  GroupDistances group_distances{};
  double fused_rank_score = 0.0;
  int rank = 0;

  friend bool operator==(const SimilarityHit&, const SimilarityHit&) = default;
};

namespace detail {

// Twice the 1-based fractional rank of every candidate in one group (ties
// share the average rank), kept as integers so fused scores compare exactly.
inline std::vector<long> doubled_ranks(const std::vector<FusionCandidate>& c, std::size_t group) {
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return c[x].distances[group] < c[y].distances[group];
  });
  std::vector<long> ranks(c.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           c[order[j + 1]].distances[group] == c[order[i]].distances[group]) {
      ++j;
    }
    const long doubled = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Rank-level late fusion. Each group ranks the candidates by distance; the
// seven SSD ranks are averaged first so that SSD and RP weigh equally:
//   fused = (mean(ssd ranks) + rp rank) / 2
// Order: fused ascending, then rp distance, then (video_id, segment_index).
inline std::vector<SimilarityHit> late_fuse(const std::vector<FusionCandidate>& candidates) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "late fusion needs candidates");
  for (const auto& c : candidates) {
    for (double d : c.distances) {
      if (!std::isfinite(d) || d < 0.0) {
        throw Error(ErrorCode::kInvalidArgument, "group distances must be finite and >= 0");
      }
    }
  }
  std::vector<long> key(candidates.size(), 0);
  for (std::size_t g = 0; g < kDistanceGroups; ++g) {
    const auto ranks = detail::doubled_ranks(candidates, g);
    const long weight = g == kRpGroup ? static_cast<long>(kSsdStats) : 1;
    for (std::size_t i = 0; i < candidates.size(); ++i) key[i] += weight * ranks[i];
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (key[x] != key[y]) return key[x] < key[y];
    const double rx = candidates[x].distances[kRpGroup];
    const double ry = candidates[y].distances[kRpGroup];
    if (rx != ry) return rx < ry;
    return segment_key_less(candidates[x].segment, candidates[y].segment);
  });
  std::vector<SimilarityHit> hits;
  hits.reserve(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& c = candidates[order[pos]];
    SimilarityHit h;
    h.segment = c.segment;
    h.group_distances = c.distances;
    // key = sum of doubled SSD ranks + 7 * doubled RP rank = 28 * fused
    h.fused_rank_score = static_cast<double>(key[order[pos]]) / 28.0;
    h.rank = static_cast<int>(pos + 1);
    hits.push_back(std::move(h));
  }
  return hits;
}

struct QueryOptions {
  std::size_t k = 10;
  std::optional<std::string> exclude_video;  // drop every segment of this video
};

// Exhaustive scan of the corpus followed by late fusion over all candidates.
inline std::vector<SimilarityHit> query_similar(const SegmentFeatures& query,
                                                std::span<const SegmentFeatures> corpus,
                                                const QueryOptions& options) {
  if (options.k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "corpus is empty");
  std::vector<FusionCandidate> candidates;
  candidates.reserve(corpus.size());
  for (const auto& seg : corpus) {
    if (options.exclude_video && seg.segment.video_id == *options.exclude_video) continue;
    candidates.push_back({seg.segment, group_distances(query, seg)});
  }
  if (candidates.empty()) return {};
  auto hits = late_fuse(candidates);
  if (hits.size() > options.k) hits.resize(options.k);
  return hits;
}

inline const SegmentFeatures& find_segment(std::span<const SegmentFeatures> corpus,
                                           const std::string& video_id, int segment_index) {
  for (const auto& s : corpus) {
    if (s.segment.video_id == video_id && s.segment.segment_index == segment_index) return s;
  }
  throw Error(ErrorCode::kUnknownSegment,
              "no segment " + std::to_string(segment_index) + " for video " + video_id);
}

inline std::vector<SimilarityHit> query_similar(const std::string& video_id, int segment_index,
                                                std::span<const SegmentFeatures> corpus,
                                                const QueryOptions& options) {
  const auto& query = find_segment(corpus, video_id, segment_index);
  return query_similar(query, corpus, options);
}

}  // namespace flaf
