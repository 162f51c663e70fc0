#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flaf/error.hpp"
#include "flaf/features.hpp"
#include "flaf/parallel.hpp"
#include "flaf/similarity.hpp"

namespace flaf {

inline constexpr double kMinEnvelopeSeconds = 5.0;
inline constexpr double kMinOverlapSeconds = 3.0;
inline constexpr double kDefaultMaxLagSeconds = 10.0;

// offset_s = start of b minus start of a on the shared scene clock, so content
// at t in a is found at t - offset_s in b.
struct OffsetEstimate {
  std::string video_a, video_b;
  long lag = 0;  // in envelope hops
  double offset_s = 0.0;
  double cost = 0.0;
  double confidence = 0.0;
};

struct SyncCluster {
  std::string cluster_id;
  std::vector<std::string> members;  // sorted
  std::string reference;
  std::map<std::string, double> member_offsets;
  std::vector<OffsetEstimate> edges;  // accepted estimates inside the cluster
};

struct PlaybackEntry {
  std::string video_id;
  double start_delay_s = 0.0;
};

struct SyncOptions {
  std::size_t rank_k = 5;
  double conf_threshold = 0.6;
  double max_lag_s = kDefaultMaxLagSeconds;
  std::size_t workers = default_workers();
};

namespace detail {

inline bool envelope_less(const OnsetEnvelope& a, const OnsetEnvelope& b) {
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  return std::lexicographical_compare(a.values.begin(), a.values.end(), b.values.begin(), b.values.end());
}

// cost(l) = mean |a[t] - b[t - l]| over the overlap, for lags with enough
// overlap; the estimate is always computed in canonical (a <= b) order.
inline OffsetEstimate estimate_canonical(const OnsetEnvelope& a, const OnsetEnvelope& b, double max_lag_s) {
  const double rate = a.rate;
  const long na = static_cast<long>(a.values.size());
  const long nb = static_cast<long>(b.values.size());
  const long max_lag = static_cast<long>(std::floor(max_lag_s * rate + 1e-9));
  const long min_overlap = static_cast<long>(std::ceil(kMinOverlapSeconds * rate - 1e-9));
  std::vector<double> costs;
  costs.reserve(static_cast<std::size_t>(2 * max_lag + 1));
  long best_lag = 0;
  double best = 0.0;
  bool have = false;
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    const long t0 = std::max(0L, lag);
    const long t1 = std::min(na, nb + lag);
    if (t1 - t0 < min_overlap) continue;
    double acc = 0.0;
    for (long t = t0; t < t1; ++t) {
      acc += std::abs(a.values[static_cast<std::size_t>(t)] - b.values[static_cast<std::size_t>(t - lag)]);
    }
    const double cost = acc / static_cast<double>(t1 - t0);
    costs.push_back(cost);
    const bool better = !have || cost < best ||
                        (cost == best && (std::labs(lag) < std::labs(best_lag) ||
                                          (std::labs(lag) == std::labs(best_lag) && lag > best_lag)));
    if (better) {
      best = cost;
      best_lag = lag;
      have = true;
    }
  }
  if (!have) {
    throw Error(ErrorCode::kInsufficientOverlap,
                "no lag gives " + std::to_string(kMinOverlapSeconds) + " s of overlap");
  }
  const auto mid = costs.begin() + static_cast<std::ptrdiff_t>(costs.size() / 2);
  std::nth_element(costs.begin(), mid, costs.end());
  const double median = *mid;
  OffsetEstimate e;
  e.video_a = a.video_id;
  e.video_b = b.video_id;
  e.lag = best_lag;
  e.offset_s = static_cast<double>(best_lag) / rate;
  e.cost = best;
  e.confidence = median > 0.0 ? std::clamp(1.0 - best / median, 0.0, 1.0) : 0.0;
  return e;
}

}  // namespace detail

inline OffsetEstimate estimate_offset(const OnsetEnvelope& a, const OnsetEnvelope& b,
                                      double max_lag_s = kDefaultMaxLagSeconds) {
  if (a.rate != b.rate || a.rate <= 0.0) {
    throw Error(ErrorCode::kDimensionMismatch, "envelopes differ in frame rate");
  }
  if (a.duration_s() < kMinEnvelopeSeconds || b.duration_s() < kMinEnvelopeSeconds) {
    throw Error(ErrorCode::kInsufficientOverlap, "envelope shorter than 5 s");
  }
  if (!detail::envelope_less(b, a)) return detail::estimate_canonical(a, b, max_lag_s);
  auto e = detail::estimate_canonical(b, a, max_lag_s);
  std::swap(e.video_a, e.video_b);
  e.lag = -e.lag;
  e.offset_s = -e.offset_s;
  return e;
}

// Lead-in skipped in each member so that all of them open on the latest
// common start: delay_i = max(offsets) - offset_i.
inline std::vector<PlaybackEntry> playback_schedule(const SyncCluster& cluster) {
  double latest = 0.0;
  for (const auto& [_, o] : cluster.member_offsets) latest = std::max(latest, o);
  std::vector<PlaybackEntry> out;
  for (const auto& id : cluster.members) {
    const auto it = cluster.member_offsets.find(id);
    const double o = it == cluster.member_offsets.end() ? 0.0 : it->second;
    out.push_back({id, latest - o});
  }
  return out;
}

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Sum of squared edge residuals (o_b - o_a - offset_ab)^2.
inline double edge_residual(const std::map<std::string, double>& offsets,
                            const std::vector<OffsetEstimate>& edges) {
  double acc = 0.0;
  for (const auto& e : edges) {
    const double r = offsets.at(e.video_b) - offsets.at(e.video_a) - e.offset_s;
    acc += r * r;
  }
  return acc;
}

// Offsets of every member relative to members.front() from breadth-first
// path sums over accepted edges.
inline std::map<std::string, double> path_offsets(const std::vector<std::string>& members,
                                                  const std::vector<OffsetEstimate>& edges) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> adj;
  for (const auto& e : edges) {
    adj[e.video_a].push_back({e.video_b, e.offset_s});
    adj[e.video_b].push_back({e.video_a, -e.offset_s});
  }
  std::map<std::string, double> out;
  std::queue<std::string> q;
  out[members.front()] = 0.0;
  q.push(members.front());
  while (!q.empty()) {
    const auto v = q.front();
    q.pop();
    for (const auto& [w, o] : adj[v]) {
      if (out.count(w)) continue;
      out[w] = out[v] + o;
      q.push(w);
    }
  }
  return out;
}

// Least-squares node offsets for the edge set, with members.front() pinned
// to zero.
inline std::map<std::string, double> reconcile_offsets(const std::vector<std::string>& members,
                                                       const std::vector<OffsetEstimate>& edges) {
  std::map<std::string, double> out;
  if (members.size() == 1 || edges.empty()) {
    for (const auto& m : members) out[m] = 0.0;
    return out;
  }
  std::map<std::string, Eigen::Index> col;
  for (std::size_t i = 1; i < members.size(); ++i) col[members[i]] = static_cast<Eigen::Index>(i - 1);
  const auto n = static_cast<Eigen::Index>(members.size() - 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(edges.size()), n);
  Eigen::VectorXd y(static_cast<Eigen::Index>(edges.size()));
  for (std::size_t r = 0; r < edges.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (const auto it = col.find(edges[r].video_b); it != col.end()) A(row, it->second) += 1.0;
    if (const auto it = col.find(edges[r].video_a); it != col.end()) A(row, it->second) -= 1.0;
    y(row) = edges[r].offset_s;
  }
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(y);
  out[members.front()] = 0.0;
  for (const auto& [id, c] : col) out[id] = x(c);
  return out;
}

}  // namespace detail

// Candidate pairs come from top-k similarity hits across videos; pairs whose
// offset confidence reaches the threshold link videos into clusters.
inline std::vector<SyncCluster> build_sync_clusters(const std::vector<SegmentFeatures>& corpus,
                                                    const std::map<std::string, OnsetEnvelope>& envelopes,
                                                    const SyncOptions& opts = {}) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : envelopes) ids.push_back(id);
  if (ids.empty()) return {};
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;

  std::vector<std::vector<SimilarityHit>> hits(corpus.size());
  parallel_for(
      corpus.size(),
      [&](std::size_t i) {
        if (!index.count(corpus[i].segment.video_id)) return;
        QueryOptions q;
        q.k = opts.rank_k;
        q.exclude_video = corpus[i].segment.video_id;
        hits[i] = query_similar(corpus[i], corpus, q);
      },
      opts.workers);
  std::set<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto& h : hits[i]) {
      const auto& a = corpus[i].segment.video_id;
      const auto& b = h.segment.video_id;
      if (a == b || !index.count(b)) continue;
      pairs.insert(a < b ? std::pair{a, b} : std::pair{b, a});
    }
  }

  const std::vector<std::pair<std::string, std::string>> pair_list(pairs.begin(), pairs.end());
  std::vector<std::optional<OffsetEstimate>> estimates(pair_list.size());
  parallel_for(
      pair_list.size(),
      [&](std::size_t i) {
        try {
          estimates[i] = estimate_offset(envelopes.at(pair_list[i].first), envelopes.at(pair_list[i].second),
                                         opts.max_lag_s);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kInsufficientOverlap) throw;
        }
      },
      opts.workers);

  detail::UnionFind uf(ids.size());
  std::vector<OffsetEstimate> accepted;
  for (const auto& e : estimates) {
    if (!e || e->confidence < opts.conf_threshold) continue;
    accepted.push_back(*e);
    uf.unite(index[e->video_a], index[e->video_b]);
  }

  std::map<std::size_t, SyncCluster> by_root;
  for (std::size_t i = 0; i < ids.size(); ++i) by_root[uf.find(i)].members.push_back(ids[i]);
  for (const auto& e : accepted) by_root[uf.find(index[e.video_a])].edges.push_back(e);

  std::vector<SyncCluster> out;
  for (auto& [_, c] : by_root) {
    auto offsets = detail::reconcile_offsets(c.members, c.edges);
    double earliest = offsets.at(c.members.front());
    c.reference = c.members.front();
    for (const auto& m : c.members) {
      if (offsets.at(m) < earliest) {
        earliest = offsets.at(m);
        c.reference = m;
      }
    }
    for (auto& [m, o] : offsets) o -= earliest;
    offsets[c.reference] = 0.0;
    c.member_offsets = std::move(offsets);
    c.cluster_id = "c" + std::to_string(out.size());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace flaf
