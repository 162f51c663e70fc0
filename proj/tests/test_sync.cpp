#include <gtest/gtest.h>

#include <random>

#include "flaf/sync.hpp"
#include "test_support.hpp"

using namespace flaf;
using namespace flaf::testing;

namespace {

constexpr double kHopS = 1024.0 / 44100.0;

OnsetEnvelope random_envelope(std::size_t n, std::uint32_t seed, std::string id) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OnsetEnvelope e;
  e.video_id = std::move(id);
  e.rate = 44100.0 / 1024.0;
  e.values.resize(n);
  for (auto& v : e.values) v = u(rng) < 0.1 ? u(rng) : 0.05 * u(rng);
  return e;
}

std::vector<double> crop(const std::vector<double>& s, double at, double len) {
  const auto a = static_cast<std::size_t>(std::llround(at * kCanonicalRate));
  const auto n = static_cast<std::size_t>(std::llround(len * kCanonicalRate));
  return {s.begin() + static_cast<std::ptrdiff_t>(a), s.begin() + static_cast<std::ptrdiff_t>(a + n)};
}

struct Corpus {
  std::vector<SegmentFeatures> segments;
  std::map<std::string, OnsetEnvelope> envelopes;

  void add(const std::string& id, std::vector<double> samples) {
    const auto clip = make_clip(std::move(samples), id);
    for (auto& f : extract_segment_features(clip)) segments.push_back(std::move(f));
    envelopes[id] = clip_envelope(clip);
  }
};

const SyncCluster& cluster_of(const std::vector<SyncCluster>& cs, const std::string& id) {
  for (const auto& c : cs) {
    if (std::find(c.members.begin(), c.members.end(), id) != c.members.end()) return c;
  }
  throw std::runtime_error("no cluster for " + id);
}

}  // namespace

TEST(Offset, ThreeHopDelay) {
  const auto a = random_envelope(600, 1, "a");
  OnsetEnvelope b = a;
  b.video_id = "b";
  b.values.erase(b.values.begin(), b.values.begin() + 3);  // b started 3 hops later
  const auto e = estimate_offset(a, b, 2.0);
  EXPECT_EQ(e.lag, 3);
  EXPECT_DOUBLE_EQ(e.offset_s, 3.0 * 1024.0 / 44100.0);
  EXPECT_NEAR(e.offset_s, 0.06966, 1e-5);
  EXPECT_EQ(e.cost, 0.0);
  EXPECT_EQ(e.video_a, "a");
  EXPECT_EQ(e.video_b, "b");
}

TEST(Offset, IdentityHasFullConfidence) {
  const auto a = random_envelope(400, 2, "a");
  const auto e = estimate_offset(a, a, 3.0);
  EXPECT_EQ(e.lag, 0);
  EXPECT_EQ(e.cost, 0.0);
  EXPECT_DOUBLE_EQ(e.confidence, 1.0);
}

TEST(Offset, FlatEnvelopeHasNoConfidence) {
  OnsetEnvelope a{"a", 44100.0 / 1024.0, std::vector<double>(400, 0.5)};
  const auto e = estimate_offset(a, a, 3.0);
  EXPECT_EQ(e.lag, 0);
  EXPECT_EQ(e.confidence, 0.0);
}

TEST(Offset, CostMatchesDirectSum) {
  const auto a = random_envelope(300, 3, "a");
  const auto b = random_envelope(280, 4, "b");
  const auto e = estimate_offset(a, b, 1.0);
  double best = 1e9;
  long best_lag = 0;
  for (long l = -43; l <= 43; ++l) {
    double acc = 0.0;
    int n = 0;
    for (long t = 0; t < 300; ++t) {
      if (t - l < 0 || t - l >= 280) continue;
      acc += std::abs(a.values[t] - b.values[t - l]);
      ++n;
    }
    const double c = acc / n;
    if (c < best - 1e-15 || (std::abs(c - best) <= 1e-15 && std::labs(l) < std::labs(best_lag))) {
      best = c;
      best_lag = l;
    }
  }
  EXPECT_EQ(e.lag, best_lag);
  EXPECT_NEAR(e.cost, best, 1e-12);
}

TEST(Offset, AntisymmetryIsExact) {
  for (std::uint32_t seed = 0; seed < 30; ++seed) {
    const auto a = random_envelope(250 + seed * 7, seed, "v" + std::to_string(seed % 3));
    auto b = random_envelope(260, seed + 100, "w");
    for (std::size_t i = 0; i + 5 < b.values.size() && i + 11 < a.values.size(); ++i) {
      b.values[i] = 0.5 * b.values[i] + a.values[i + 5];
    }
    const auto ab = estimate_offset(a, b, 2.0);
    const auto ba = estimate_offset(b, a, 2.0);
    EXPECT_EQ(ab.offset_s, -ba.offset_s);
    EXPECT_EQ(ab.cost, ba.cost);
    EXPECT_EQ(ab.confidence, ba.confidence);
    EXPECT_EQ(ab.video_a, ba.video_b);
  }
}

TEST(Offset, RejectsShortOrDisjoint) {
  const auto a = random_envelope(200, 5, "a");  // 4.6 s
  const auto b = random_envelope(400, 6, "b");
  try {
    estimate_offset(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientOverlap);
  }
  const auto c = random_envelope(240, 7, "c");
  // 5.6 s each, 3 s overlap needs |lag| <= 2.6 s, so a 0.5 s search is fine
  EXPECT_NO_THROW(estimate_offset(c, b, 0.5));
  OnsetEnvelope d = b;
  d.rate = 10.0;
  EXPECT_THROW(estimate_offset(b, d), Error);
}

TEST(Offset, LagRangeIsBounded) {
  const auto a = random_envelope(1000, 8, "a");
  OnsetEnvelope b = a;
  b.video_id = "b";
  b.values.erase(b.values.begin(), b.values.begin() + 200);  // 4.6 s shift
  const auto narrow = estimate_offset(a, b, 2.0);
  EXPECT_LE(std::abs(narrow.offset_s), 2.0);
  EXPECT_EQ(estimate_offset(a, b, 5.0).lag, 200);
}

TEST(Offset, IndependentNoiseHasLowConfidence) {
  for (std::uint32_t trial = 0; trial < 100; ++trial) {
    const auto a = clip_envelope(make_clip(white_noise(8 * kCanonicalRate, 0.1, 3 * trial + 1), "a"));
    const auto b = clip_envelope(make_clip(white_noise(8 * kCanonicalRate, 0.1, 3 * trial + 2), "b"));
    EXPECT_LT(estimate_offset(a, b, 5.0).confidence, 0.5) << trial;
  }
}

TEST(Offset, NoisyCopiesRecoverOffset) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = scene(27.0, 1000 + trial);
    const double d = u(rng);
    const auto a = with_noise_snr(crop(src, 6.0, 15.0), 10.0, 2 * trial + 1);
    const auto b = with_noise_snr(crop(src, 6.0 + d, 15.0), 10.0, 2 * trial + 2);
    const auto e = estimate_offset(clip_envelope(make_clip(a, "a")), clip_envelope(make_clip(b, "b")), 10.0);
    ok += std::abs(e.offset_s - d) <= kHopS + 1e-12;
  }
  EXPECT_GE(ok, 19);
}

TEST(Playback, Schedules) {
  SyncCluster c;
  c.members = {"a", "b", "c"};
  c.member_offsets = {{"a", 0.0}, {"b", 2.0}, {"c", 5.0}};
  const auto s = playback_schedule(c);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_DOUBLE_EQ(s[0].start_delay_s, 5.0);
  EXPECT_DOUBLE_EQ(s[1].start_delay_s, 3.0);
  EXPECT_DOUBLE_EQ(s[2].start_delay_s, 0.0);

  SyncCluster single{"c0", {"x"}, "x", {{"x", 0.0}}, {}};
  EXPECT_DOUBLE_EQ(playback_schedule(single).at(0).start_delay_s, 0.0);
  SyncCluster flat{"c1", {"p", "q"}, "p", {{"p", 1.5}, {"q", 1.5}}, {}};
  for (const auto& e : playback_schedule(flat)) EXPECT_EQ(e.start_delay_s, 0.0);
}

// Overlap simulation: each member skips start_delay_s into its own file, so
// at wall clock w it shows scene time offset + delay + w. Every member must
// show the same instant, and that instant is covered by all recordings.
TEST(Playback, DelaysAlignSceneClock) {
  SyncCluster c;
  c.members = {"a", "b", "c", "d"};
  c.member_offsets = {{"a", 0.0}, {"b", 0.7}, {"c", 3.25}, {"d", 1.0}};
  const auto sched = playback_schedule(c);
  int zero = 0;
  for (const auto& e : sched) {
    const double offset = c.member_offsets[e.video_id];
    EXPECT_DOUBLE_EQ(offset + e.start_delay_s + 10.0, 3.25 + 10.0);
    EXPECT_GE(offset + e.start_delay_s, offset);
    zero += e.start_delay_s == 0.0;
  }
  EXPECT_GE(zero, 1);
}

TEST(Clusters, EmptyAndSingleton) {
  EXPECT_TRUE(build_sync_clusters({}, {}).empty());
  Corpus corpus;
  corpus.add("only", scene(8.0, 3));
  const auto cs = build_sync_clusters(corpus.segments, corpus.envelopes);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].members, std::vector<std::string>{"only"});
  EXPECT_EQ(cs[0].member_offsets.at("only"), 0.0);
  EXPECT_EQ(cs[0].reference, "only");
}

TEST(Clusters, ThreeCopiesAmongDistractors) {
  const auto src = scene(36.0, 42);
  Corpus corpus;
  corpus.add("cam-b", crop(src, 2.0, 30.0));
  corpus.add("cam-a", crop(src, 0.0, 30.0));
  corpus.add("cam-c", crop(src, 5.0, 30.0));
  for (int i = 0; i < 5; ++i) corpus.add("other-" + std::to_string(i), scene(20.0, 500 + i));
  const auto cs = build_sync_clusters(corpus.segments, corpus.envelopes);
  const auto& c = cluster_of(cs, "cam-a");
  EXPECT_EQ(c.members, (std::vector<std::string>{"cam-a", "cam-b", "cam-c"}));
  EXPECT_EQ(c.reference, "cam-a");
  EXPECT_NEAR(c.member_offsets.at("cam-a"), 0.0, kHopS);
  EXPECT_NEAR(c.member_offsets.at("cam-b"), 2.0, kHopS);
  EXPECT_NEAR(c.member_offsets.at("cam-c"), 5.0, kHopS);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(cluster_of(cs, "other-" + std::to_string(i)).members.size(), 1u);
  }
  EXPECT_EQ(cs.size(), 6u);
}

TEST(Clusters, TwoScenesStayApart) {
  const auto s1 = scene(30.0, 7), s2 = scene(30.0, 8);
  Corpus corpus;
  corpus.add("s1-x", crop(s1, 0.0, 24.0));
  corpus.add("s1-y", crop(s1, 3.0, 24.0));
  corpus.add("s2-x", crop(s2, 1.0, 24.0));
  corpus.add("s2-y", crop(s2, 4.5, 24.0));
  const auto cs = build_sync_clusters(corpus.segments, corpus.envelopes);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].members, (std::vector<std::string>{"s1-x", "s1-y"}));
  EXPECT_EQ(cs[1].members, (std::vector<std::string>{"s2-x", "s2-y"}));
  for (const auto& c : cs) {
    for (const auto& e : c.edges) EXPECT_EQ(e.video_a.substr(0, 2), e.video_b.substr(0, 2));
  }
  EXPECT_NEAR(cs[0].member_offsets.at("s1-y"), 3.0, kHopS);
  EXPECT_NEAR(cs[1].member_offsets.at("s2-y"), 3.5, kHopS);
}

TEST(Clusters, MembershipSurvivesRelabeling) {
  const auto src = scene(30.0, 9);
  const std::vector<std::pair<double, std::uint32_t>> plan = {{0.0, 0}, {1.5, 0}, {4.0, 0}, {0.0, 61}, {0.0, 62}};
  const auto run = [&](const std::vector<std::string>& names) {
    Corpus corpus;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto& [at, seed] = plan[i];
      corpus.add(names[i], seed == 0 ? crop(src, at, 24.0) : scene(24.0, seed));
    }
    std::map<std::string, std::size_t> cluster_size;
    for (const auto& c : build_sync_clusters(corpus.segments, corpus.envelopes)) {
      for (const auto& m : c.members) cluster_size[m] = c.members.size();
    }
    std::vector<std::size_t> by_slot;
    for (const auto& n : names) by_slot.push_back(cluster_size.at(n));
    return by_slot;
  };
  EXPECT_EQ(run({"a", "b", "c", "d", "e"}), run({"zz", "m", "b0", "a1", "q"}));
}

TEST(Reconcile, LeastSquaresBeatsPathSums) {
  std::mt19937 rng(11);
  std::normal_distribution<double> noise(0.0, 0.03);
  for (int graph = 0; graph < 20; ++graph) {
    const std::vector<std::string> members = {"a", "b", "c", "d", "e"};
    std::map<std::string, double> truth;
    for (const auto& m : members) truth[m] = std::uniform_real_distribution<double>(0, 6)(rng);
    std::vector<OffsetEstimate> edges;
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        if ((i + j + graph) % 3 == 0 && j != i + 1) continue;
        OffsetEstimate e;
        e.video_a = members[i];
        e.video_b = members[j];
        e.offset_s = truth[members[j]] - truth[members[i]] + noise(rng);
        edges.push_back(e);
      }
    }
    const auto ls = detail::reconcile_offsets(members, edges);
    const auto paths = detail::path_offsets(members, edges);
    EXPECT_LE(detail::edge_residual(ls, edges), detail::edge_residual(paths, edges) + 1e-12);
    // triangle closure holds exactly for node potentials
    EXPECT_NEAR((ls.at("b") - ls.at("a")) + (ls.at("c") - ls.at("b")) - (ls.at("c") - ls.at("a")), 0.0, 1e-12);
  }
}

TEST(Reconcile, ConsistentGraphIsExact) {
  const std::vector<std::string> members = {"a", "b", "c"};
  std::vector<OffsetEstimate> edges(3);
  edges[0].video_a = "a", edges[0].video_b = "b", edges[0].offset_s = 2.0;
  edges[1].video_a = "b", edges[1].video_b = "c", edges[1].offset_s = 3.0;
  edges[2].video_a = "a", edges[2].video_b = "c", edges[2].offset_s = 5.0;
  const auto ls = detail::reconcile_offsets(members, edges);
  EXPECT_NEAR(ls.at("b"), 2.0, 1e-12);
  EXPECT_NEAR(ls.at("c"), 5.0, 1e-12);
}
