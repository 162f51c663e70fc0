#include <gtest/gtest.h>

#include <cmath>

#include "flaf/events.hpp"
#include "test_support.hpp"

using namespace flaf;
using namespace flaf::testing;

namespace {

std::vector<EventDetection> of_label(const std::vector<EventDetection>& events, const std::string& label) {
  std::vector<EventDetection> out;
  for (const auto& e : events) {
    if (e.label == label) out.push_back(e);
  }
  return out;
}

std::vector<double> prepend_silence(std::vector<double> s, double seconds) {
  std::vector<double> out(static_cast<std::size_t>(std::llround(seconds * kCanonicalRate)), 0.0);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

class MockDetector : public Detector {
 public:
  explicit MockDetector(std::vector<std::string> labels) {
    desc_ = {"mock-1", std::move(labels), 0.5, "0"};
  }
  const DetectorDescriptor& descriptor() const override { return desc_; }
  std::vector<EventDetection> detect(const AudioClip&) const override {
    return {{"", 1.0, 2.5, "Scream", 0.8, ""}, {"", 0.0, 0.5, "Horn", 0.3, ""}};
  }

 private:
  DetectorDescriptor desc_;
};

}  // namespace

TEST(Events, DefaultTaxonomyHasNineLabels) {
  const auto t = Taxonomy::defaults();
  EXPECT_EQ(t.labels.size(), 9u);
  EXPECT_NO_THROW(t.validate());
  EXPECT_THROW((Taxonomy{{"a", "b"}}.validate()), Error);
  auto dup = t;
  dup.labels.back() = dup.labels.front();
  EXPECT_THROW(dup.validate(), Error);
}

TEST(Events, SilenceYieldsNothing) {
  const auto clip = make_clip(std::vector<double>(kCanonicalRate * 4, 0.0));
  EXPECT_TRUE(detect_events_baseline(clip).empty());
  for (const auto& label : Taxonomy::defaults().labels) {
    for (const auto& pt : probability_curve(clip, label)) EXPECT_LT(pt.probability, 0.05) << label;
  }
}

TEST(Events, BurstOverNoiseIsOneGunshot) {
  for (std::uint32_t seed = 1; seed <= 6; ++seed) {
    const auto clip = make_clip(burst_over_noise(6.0, 3.0, seed));
    const auto shots = of_label(detect_events_baseline(clip), "Gunshot");
    ASSERT_EQ(shots.size(), 1u) << "seed " << seed;
    EXPECT_LE(shots[0].t_start_s, 3.0);
    EXPECT_GE(shots[0].t_end_s, 3.02);
    EXPECT_GE(shots[0].probability, 0.9) << "seed " << seed;
    EXPECT_EQ(shots[0].detector_id, kBaselineDetectorId);
  }
}

TEST(Events, SteadyToneIsNotImpulsive) {
  const auto clip = make_clip(sine(440.0, 5.0, 0.5));
  for (const char* label : {"Gunshot", "Explosion", "Breaking"}) {
    for (const auto& pt : probability_curve(clip, label)) EXPECT_LT(pt.probability, 0.5) << label;
  }
  const auto events = detect_events_baseline(clip);
  EXPECT_TRUE(of_label(events, "Gunshot").empty());
  EXPECT_TRUE(of_label(events, "Explosion").empty());
}

TEST(Events, CurveLengthFollowsWindowing) {
  for (std::size_t n : {44100u, 44101u, 66149u, 66150u, 88200u, 220500u, 342657u}) {
    const auto clip = make_clip(white_noise(n, 0.01, 5));
    const std::size_t expected = (n - 44100) / 22050 + 1;
    const auto curve = probability_curve(clip, "Speech");
    ASSERT_EQ(curve.size(), expected) << n;
    for (std::size_t i = 0; i < curve.size(); ++i) EXPECT_DOUBLE_EQ(curve[i].t_s, 0.5 * i + 0.5);
  }
}

TEST(Events, ImpulseCurvePeaksAtImpulse) {
  for (std::uint32_t seed = 11; seed <= 14; ++seed) {
    const auto clip = make_clip(burst_over_noise(7.0, 3.0, seed));
    const auto curve = probability_curve(clip, "Gunshot");
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
      if (curve[i].probability > curve[best].probability) best = i;
    }
    EXPECT_GE(curve[best].t_s, 2.5);
    EXPECT_LE(curve[best].t_s, 3.5);
  }
}

TEST(Events, TooShortClipRejected) {
  const auto clip = make_clip(std::vector<double>(44099, 0.0));
  try {
    detect_events_baseline(clip);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooShort);
  }
  EXPECT_THROW(probability_curve(clip, "Gunshot"), Error);
  EXPECT_THROW(probability_curve(make_clip(std::vector<double>(44100, 0.0)), "Nope"), Error);
}

TEST(Events, DeterministicAndBounded) {
  for (std::uint32_t seed : {3u, 8u, 21u}) {
    const auto clip = make_clip(scene(9.0, seed));
    const auto a = analyze_baseline(clip);
    const auto events = detect_events_baseline(clip);
    EXPECT_EQ(events, detect_events_baseline(clip));
    for (const auto& [label, probs] : a.probabilities) {
      for (double p : probs) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
    }
    for (const auto& label : Taxonomy::defaults().labels) {
      const auto same = of_label(events, label);
      for (std::size_t i = 0; i < same.size(); ++i) {
        EXPECT_LT(same[i].t_start_s, same[i].t_end_s);
        if (i > 0) { EXPECT_GE(same[i].t_start_s, same[i - 1].t_end_s) << label; }
      }
    }
  }
}

TEST(Events, MergeJoinsAdjacentWindows) {
  const std::vector<double> probs = {0.1, 0.6, 0.9, 0.55, 0.2, 0.7, 0.1, 0.8};
  const auto ev = merge_windows("v", "Horn", probs, 4.2, "d");
  ASSERT_EQ(ev.size(), 3u);
  EXPECT_DOUBLE_EQ(ev[0].t_start_s, 0.5);
  EXPECT_DOUBLE_EQ(ev[0].t_end_s, 2.5);
  EXPECT_DOUBLE_EQ(ev[0].probability, 0.9);
  EXPECT_DOUBLE_EQ(ev[1].t_start_s, 2.5);
  EXPECT_DOUBLE_EQ(ev[1].t_end_s, 3.5);
  EXPECT_DOUBLE_EQ(ev[2].t_end_s, 4.2);
}

TEST(Events, TimeShiftMovesBoundaries) {
  const auto base = burst_over_noise(6.0, 2.5, 77);
  const auto ref = of_label(detect_events_baseline(make_clip(base)), "Gunshot");
  ASSERT_EQ(ref.size(), 1u);
  for (double delta : {0.37, 1.0, 1.5, 2.26}) {
    const auto moved = of_label(detect_events_baseline(make_clip(prepend_silence(base, delta))), "Gunshot");
    ASSERT_EQ(moved.size(), 1u) << delta;
    EXPECT_NEAR(moved[0].t_start_s, ref[0].t_start_s + delta, 0.5 + 1e-9) << delta;
    EXPECT_NEAR(moved[0].t_end_s, ref[0].t_end_s + delta, 0.5 + 1e-9) << delta;
  }
}

TEST(Events, TonalFixturesReachTheirLabels) {
  const auto top = [](const std::vector<double>& s, const std::string& label) {
    double best = 0.0;
    for (const auto& pt : probability_curve(make_clip(s), label)) best = std::max(best, pt.probability);
    return best;
  };
  EXPECT_GT(top(gated_tone(3000.0, 8.0, 1.0, 0.5), "Fire_alarm"), 0.5);
  EXPECT_LT(top(gated_tone(3000.0, 8.0, 1.0, 0.5), "Alarm"), 0.5);
  EXPECT_GT(top(gated_tone(800.0, 8.0, 0.6, 0.5), "Alarm"), 0.5);
  EXPECT_GT(top(siren(600.0, 1200.0, 0.5, 10.0), "Emergency_vehicle"), 0.5);
  EXPECT_LT(top(sine(440.0, 5.0, 0.5), "Emergency_vehicle"), 0.5);
  auto horn = white_noise(6 * kCanonicalRate, 0.001, 3);
  add_in_place(horn, sine(400.0, 0.8, 0.5), 2 * kCanonicalRate);
  EXPECT_GT(top(horn, "Horn"), 0.5);
  EXPECT_LT(top(horn, "Explosion"), 0.5);
}

TEST(Registry, BaselineDelegates) {
  DetectorRegistry reg;
  auto clip = make_clip(burst_over_noise(5.0, 2.0, 4), "vid-7");
  const auto direct = detect_events_baseline(clip);
  const auto via = reg.run(kBaselineDetectorId, clip);
  EXPECT_EQ(direct, via);
  const auto desc = reg.find(kBaselineDetectorId)->descriptor();
  EXPECT_EQ(run_detector(reg, desc, clip), direct);
  for (const auto& e : via) EXPECT_EQ(e.video_id, "vid-7");
}

TEST(Registry, UnknownDetector) {
  DetectorRegistry reg;
  try {
    reg.run("crnn-v9", make_clip(std::vector<double>(44100, 0.0)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownDetector);
  }
}

TEST(Registry, MockPassThroughIsTagged) {
  DetectorRegistry reg;
  reg.add(std::make_shared<MockDetector>(Taxonomy::defaults().labels));
  const auto ev = reg.run("mock-1", make_clip(std::vector<double>(44100, 0.0), "v1"));
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].label, "Horn");
  EXPECT_EQ(ev[1].label, "Scream");
  EXPECT_DOUBLE_EQ(ev[1].probability, 0.8);
  for (const auto& e : ev) {
    EXPECT_EQ(e.detector_id, "mock-1");
    EXPECT_EQ(e.video_id, "v1");
  }
  EXPECT_THROW(reg.add(std::make_shared<MockDetector>(std::vector<std::string>{"Gunshot"})), Error);
}

TEST(Registry, CustomTaxonomy) {
  auto tax = Taxonomy::defaults();
  tax.labels[2] = "Chant";
  DetectorRegistry reg(tax);
  const auto desc = reg.find(kBaselineDetectorId)->descriptor();
  EXPECT_EQ(desc.labels, tax.labels);
  const auto curve = probability_curve(make_clip(white_noise(88200, 0.1, 2)), "Chant", tax);
  for (const auto& pt : curve) EXPECT_EQ(pt.probability, 0.0);
}

TEST(Registry, ExternalPlugin) {
  DetectorRegistry reg;
  const std::string script = std::string(FLAF_TEST_TOOLS_DIR) + "/mock_detector.py";
  reg.add(std::make_shared<ExternalDetector>(
      DetectorDescriptor{"ext-1", Taxonomy::defaults().labels, 0.5, "0"},
      std::vector<std::string>{"python3", script}));
  const auto clip = make_clip(white_noise(3 * kCanonicalRate + 441, 0.1, 9), "v9");
  const auto ev = reg.run("ext-1", clip);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].label, "Speech");
  EXPECT_NEAR(ev[0].t_end_s, 3.01, 1e-9);
  EXPECT_EQ(ev[0].detector_id, "ext-1");
  EXPECT_EQ(ev[1].label, "Horn");

  reg.add(std::make_shared<ExternalDetector>(
      DetectorDescriptor{"ext-bad", Taxonomy::defaults().labels, 0.5, "0"},
      std::vector<std::string>{"false"}));
  EXPECT_THROW(reg.run("ext-bad", clip), Error);
}
