#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flaf/dsp.hpp"
#include "flaf/error.hpp"
#include "flaf/media_io.hpp"
#include "flaf/subprocess.hpp"

namespace flaf {

inline constexpr const char* kBaselineDetectorId = "baseline-v1";
inline constexpr double kEventWindowSeconds = 1.0;
inline constexpr double kEventHopSeconds = 0.5;
inline constexpr double kEventThreshold = 0.5;
inline constexpr std::size_t kTaxonomySize = 9;

struct Taxonomy {
  std::vector<std::string> labels;

  static Taxonomy defaults() {
    return {{"Gunshot", "Explosion", "Speech", "Scream", "Emergency_vehicle", "Fire_alarm", "Horn",
             "Alarm", "Breaking"}};
  }

  bool contains(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
  }

  void validate() const {
    const std::set<std::string> unique(labels.begin(), labels.end());
    if (labels.size() != kTaxonomySize || unique.size() != labels.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "taxonomy must hold " + std::to_string(kTaxonomySize) + " distinct labels");
    }
  }
};

struct EventDetection {
  std::string video_id;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  std::string label;
  double probability = 0.0;
  std::string detector_id;

  friend bool operator==(const EventDetection&, const EventDetection&) = default;
};

struct DetectorDescriptor {
  std::string detector_id;
  std::vector<std::string> labels;
  double frame_granularity_s = kEventHopSeconds;
  std::string version;
};

struct CurvePoint {
  double t_s = 0.0;  // window centre
  double probability = 0.0;
};

// Everything the rules look at for one 1 s window.
struct WindowFeatures {
  double start_s = 0.0;
  double level_db = -100.0;        // loudest frame
  double rise_db = 0.0;            // max increase over the preceding 150 ms
  double decay_s = 0.0;            // loudest frame to -20 dB below it
  double tonality_db = 0.0;        // peak / median of the window's mean spectrum
  double peak_tonality_db = 0.0;   // same, around the loudest frame only
  double peak_hz = 0.0;
  double centroid_hz = 0.0;
  double peak_centroid_hz = 0.0;   // centroid around the loudest frame
  double mod_depth_db = 0.0;       // std of frame level
  double speech_mod_ratio = 0.0;   // 2-8 Hz share of 0.5-20 Hz level modulation
  double tonal_fraction = 0.0;     // tonal share of active frames, long context
  double tonal_run_s = 0.0;
  double periodicity = 0.0;        // on/off rebound of the level autocorrelation
  double pitch_std_oct = 0.0;
  double pitch_oscillation = 0.0;  // rebound of the pitch-track autocorrelation
  double pitch_jitter_oct = 0.0;   // mean frame-to-frame pitch step
};

namespace detail {

inline double logistic(double x, double centre, double slope) {
  return 1.0 / (1.0 + std::exp(-slope * (x - centre)));
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

inline double ratio_db(double num, double den) {
  return 10.0 * std::log10((num + kDbFloorEpsilon) / (den + kDbFloorEpsilon));
}

// Largest climb r(L) - min_{l<L} r(l) of the normalised autocorrelation over
// lags in [lo, hi]. A steady or single-shot signal decays monotonically and
// scores ~0; a periodic one dips and comes back.
inline double autocorr_rebound(std::span<const double> x, std::size_t lo, std::size_t hi) {
  if (x.size() < 4) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double r0 = 0.0;
  for (double v : x) r0 += (v - mean) * (v - mean);
  if (r0 < 1e-9 * static_cast<double>(x.size())) return 0.0;
  hi = std::min(hi, x.size() / 2 + x.size() / 4);
  double running_min = 1.0, best = 0.0;
  for (std::size_t lag = 1; lag <= hi; ++lag) {
    double r = 0.0;
    for (std::size_t t = lag; t < x.size(); ++t) r += (x[t] - mean) * (x[t - lag] - mean);
    r /= r0;
    if (lag >= lo) best = std::max(best, r - running_min);
    running_min = std::min(running_min, r);
  }
  return best;
}

struct FrameAnalysis {
  std::size_t frames = 0;
  double hop_s = kFrameHopSeconds;
  Matrix power;  // |X|^2 / 512^2, so a full-scale sine peaks at 0 dB
  std::vector<double> level_db;
  std::vector<double> frame_tonality_db;
  std::vector<double> frame_peak_hz;

  double centre_s(std::size_t t) const { return static_cast<double>(t + 1) * hop_s; }
};

inline constexpr std::size_t kToneLo = 2, kToneHi = 1000;

inline FrameAnalysis analyze_frames(std::span<const double> samples) {
  FrameAnalysis fa;
  const Matrix mag = stft_magnitude(samples);
  fa.frames = mag.rows();
  fa.power = Matrix(mag.rows(), mag.cols());
  const double ref = static_cast<double>(kFftWindow) / 4.0;
  fa.level_db.resize(fa.frames);
  fa.frame_tonality_db.resize(fa.frames);
  fa.frame_peak_hz.resize(fa.frames);
  std::vector<double> band;
  for (std::size_t t = 0; t < fa.frames; ++t) {
    double total = 0.0;
    for (std::size_t k = 0; k < mag.cols(); ++k) {
      const double p = (mag(t, k) / ref) * (mag(t, k) / ref);
      fa.power(t, k) = p;
      total += p;
    }
    fa.level_db[t] = 10.0 * std::log10(total + kDbFloorEpsilon);
    // peak against the median of the surrounding octave either side, so a
    // tilted noise floor does not read as tonal
    const auto row = fa.power.row(t);
    const auto peak = static_cast<std::size_t>(
        std::max_element(row.begin() + kToneLo, row.begin() + kToneHi + 1) - row.begin());
    fa.frame_peak_hz[t] = static_cast<double>(peak) * kCanonicalRate / static_cast<double>(kFftWindow);
    band.clear();
    for (std::size_t k = std::max(kToneLo, peak / 2); k <= std::min(kToneHi, peak * 2); ++k) {
      if (k + 3 < peak || k > peak + 3) band.push_back(row[k]);
    }
    fa.frame_tonality_db[t] = ratio_db(row[peak], median_of(band));
  }
  return fa;
}

struct SpectrumSummary {
  double tonality_db = 0.0, peak_hz = 0.0, centroid_hz = 0.0;
};

inline SpectrumSummary summarize_spectrum(const FrameAnalysis& fa, std::size_t t0, std::size_t t1) {
  SpectrumSummary s;
  if (t0 >= t1) return s;
  std::vector<double> mean(fa.power.cols(), 0.0);
  for (std::size_t t = t0; t < t1; ++t) {
    auto row = fa.power.row(t);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
  }
  double num = 0.0, den = 0.0;
  const double bin_hz = kCanonicalRate / static_cast<double>(kFftWindow);
  for (std::size_t k = 1; k < mean.size(); ++k) {
    num += static_cast<double>(k) * bin_hz * mean[k];
    den += mean[k];
  }
  s.centroid_hz = den > 0.0 ? num / den : 0.0;
  std::vector<double> band(mean.begin() + kToneLo, mean.begin() + kToneHi + 1);
  const auto peak = std::max_element(band.begin(), band.end());
  s.peak_hz = static_cast<double>(kToneLo + static_cast<std::size_t>(peak - band.begin())) * bin_hz;
  s.tonality_db = ratio_db(*peak, median_of(band));
  return s;
}

inline constexpr double kTonalFrameDb = 18.0;
inline constexpr double kActiveBelowPeakDb = 25.0;
inline constexpr double kActiveFloorDb = -60.0;
inline constexpr double kLongContextSeconds = 8.0;

inline std::size_t window_count(double duration_s) {
  return static_cast<std::size_t>(std::floor((duration_s - kEventWindowSeconds) / kEventHopSeconds)) + 1;
}

// Frames whose centre lies in [a, b).
inline std::pair<std::size_t, std::size_t> frame_range(const FrameAnalysis& fa, double a, double b) {
  auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(a / fa.hop_s - 1.0 - 1e-9)));
  while (first < fa.frames && fa.centre_s(first) < a) ++first;
  while (first > 0 && fa.centre_s(first - 1) >= a) --first;
  std::size_t last = first;
  while (last < fa.frames && fa.centre_s(last) < b) ++last;
  return {std::min(first, fa.frames), last};
}

inline WindowFeatures window_features(const FrameAnalysis& fa, double start_s) {
  WindowFeatures w;
  w.start_s = start_s;
  const auto [t0, t1] = frame_range(fa, start_s, start_s + kEventWindowSeconds);
  if (t0 >= t1) return w;
  const std::size_t lookback = static_cast<std::size_t>(std::ceil(0.15 / fa.hop_s));

  std::size_t peak = t0;
  for (std::size_t t = t0; t < t1; ++t) {
    if (fa.level_db[t] > fa.level_db[peak]) peak = t;
    if (t > 0) {
      double floor_db = fa.level_db[t - 1];
      for (std::size_t j = 1; j <= lookback && j <= t; ++j) floor_db = std::min(floor_db, fa.level_db[t - j]);
      w.rise_db = std::max(w.rise_db, fa.level_db[t] - floor_db);
    }
  }
  w.level_db = fa.level_db[peak];
  std::size_t end = peak;
  while (end < fa.frames && fa.level_db[end] > w.level_db - 20.0) ++end;
  w.decay_s = static_cast<double>(end - peak) * fa.hop_s;

  const auto whole = summarize_spectrum(fa, t0, t1);
  w.tonality_db = whole.tonality_db;
  w.peak_hz = whole.peak_hz;
  w.centroid_hz = whole.centroid_hz;
  const auto local = summarize_spectrum(fa, peak > 0 ? peak - 1 : 0, std::min(fa.frames, peak + 2));
  w.peak_tonality_db = local.tonality_db;
  w.peak_centroid_hz = local.centroid_hz;

  const std::span<const double> lv(fa.level_db.data() + t0, t1 - t0);
  double mean = 0.0;
  for (double v : lv) mean += v;
  mean /= static_cast<double>(lv.size());
  double var = 0.0;
  for (double v : lv) var += (v - mean) * (v - mean);
  w.mod_depth_db = std::sqrt(var / static_cast<double>(lv.size()));

  {
    constexpr std::size_t n = 64;
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < lv.size() && i < n; ++i) x[i] = lv[i] - mean;
    const auto spec = shared_fft_plan(n).transform_real(x);
    const double df = 1.0 / (fa.hop_s * static_cast<double>(n));
    double band = 0.0, total = 0.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
      const double f = static_cast<double>(k) * df;
      const double e = std::norm(spec[k]);
      if (f >= 0.5 && f <= 20.0) total += e;
      if (f >= 2.0 && f <= 8.0) band += e;
    }
    w.speech_mod_ratio = total > 0.0 ? band / total : 0.0;
  }

  const double centre = start_s + kEventWindowSeconds / 2.0;
  const auto [c0, c1] =
      frame_range(fa, centre - kLongContextSeconds / 2.0, centre + kLongContextSeconds / 2.0);
  double ctx_max = -1e9;
  for (std::size_t t = c0; t < c1; ++t) ctx_max = std::max(ctx_max, fa.level_db[t]);
  const double active_db = std::max(kActiveFloorDb, ctx_max - kActiveBelowPeakDb);
  std::vector<double> clamped, pitch;
  std::size_t active = 0, tonal = 0;
  for (std::size_t t = c0; t < c1; ++t) {
    clamped.push_back(std::max(fa.level_db[t], ctx_max - 60.0));
    if (fa.level_db[t] < active_db) continue;
    ++active;
    if (fa.frame_tonality_db[t] >= kTonalFrameDb) {
      ++tonal;
      pitch.push_back(std::log2(fa.frame_peak_hz[t]));
    }
  }
  w.tonal_fraction = active > 0 ? static_cast<double>(tonal) / static_cast<double>(active) : 0.0;
  const auto lag = [&](double s) { return static_cast<std::size_t>(std::lround(s / fa.hop_s)); };
  w.periodicity = autocorr_rebound(clamped, lag(0.2), lag(2.5));
  if (pitch.size() >= 10) {
    double pm = 0.0;
    for (double p : pitch) pm += p;
    pm /= static_cast<double>(pitch.size());
    double pv = 0.0;
    for (double p : pitch) pv += (p - pm) * (p - pm);
    w.pitch_std_oct = std::sqrt(pv / static_cast<double>(pitch.size()));
    w.pitch_oscillation = autocorr_rebound(pitch, lag(0.5), lag(5.0));
    double steps = 0.0;
    for (std::size_t i = 1; i < pitch.size(); ++i) steps += std::abs(pitch[i] - pitch[i - 1]);
    w.pitch_jitter_oct = steps / static_cast<double>(pitch.size() - 1);
  }

  const auto is_tonal = [&](std::size_t t) {
    return fa.level_db[t] >= active_db && fa.frame_tonality_db[t] >= kTonalFrameDb;
  };
  std::size_t anchor = t1;
  for (std::size_t t = t0; t < t1; ++t) {
    if (is_tonal(t) && (anchor == t1 || fa.level_db[t] > fa.level_db[anchor])) anchor = t;
  }
  if (anchor < t1) {
    std::size_t a = anchor, b = anchor + 1;
    while (a > 0 && is_tonal(a - 1)) --a;
    while (b < fa.frames && is_tonal(b)) ++b;
    w.tonal_run_s = static_cast<double>(b - a) * fa.hop_s;
  }
  return w;
}

using detail::logistic;

inline double rule_probability(const std::string& label, const WindowFeatures& w) {
  const double gate = logistic(w.level_db, -45.0, 0.4);
  const double impulsive = logistic(w.rise_db, 20.0, 0.5);
  const double tonal = logistic(w.tonal_fraction, 0.6, 10.0);
  double p = 0.0;
  const double rhythmic = logistic(w.periodicity, 1.0, -6.0);
  if (label == "Gunshot") {
    p = impulsive * logistic(w.decay_s, 0.3, -25.0) * logistic(w.peak_tonality_db, 20.0, -0.4);
  } else if (label == "Explosion") {
    p = impulsive * logistic(w.decay_s, 0.5, 10.0) * logistic(w.peak_centroid_hz, 1500.0, -0.004) *
        logistic(w.peak_tonality_db, 20.0, -0.4);
  } else if (label == "Breaking") {
    p = impulsive * logistic(w.decay_s, 1.0, -6.0) * logistic(w.peak_tonality_db, 20.0, 0.4) *
        logistic(w.peak_centroid_hz, 3000.0, 0.003) * logistic(w.tonal_run_s, 0.3, -15.0) * rhythmic;
  } else if (label == "Speech") {
    p = logistic(w.speech_mod_ratio, 0.55, 15.0) * logistic(w.mod_depth_db, 5.0, 1.0) *
        logistic(w.centroid_hz, 3500.0, -0.003) * logistic(w.centroid_hz, 150.0, 0.02) * rhythmic;
  } else if (label == "Scream") {
    p = tonal * logistic(w.peak_hz, 700.0, 0.01) * logistic(w.peak_hz, 3500.0, -0.005) *
        logistic(w.level_db, -20.0, 0.4) * logistic(w.tonal_run_s, 0.3, 10.0) * rhythmic *
        logistic(w.pitch_oscillation, 0.4, -8.0) * logistic(w.pitch_std_oct, 0.02, 150.0) *
        logistic(w.pitch_jitter_oct, 0.08, -60.0);
  } else if (label == "Fire_alarm" || label == "Alarm") {
    const double high = logistic(w.peak_hz, 2000.0, 0.004);
    p = tonal * logistic(w.periodicity, 0.5, 8.0) * logistic(w.pitch_std_oct, 0.08, -40.0) *
        (label == "Fire_alarm" ? high : 1.0 - high);
  } else if (label == "Emergency_vehicle") {
    p = tonal * logistic(w.pitch_std_oct, 0.08, 40.0) * logistic(w.pitch_oscillation, 0.4, 8.0) *
        logistic(w.pitch_jitter_oct, 0.08, -60.0);
  } else if (label == "Horn") {
    p = tonal * logistic(w.tonal_run_s, 1.5, -10.0) * logistic(w.tonal_run_s, 0.2, 10.0) *
        logistic(w.pitch_std_oct, 0.06, -60.0) * logistic(w.periodicity, 0.5, -8.0);
  }
  return std::clamp(gate * p, 0.0, 1.0);
}

inline void require_detectable(const AudioClip& clip) {
  if (clip.sample_rate != kCanonicalRate) {
    throw Error(ErrorCode::kInvalidArgument, "event detection expects a canonical 44.1 kHz clip");
  }
  if (clip.samples.size() < static_cast<std::size_t>(kCanonicalRate)) {
    throw Error(ErrorCode::kTooShort, "clip shorter than one event window");
  }
}

}  // namespace detail

struct BaselineAnalysis {
  std::vector<WindowFeatures> windows;
  std::map<std::string, std::vector<double>> probabilities;  // label -> per window
};

inline BaselineAnalysis analyze_baseline(const AudioClip& clip,
                                         const Taxonomy& taxonomy = Taxonomy::defaults()) {
  detail::require_detectable(clip);
  const auto fa = detail::analyze_frames(clip.samples);
  BaselineAnalysis out;
  const std::size_t n = detail::window_count(clip.duration_s());
  out.windows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.windows.push_back(detail::window_features(fa, static_cast<double>(i) * kEventHopSeconds));
  }
  for (const auto& label : taxonomy.labels) {
    auto& curve = out.probabilities[label];
    curve.reserve(n);
    for (const auto& w : out.windows) curve.push_back(detail::rule_probability(label, w));
  }
  return out;
}

// Runs of consecutive windows at or above threshold become one event; the
// event keeps the run's peak probability.
inline std::vector<EventDetection> merge_windows(const std::string& video_id, const std::string& label,
                                                 std::span<const double> probs, double duration_s,
                                                 const std::string& detector_id,
                                                 double threshold = kEventThreshold) {
  std::vector<EventDetection> out;
  for (std::size_t i = 0; i < probs.size();) {
    if (probs[i] < threshold) {
      ++i;
      continue;
    }
    std::size_t j = i;
    double best = probs[i];
    while (j + 1 < probs.size() && probs[j + 1] >= threshold) best = std::max(best, probs[++j]);
    EventDetection e;
    e.video_id = video_id;
    e.label = label;
    e.detector_id = detector_id;
    e.probability = best;
    e.t_start_s = static_cast<double>(i) * kEventHopSeconds;
    e.t_end_s = std::min(duration_s, static_cast<double>(j) * kEventHopSeconds + kEventWindowSeconds);
    out.push_back(std::move(e));
    i = j + 1;
  }
  return out;
}

inline void sort_events(std::vector<EventDetection>& events) {
  std::sort(events.begin(), events.end(), [](const EventDetection& a, const EventDetection& b) {
    if (a.t_start_s != b.t_start_s) return a.t_start_s < b.t_start_s;
    if (a.label != b.label) return a.label < b.label;
    return a.detector_id < b.detector_id;
  });
}

inline std::vector<EventDetection> detect_events_baseline(const AudioClip& clip,
                                                          const Taxonomy& taxonomy = Taxonomy::defaults()) {
  const auto analysis = analyze_baseline(clip, taxonomy);
  std::vector<EventDetection> events;
  for (const auto& label : taxonomy.labels) {
    auto merged = merge_windows(clip.video_id, label, analysis.probabilities.at(label),
                                clip.duration_s(), kBaselineDetectorId);
    events.insert(events.end(), merged.begin(), merged.end());
  }
  sort_events(events);
  return events;
}

inline std::vector<CurvePoint> probability_curve(const AudioClip& clip, const std::string& label,
                                                 const Taxonomy& taxonomy = Taxonomy::defaults()) {
  if (!taxonomy.contains(label)) {
    throw Error(ErrorCode::kInvalidArgument, "label not in taxonomy: " + label);
  }
  Taxonomy one{{label}};
  const auto analysis = analyze_baseline(clip, one);
  const auto& probs = analysis.probabilities.at(label);
  std::vector<CurvePoint> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = {static_cast<double>(i) * kEventHopSeconds + kEventWindowSeconds / 2.0, probs[i]};
  }
  return out;
}

class Detector {
 public:
  virtual ~Detector() = default;
  virtual const DetectorDescriptor& descriptor() const = 0;
  virtual std::vector<EventDetection> detect(const AudioClip& clip) const = 0;
};

class BaselineDetector : public Detector {
 public:
  explicit BaselineDetector(Taxonomy taxonomy = Taxonomy::defaults()) : taxonomy_(std::move(taxonomy)) {
    taxonomy_.validate();
    desc_ = {kBaselineDetectorId, taxonomy_.labels, kEventHopSeconds, "1"};
  }
  const DetectorDescriptor& descriptor() const override { return desc_; }
  std::vector<EventDetection> detect(const AudioClip& clip) const override {
    return detect_events_baseline(clip, taxonomy_);
  }

 private:
  Taxonomy taxonomy_;
  DetectorDescriptor desc_;
};

// Plug-in executable: WAV on stdin, one JSON object per event on stdout.
class ExternalDetector : public Detector {
 public:
  ExternalDetector(DetectorDescriptor desc, std::vector<std::string> command, double timeout_s = 300.0)
      : desc_(std::move(desc)), command_(std::move(command)), timeout_s_(timeout_s) {}

  const DetectorDescriptor& descriptor() const override { return desc_; }

  std::vector<EventDetection> detect(const AudioClip& clip) const override {
    ProcessOptions opts;
    opts.stdin_bytes = encode_wav(clip, WavEncoding::kFloat32);
    opts.timeout_s = timeout_s_;
    const auto res = run_process(command_, opts);
    if (res.timed_out) throw Error(ErrorCode::kIo, "detector " + desc_.detector_id + " timed out");
    if (res.exit_code != 0) {
      throw Error(ErrorCode::kIo, "detector " + desc_.detector_id + " exited with " +
                                      std::to_string(res.exit_code) + ": " + res.stderr_text);
    }
    std::vector<EventDetection> out;
    std::istringstream lines(res.stdout_text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        EventDetection e;
        e.t_start_s = j.at("t_start_s").get<double>();
        e.t_end_s = j.at("t_end_s").get<double>();
        e.label = j.at("label").get<std::string>();
        e.probability = j.at("probability").get<double>();
        out.push_back(std::move(e));
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kInvalidArgument,
                    "detector " + desc_.detector_id + " emitted a malformed line: " + ex.what());
      }
    }
    return out;
  }

 private:
  DetectorDescriptor desc_;
  std::vector<std::string> command_;
  double timeout_s_;
};

class DetectorRegistry {
 public:
  explicit DetectorRegistry(Taxonomy taxonomy = Taxonomy::defaults()) : taxonomy_(std::move(taxonomy)) {
    taxonomy_.validate();
    add(std::make_shared<BaselineDetector>(taxonomy_));
  }

  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }

  void add(std::shared_ptr<const Detector> detector) {
    const auto& d = detector->descriptor();
    const std::set<std::string> want(taxonomy_.labels.begin(), taxonomy_.labels.end());
    const std::set<std::string> got(d.labels.begin(), d.labels.end());
    if (want != got) {
      throw Error(ErrorCode::kInvalidArgument,
                  "detector " + d.detector_id + " label set does not match the taxonomy");
    }
    std::unique_lock lock(mu_);
    detectors_[d.detector_id] = std::move(detector);
  }

  std::shared_ptr<const Detector> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    const auto it = detectors_.find(id);
    if (it == detectors_.end()) throw Error(ErrorCode::kUnknownDetector, "unknown detector: " + id);
    return it->second;
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : detectors_) out.push_back(id);
    return out;
  }

  std::vector<EventDetection> run(const std::string& id, const AudioClip& clip) const {
    const auto det = find(id);
    auto events = det->detect(clip);
    for (auto& e : events) {
      e.video_id = clip.video_id;
      e.detector_id = id;
      if (!(e.t_start_s < e.t_end_s) || !(e.probability >= 0.0 && e.probability <= 1.0) ||
          !taxonomy_.contains(e.label)) {
        throw Error(ErrorCode::kInvalidArgument, "detector " + id + " produced an invalid event");
      }
    }
    sort_events(events);
    return events;
  }

 private:
  Taxonomy taxonomy_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const Detector>> detectors_;
};

inline std::vector<EventDetection> run_detector(const DetectorRegistry& registry,
                                                const DetectorDescriptor& descriptor,
                                                const AudioClip& clip) {
  return registry.run(descriptor.detector_id, clip);
}

}  // namespace flaf
