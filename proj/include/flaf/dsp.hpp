#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <memory>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "flaf/fft.hpp"
#include "flaf/matrix.hpp"
#include "flaf/media_io.hpp"

namespace flaf {

inline constexpr std::size_t kFftWindow = 2048;
inline constexpr std::size_t kHop = 1024;
inline constexpr std::size_t kMelBands = 80;
inline constexpr std::size_t kSpectrumBins = kFftWindow / 2 + 1;
inline constexpr double kFrameHopSeconds = static_cast<double>(kHop) / kCanonicalRate;
inline constexpr double kFrameRate = static_cast<double>(kCanonicalRate) / kHop;
inline constexpr double kDbFloorEpsilon = 1e-10;

// Whole clips are framed pad-to-cover (ceil(n / hop) frames, zero tail).
// Segment features use only frames that fit entirely inside the segment.
enum class FramePadding { kPadToCover, kNoPad };

inline std::size_t frame_count(std::size_t n_samples, std::size_t window, std::size_t hop,
                               FramePadding padding) {
  if (padding == FramePadding::kPadToCover) return (n_samples + hop - 1) / hop;
  if (n_samples < window) return 0;
  return (n_samples - window) / hop + 1;
}

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

inline const FftPlan& shared_fft_plan(std::size_t n) {
  static const FftPlan p512(512);
  static const FftPlan p2048(2048);
  if (n == 512) return p512;
  if (n == 2048) return p2048;
  thread_local std::vector<std::unique_ptr<FftPlan>> others;
  for (const auto& p : others) {
    if (p->size() == n) return *p;
  }
  others.push_back(std::make_unique<FftPlan>(n));
  return *others.back();
}

// Extracts frame `index` (Hann-windowed, zero-padded beyond the signal end).
inline void windowed_frame(std::span<const double> samples, std::size_t index, std::size_t window,
                           std::size_t hop, std::span<const double> hann,
                           std::span<std::complex<double>> out) {
  const std::size_t start = index * hop;
  for (std::size_t i = 0; i < window; ++i) {
    const std::size_t at = start + i;
    out[i] = at < samples.size() ? samples[at] * hann[i] : 0.0;
  }
}

// |STFT| with a Hann window; rows are frames, columns bins 0..window/2.
inline Matrix stft_magnitude(std::span<const double> samples, std::size_t window = kFftWindow,
                             std::size_t hop = kHop,
                             FramePadding padding = FramePadding::kPadToCover) {
  const std::size_t frames = frame_count(samples.size(), window, hop, padding);
  const std::size_t bins = window / 2 + 1;
  Matrix mag(frames, bins);
  const auto& plan = shared_fft_plan(window);
  const auto hann = hann_window(window);
  std::vector<std::complex<double>> buf(window);
  for (std::size_t t = 0; t < frames; ++t) {
    windowed_frame(samples, t, window, hop, hann, buf);
    plan.forward(buf);
    auto row = mag.row(t);
    for (std::size_t k = 0; k < bins; ++k) row[k] = std::abs(buf[k]);
  }
  return mag;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular HTK-mel filterbank spanning 0 .. sr/2. Each row is scaled so its
// largest weight is exactly 1.
class MelFilterbank {
 public:
  MelFilterbank(std::size_t n_fft = kFftWindow, double sample_rate = kCanonicalRate,
                std::size_t bands = kMelBands)
      : weights_(bands, n_fft / 2 + 1), first_(bands), last_(bands), centers_(bands) {
    const std::size_t bins = n_fft / 2 + 1;
    const double top = hz_to_mel(sample_rate / 2.0);
    const double step = top / static_cast<double>(bands + 1);
    for (std::size_t b = 0; b < bands; ++b) {
      const double lo = mel_to_hz(step * static_cast<double>(b));
      const double center = mel_to_hz(step * static_cast<double>(b + 1));
      const double hi = mel_to_hz(step * static_cast<double>(b + 2));
      centers_[b] = center;
      double peak = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
        double w = 0.0;
        if (f > lo && f <= center) {
          w = (f - lo) / (center - lo);
        } else if (f > center && f < hi) {
          w = (hi - f) / (hi - center);
        }
        weights_(b, k) = w;
        peak = std::max(peak, w);
      }
      first_[b] = bins;
      last_[b] = 0;
      for (std::size_t k = 0; k < bins; ++k) {
        if (weights_(b, k) > 0.0) {
          weights_(b, k) /= peak;
          first_[b] = std::min(first_[b], k);
          last_[b] = k;
        }
      }
    }
  }

  const Matrix& weights() const noexcept { return weights_; }
  std::size_t bands() const noexcept { return weights_.rows(); }
  std::span<const double> centers_hz() const noexcept { return centers_; }

  // Mel-band power for one frame of squared magnitudes.
  void apply(std::span<const double> power, std::span<double> out) const {
    for (std::size_t b = 0; b < weights_.rows(); ++b) {
      double acc = 0.0;
      for (std::size_t k = first_[b]; k <= last_[b]; ++k) acc += weights_(b, k) * power[k];
      out[b] = acc;
    }
  }

 private:
  Matrix weights_;
  std::vector<std::size_t> first_;
  std::vector<std::size_t> last_;
  std::vector<double> centers_;
};

inline const MelFilterbank& default_mel_filterbank() {
  static const MelFilterbank bank;
  return bank;
}

struct MelSpectrogram {
  Matrix values;  // n_frames x 80, dB
  double frame_hop_s = kFrameHopSeconds;

  std::size_t n_frames() const noexcept { return values.rows(); }
  std::size_t n_bands() const noexcept { return values.cols(); }
};

enum class DbReference {
  kClipMax,   // shift so the loudest cell is 0 dB
  kAbsolute,  // raw 10*log10(power + eps)
};

inline MelSpectrogram mel_from_magnitude(const Matrix& magnitude,
                                         DbReference reference = DbReference::kClipMax) {
  const auto& bank = default_mel_filterbank();
  MelSpectrogram mel;
  mel.values = Matrix(magnitude.rows(), bank.bands());
  std::vector<double> power(magnitude.cols());
  for (std::size_t t = 0; t < magnitude.rows(); ++t) {
    auto row = magnitude.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) power[k] = row[k] * row[k];
    auto out = mel.values.row(t);
    bank.apply(power, out);
    for (double& v : out) v = 10.0 * std::log10(v + kDbFloorEpsilon);
  }
  if (reference == DbReference::kClipMax && !mel.values.empty()) {
    const double peak = *std::max_element(mel.values.data().begin(), mel.values.data().end());
    for (double& v : mel.values.data()) v -= peak;
  }
  return mel;
}

// Log-mel spectrogram (80 bands, 2048/1024 STFT).
inline MelSpectrogram mel_spectrogram_db(std::span<const double> samples,
                                         FramePadding padding = FramePadding::kPadToCover,
                                         DbReference reference = DbReference::kClipMax) {
  return mel_from_magnitude(stft_magnitude(samples, kFftWindow, kHop, padding), reference);
}

// Published dimensions of the learned event detector's input and embedding
// stages. Nothing here is executed; a learned detector plugged in later must
// conform to these shapes.
struct AedArchitectureSpec {
  std::size_t input_samples = 437588;
  double input_duration_s = 9.92;
  int sample_rate = kCanonicalRate;
  std::size_t mel_bands = 80;
  std::size_t fft_window = 2048;
  std::size_t hop = 1024;
  std::size_t n_frames = 428;
  std::size_t conv_filters = 240;
  std::size_t conv_kernel_time = 30;
  std::size_t conv_kernel_freq = 1;
  std::size_t embedding_dim = 240;
  std::size_t gru_layers = 3;
  bool gru_bidirectional = true;
  std::size_t n_outputs = 9;
  std::string output_activation = "sigmoid";
  std::string attention = "sigmoid-per-frame";
  std::vector<std::string> labels;
};

struct ShapeCheck {
  std::string field;
  std::string expected;
  std::string actual;
  bool pass = false;
};

struct ShapeReport {
  std::vector<ShapeCheck> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const ShapeCheck& c) { return c.pass; });
  }
  const ShapeCheck* find(std::string_view field) const {
    for (const auto& c : checks) {
      if (c.field == field) return &c;
    }
    return nullptr;
  }
};

// Recomputes every derived dimension and compares against the published
// architecture. Failures are reported, never thrown.
inline ShapeReport validate_aed_shapes(const AedArchitectureSpec& spec) {
  const AedArchitectureSpec published;
  ShapeReport report;
  auto check = [&](std::string field, auto expected, auto actual) {
    ShapeCheck c;
    c.field = std::move(field);
    if constexpr (std::is_convertible_v<decltype(expected), std::string>) {
      c.expected = expected;
      c.actual = actual;
    } else {
      c.expected = std::to_string(expected);
      c.actual = std::to_string(actual);
    }
    c.pass = expected == actual;
    report.checks.push_back(std::move(c));
  };

  check("sample_rate", published.sample_rate, spec.sample_rate);
  check("input_samples", published.input_samples, spec.input_samples);
  {
    // duration is published to two decimals
    const double derived = spec.sample_rate > 0
                               ? static_cast<double>(spec.input_samples) / spec.sample_rate
                               : 0.0;
    ShapeCheck c{"input_duration_s", "9.92", std::to_string(spec.input_duration_s), false};
    c.pass = std::abs(spec.input_duration_s - published.input_duration_s) < 1e-9 &&
             std::abs(derived - spec.input_duration_s) < 0.005;
    report.checks.push_back(c);
  }
  check("mel_bands", published.mel_bands, spec.mel_bands);
  check("fft_window", published.fft_window, spec.fft_window);
  check("hop", published.hop, spec.hop);
  {
    const std::size_t derived = spec.hop > 0 ? (spec.input_samples + spec.hop - 1) / spec.hop : 0;
    check("n_frames", published.n_frames, derived);
    check("n_frames_declared", derived, spec.n_frames);
  }
  check("conv_filters", published.conv_filters, spec.conv_filters);
  check("conv_kernel",
        std::to_string(published.conv_kernel_time) + "x" +
            std::to_string(published.conv_kernel_freq),
        std::to_string(spec.conv_kernel_time) + "x" + std::to_string(spec.conv_kernel_freq));
  check("embedding_dim", spec.conv_filters, spec.embedding_dim);
  check("embedding_shape",
        std::to_string(published.n_frames) + "x" + std::to_string(published.embedding_dim),
        std::to_string(spec.n_frames) + "x" + std::to_string(spec.embedding_dim));
  check("gru_layers", published.gru_layers, spec.gru_layers);
  check("gru_bidirectional", std::string("true"),
        std::string(spec.gru_bidirectional ? "true" : "false"));
  check("n_outputs", published.n_outputs, spec.n_outputs);
  check("output_activation", published.output_activation, spec.output_activation);
  check("attention", published.attention, spec.attention);
  if (!spec.labels.empty()) check("label_arity", spec.n_outputs, spec.labels.size());
  return report;
}

}  // namespace flaf
