#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flaf/dsp.hpp"
#include "flaf/error.hpp"
#include "flaf/fft.hpp"
#include "flaf/matrix.hpp"
#include "flaf/media_io.hpp"

namespace flaf {

inline constexpr const char* kFeatureVersion = "FLAF1";
inline constexpr std::size_t kReducedBands = 24;
inline constexpr std::size_t kSsdStats = 7;
inline constexpr std::size_t kSsdDims = kReducedBands * kSsdStats;  // 168
inline constexpr std::size_t kRpBins = 60;
inline constexpr std::size_t kRpDims = kReducedBands * kRpBins;  // 1440
inline constexpr double kRpMinHz = 0.17;
inline constexpr double kRpMaxHz = 10.0;
inline constexpr std::size_t kRpFftSize = 512;
inline constexpr std::size_t kMinSsdFrames = 43;
inline constexpr std::size_t kMinRpFrames = 128;

// Statistic order inside an SsdVector; each statistic is one unit group of
// 24 band values.
enum class SsdStat { kMean, kMedian, kVariance, kSkewness, kKurtosis, kMin, kMax };

inline constexpr std::array<const char*, kSsdStats> kSsdStatNames = {
    "mean", "median", "variance", "skewness", "kurtosis", "min", "max"};

// Mel band -> reduced band partition: 8 groups of 4 followed by 16 groups of 3.
inline constexpr std::array<std::size_t, kReducedBands> kBandGroupSizes = {
    4, 4, 4, 4, 4, 4, 4, 4, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3};

inline constexpr std::array<std::size_t, kMelBands> make_band_map() {
  std::array<std::size_t, kMelBands> map{};
  std::size_t mel = 0;
  for (std::size_t g = 0; g < kReducedBands; ++g) {
    for (std::size_t i = 0; i < kBandGroupSizes[g]; ++i) map[mel++] = g;
  }
  return map;
}

inline constexpr std::array<std::size_t, kMelBands> kMelToReducedBand = make_band_map();

struct SsdVector {
  std::vector<double> values = std::vector<double>(kSsdDims, 0.0);

  double at(SsdStat stat, std::size_t band) const {
    return values[static_cast<std::size_t>(stat) * kReducedBands + band];
  }
  std::span<const double> group(std::size_t stat) const {
    return std::span<const double>(values).subspan(stat * kReducedBands, kReducedBands);
  }
  friend bool operator==(const SsdVector&, const SsdVector&) = default;
};

// 24 bands x 60 modulation bins, row-major by band.
struct RpVector {
  std::vector<double> values = std::vector<double>(kRpDims, 0.0);

  double at(std::size_t band, std::size_t bin) const { return values[band * kRpBins + bin]; }
  friend bool operator==(const RpVector&, const RpVector&) = default;
};

struct SegmentFeatures {
  SegmentRef segment;
  SsdVector ssd;
  RpVector rp;
  std::string feature_version = kFeatureVersion;

  friend bool operator==(const SegmentFeatures&, const SegmentFeatures&) = default;
};

struct OnsetEnvelope {
  std::string video_id;
  double rate = kFrameRate;
  std::vector<double> values;

  double duration_s() const { return static_cast<double>(values.size()) / rate; }
  friend bool operator==(const OnsetEnvelope&, const OnsetEnvelope&) = default;
};

inline Matrix reduce_bands(const MelSpectrogram& mel) {
  if (mel.n_bands() != kMelBands) {
    throw Error(ErrorCode::kDimensionMismatch, "reduce_bands expects 80 mel bands");
  }
  Matrix out(mel.n_frames(), kReducedBands);
  for (std::size_t t = 0; t < mel.n_frames(); ++t) {
    auto in = mel.values.row(t);
    auto row = out.row(t);
    for (std::size_t b = 0; b < kMelBands; ++b) row[kMelToReducedBand[b]] += in[b];
    for (std::size_t g = 0; g < kReducedBands; ++g) {
      row[g] /= static_cast<double>(kBandGroupSizes[g]);
    }
  }
  return out;
}

namespace detail {

inline SsdVector ssd_unchecked(const Matrix& bands) {
  SsdVector ssd;
  const std::size_t n = bands.rows();
  std::vector<double> column(n);
  auto put = [&](SsdStat stat, std::size_t band, double v) {
    ssd.values[static_cast<std::size_t>(stat) * kReducedBands + band] = v;
  };
  for (std::size_t b = 0; b < kReducedBands; ++b) {
    for (std::size_t t = 0; t < n; ++t) column[t] = bands(t, b);
    const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
    const double min = *lo;
    const double max = *hi;
    const double mean = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(n);

    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    if (max > min) {
      for (double v : column) {
        const double d = v - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
      }
    }
    double variance = 0.0, skewness = 0.0, kurtosis = 0.0;
    if (m2 > 0.0) {
      const double nn = static_cast<double>(n);
      variance = n > 1 ? m2 / (nn - 1.0) : 0.0;
      const double pm2 = m2 / nn;
      skewness = (m3 / nn) / std::pow(pm2, 1.5);
      kurtosis = (m4 / nn) / (pm2 * pm2) - 3.0;
    }

    std::sort(column.begin(), column.end());
    const double median = n % 2 == 1 ? column[n / 2]
                                     : 0.5 * (column[n / 2 - 1] + column[n / 2]);

    put(SsdStat::kMean, b, max > min ? mean : min);
    put(SsdStat::kMedian, b, median);
    put(SsdStat::kVariance, b, variance);
    put(SsdStat::kSkewness, b, skewness);
    put(SsdStat::kKurtosis, b, kurtosis);
    put(SsdStat::kMin, b, min);
    put(SsdStat::kMax, b, max);
  }
  return ssd;
}

// Symmetric Hann, so that time reversal of the envelope only conjugates the
// spectrum.
inline std::vector<double> symmetric_hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n - 1));
  }
  return w;
}

inline std::array<double, kRpBins> modulation_frequencies() {
  std::array<double, kRpBins> f{};
  for (std::size_t j = 0; j < kRpBins; ++j) {
    f[j] = kRpMinHz + static_cast<double>(j) * (kRpMaxHz - kRpMinHz) /
                          static_cast<double>(kRpBins - 1);
  }
  return f;
}

inline RpVector rp_unchecked(const Matrix& bands, double frame_rate) {
  RpVector rp;
  const std::size_t n = bands.rows();
  const std::size_t nfft = std::max(kRpFftSize, next_pow2(n));
  const auto& plan = shared_fft_plan(nfft);
  const auto window = symmetric_hann(n);
  const auto mod_hz = modulation_frequencies();
  std::array<std::size_t, kRpBins> bin{};
  for (std::size_t j = 0; j < kRpBins; ++j) {
    bin[j] = static_cast<std::size_t>(
        std::lround(mod_hz[j] * static_cast<double>(nfft) / frame_rate));
    bin[j] = std::min(bin[j], nfft / 2);
  }
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t b = 0; b < kReducedBands; ++b) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += bands(t, b);
    mean /= static_cast<double>(n);
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t t = 0; t < n; ++t) buf[t] = (bands(t, b) - mean) * window[t];
    plan.forward(buf);
    for (std::size_t j = 0; j < kRpBins; ++j) {
      rp.values[b * kRpBins + j] = std::abs(buf[bin[j]]);
    }
  }
  return rp;
}

}  // namespace detail

// Seven statistics of every reduced band over time. Variance uses n-1;
// skewness and (excess) kurtosis are standardised central moments and are 0
// for constant bands.
inline SsdVector compute_ssd(const Matrix& bands) {
  if (bands.cols() != kReducedBands) {
    throw Error(ErrorCode::kDimensionMismatch, "compute_ssd expects 24 bands");
  }
  if (bands.rows() < kMinSsdFrames) {
    throw Error(ErrorCode::kTooShort, "SSD needs at least 43 frames");
  }
  return detail::ssd_unchecked(bands);
}

// Modulation magnitude spectrum of each band envelope, sampled at 60 bins
// between 0.17 and 10 Hz (nearest FFT bin).
inline RpVector compute_rp(const Matrix& bands, double frame_rate = kFrameRate) {
  if (bands.cols() != kReducedBands) {
    throw Error(ErrorCode::kDimensionMismatch, "compute_rp expects 24 bands");
  }
  if (bands.rows() < kMinRpFrames) {
    throw Error(ErrorCode::kTooShort, "rhythm patterns need at least 128 frames");
  }
  return detail::rp_unchecked(bands, frame_rate);
}

// Features of one segment of a canonical clip. The segment's own log-mel
// (no-pad framing, normalised to its own maximum) feeds both descriptors;
// segments shorter than the SSD/RP frame minimums (only possible for clips of
// 1-3 s) still get features computed from the frames available.
inline SegmentFeatures segment_features(std::span<const double> samples, const SegmentRef& ref) {
  const auto slice = samples.subspan(ref.start_sample, ref.len_samples);
  const auto mel = mel_spectrogram_db(slice, FramePadding::kNoPad, DbReference::kClipMax);
  const auto bands = reduce_bands(mel);
  SegmentFeatures f;
  f.segment = ref;
  if (bands.rows() == 0) {
    throw Error(ErrorCode::kTooShort, "segment shorter than one STFT window");
  }
  f.ssd = detail::ssd_unchecked(bands);
  f.rp = detail::rp_unchecked(bands, kFrameRate);
  return f;
}

inline std::vector<SegmentFeatures> extract_segment_features(const AudioClip& clip) {
  const auto refs = slice_segments(clip);
  std::vector<SegmentFeatures> out;
  out.reserve(refs.size());
  for (const auto& ref : refs) out.push_back(segment_features(clip.samples, ref));
  return out;
}

// Half-wave rectified spectral flux over the dB mel bands, max-normalised.
inline OnsetEnvelope onset_envelope(const MelSpectrogram& mel, std::string video_id = {}) {
  OnsetEnvelope env;
  env.video_id = std::move(video_id);
  env.rate = 1.0 / mel.frame_hop_s;
  env.values.assign(mel.n_frames(), 0.0);
  for (std::size_t t = 1; t < mel.n_frames(); ++t) {
    auto cur = mel.values.row(t);
    auto prev = mel.values.row(t - 1);
    double flux = 0.0;
    for (std::size_t b = 0; b < cur.size(); ++b) flux += std::max(0.0, cur[b] - prev[b]);
    env.values[t] = flux;
  }
  const double peak =
      env.values.empty() ? 0.0 : *std::max_element(env.values.begin(), env.values.end());
  if (peak > 0.0) {
    for (double& v : env.values) v /= peak;
  }
  return env;
}

inline OnsetEnvelope clip_envelope(const AudioClip& clip) {
  return onset_envelope(mel_spectrogram_db(clip.samples), clip.video_id);
}

}  // namespace flaf
