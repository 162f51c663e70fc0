#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <functional>
#include <random>

#include "flaf/dsp.hpp"
#include "test_support.hpp"

using namespace flaf;
using namespace flaf::testing;

namespace {

// Direct O(N^2) DFT, independent of the FFT plan.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / n;
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

TEST(Stft, PublishedInputLengthGives428Frames) {
  const std::vector<double> samples(437588, 0.0);
  EXPECT_EQ(frame_count(samples.size(), kFftWindow, kHop, FramePadding::kPadToCover), 428u);
  const auto mel = mel_spectrogram_db(white_noise(437588, 0.1, 9));
  EXPECT_EQ(mel.n_frames(), 428u);
  EXPECT_EQ(mel.n_bands(), 80u);
}

TEST(Stft, SilenceGivesZeroMagnitude) {
  const std::vector<double> samples(10000, 0.0);
  const auto mag = stft_magnitude(samples);
  for (double v : mag.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, BinCentredSineLocalisesToBin64) {
  const double freq = 44100.0 * 64.0 / 2048.0;  // 1378.125 Hz
  const auto samples = sine(freq, 1.0, 1.0);
  const auto mag = stft_magnitude(samples);
  const auto hann = hann_window(kFftWindow);
  for (std::size_t t = 1; t + 2 < mag.rows(); ++t) {
    auto row = mag.row(t);
    const auto peak = std::max_element(row.begin(), row.end()) - row.begin();
    ASSERT_EQ(peak, 64);
    // Hann main lobe: the two adjacent bins carry exactly half the peak.
    EXPECT_NEAR(row[63] / row[64], 0.5, 1e-9);
    EXPECT_NEAR(row[65] / row[64], 0.5, 1e-9);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k + 2 <= 64 || k >= 66) {
        EXPECT_GT(row[64] / std::max(row[k], 1e-300), 100.0);
      }
    }
  }
  // One interior frame against a direct DFT of the same windowed samples.
  std::vector<double> frame(kFftWindow);
  for (std::size_t i = 0; i < kFftWindow; ++i) frame[i] = samples[5 * kHop + i] * hann[i];
  const auto dft = naive_dft(frame);
  for (std::size_t k = 0; k < kSpectrumBins; ++k) {
    EXPECT_NEAR(mag(5, k), std::abs(dft[k]), 1e-8);
  }
}

TEST(Stft, ParsevalPerFrame) {
  const auto& plan = shared_fft_plan(kFftWindow);
  const auto hann = hann_window(kFftWindow);
  std::mt19937 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = white_noise(kFftWindow, 0.05 + 0.01 * trial, rng());
    std::vector<std::complex<double>> buf(kFftWindow);
    double time_energy = 0.0;
    for (std::size_t i = 0; i < kFftWindow; ++i) {
      buf[i] = x[i] * hann[i];
      time_energy += std::norm(buf[i]);
    }
    plan.forward(buf);
    double freq_energy = 0.0;
    for (const auto& c : buf) freq_energy += std::norm(c);
    freq_energy /= kFftWindow;
    EXPECT_NEAR(freq_energy / time_energy, 1.0, 1e-6);
  }
}

TEST(Stft, FrameCountIsCeilNOverHop) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 1000000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    EXPECT_EQ(frame_count(n, kFftWindow, kHop, FramePadding::kPadToCover),
              static_cast<std::size_t>(std::ceil(static_cast<double>(n) / kHop)));
  }
  for (std::size_t n : {1u, 1023u, 1024u, 1025u, 5000u, 70001u}) {
    EXPECT_EQ(stft_magnitude(std::vector<double>(n, 0.1)).rows(), (n + kHop - 1) / kHop);
  }
}

TEST(MelFilterbank, RowsPeakAtOneAndAreNonNegative) {
  const auto& w = default_mel_filterbank().weights();
  ASSERT_EQ(w.rows(), 80u);
  ASSERT_EQ(w.cols(), 1025u);
  for (std::size_t b = 0; b < w.rows(); ++b) {
    auto row = w.row(b);
    EXPECT_EQ(*std::max_element(row.begin(), row.end()), 1.0);
    EXPECT_EQ(std::count(row.begin(), row.end(), 1.0), 1);
    for (double v : row) EXPECT_GE(v, 0.0);
  }
}

TEST(MelFilterbank, CentersIncrease) {
  const auto centers = default_mel_filterbank().centers_hz();
  for (std::size_t b = 1; b < centers.size(); ++b) EXPECT_GT(centers[b], centers[b - 1]);
}

TEST(MelFilterbank, BandOneApexMatchesClosedForm) {
  // Closed-form HTK inversion.
  const double dm = 2595.0 * std::log10(1.0 + 22050.0 / 700.0) / 81.0;
  auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double lo = inv(dm), expected_center = inv(2.0 * dm), hi = inv(3.0 * dm);

  // Recover the apex from one rising and one falling weight of row 1.
  const auto row = default_mel_filterbank().weights().row(1);
  const double bin_hz = 44100.0 / 2048.0;
  double f_rise = 0, w_rise = 0, f_fall = 0, w_fall = 0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    const double f = k * bin_hz;
    if (row[k] <= 0.0) continue;
    if (f < expected_center && w_rise == 0.0) {
      f_rise = f;
      w_rise = row[k];
    } else if (f > expected_center) {
      f_fall = f;
      w_fall = row[k];
      break;
    }
  }
  ASSERT_GT(w_rise, 0.0);
  ASSERT_GT(w_fall, 0.0);
  // slopes: w_rise / (f_rise - lo) = s / (c - lo);  w_fall / (hi - f_fall) = s / (hi - c)
  const double r = (w_rise / (f_rise - lo)) / (w_fall / (hi - f_fall));  // (hi - c) / (c - lo)
  const double apex = (hi + r * lo) / (1.0 + r);
  EXPECT_NEAR(apex, expected_center, 1e-6);
  EXPECT_NEAR(default_mel_filterbank().centers_hz()[1], expected_center, 1e-9);
}

TEST(MelFilterbank, ColumnSumsWithinCoveredBand) {
  const auto& w = default_mel_filterbank().weights();
  for (std::size_t k = 1; k + 1 < w.cols(); ++k) {
    double sum = 0.0;
    for (std::size_t b = 0; b < w.rows(); ++b) sum += w(b, k);
    EXPECT_GT(sum, 0.0) << "bin " << k;
    EXPECT_LE(sum, 2.0) << "bin " << k;
  }
}

TEST(MelSpectrogram, SilenceNormalisesToZero) {
  const auto raw = mel_spectrogram_db(std::vector<double>(44100, 0.0), FramePadding::kPadToCover,
                                      DbReference::kAbsolute);
  for (double v : raw.values.data()) EXPECT_DOUBLE_EQ(v, -100.0);
  const auto mel = mel_spectrogram_db(std::vector<double>(44100, 0.0));
  for (double v : mel.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(MelSpectrogram, InvariantUnderPositiveScaling) {
  // The 1e-10 dB floor only perturbs cells with near-zero power, so the signal
  // length is a whole number of hops (no almost-empty padded frame).
  const auto x = white_noise(86 * kHop, 0.2, 17);
  const auto base = mel_spectrogram_db(x);
  for (double scale : {2.0, 0.5, 3.7}) {
    auto y = x;
    for (auto& v : y) v *= scale;
    const auto scaled = mel_spectrogram_db(y);
    ASSERT_EQ(scaled.values.rows(), base.values.rows());
    for (std::size_t i = 0; i < base.values.data().size(); ++i) {
      EXPECT_NEAR(scaled.values.data()[i], base.values.data()[i], 1e-9);
    }
  }
}

TEST(MelSpectrogram, SixSecondSegmentNoPadFrames) {
  const auto mel = mel_spectrogram_db(white_noise(264600, 0.3, 2), FramePadding::kNoPad);
  EXPECT_EQ(mel.n_frames(), 257u);
  EXPECT_EQ(mel.n_bands(), 80u);
  const double peak = *std::max_element(mel.values.data().begin(), mel.values.data().end());
  EXPECT_EQ(peak, 0.0);
  for (double v : mel.values.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(AedShapes, CanonicalSpecPasses) {
  AedArchitectureSpec spec;
  spec.labels = {"Gunshot", "Explosion", "Speech", "Scream", "Emergency_vehicle",
                 "Fire_alarm", "Horn", "Alarm", "Breaking"};
  const auto report = validate_aed_shapes(spec);
  EXPECT_TRUE(report.ok());
  ASSERT_NE(report.find("n_frames"), nullptr);
  EXPECT_EQ(report.find("n_frames")->actual, "428");
  ASSERT_NE(report.find("label_arity"), nullptr);
  EXPECT_TRUE(report.find("label_arity")->pass);
}

TEST(AedShapes, HalvedHopFailsFrameCount) {
  AedArchitectureSpec spec;
  spec.hop = 512;
  const auto report = validate_aed_shapes(spec);
  EXPECT_FALSE(report.ok());
  EXPECT_FALSE(report.find("n_frames")->pass);
  EXPECT_EQ(report.find("n_frames")->actual, "855");
}

TEST(AedShapes, EverySingleFieldPerturbationFails) {
  const std::vector<std::function<void(AedArchitectureSpec&)>> perturb = {
      [](auto& s) { s.input_samples = 437589 + 1024; },
      [](auto& s) { s.input_duration_s = 10.0; },
      [](auto& s) { s.mel_bands = 128; },
      [](auto& s) { s.fft_window = 1024; },
      [](auto& s) { s.hop = 512; },
      [](auto& s) { s.n_frames = 427; },
      [](auto& s) { s.conv_filters = 256; },
      [](auto& s) { s.conv_kernel_time = 3; },
      [](auto& s) { s.embedding_dim = 128; },
      [](auto& s) { s.gru_layers = 2; },
      [](auto& s) { s.gru_bidirectional = false; },
      [](auto& s) { s.n_outputs = 10; },
      [](auto& s) { s.attention = "softmax"; },
      [](auto& s) { s.sample_rate = 48000; },
  };
  for (std::size_t i = 0; i < perturb.size(); ++i) {
    AedArchitectureSpec spec;
    perturb[i](spec);
    EXPECT_FALSE(validate_aed_shapes(spec).ok()) << "perturbation " << i;
  }
}
