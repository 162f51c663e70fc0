#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flaf/error.hpp"

namespace flaf {

inline constexpr int kCanonicalRate = 44100;
inline constexpr double kSegmentSeconds = 6.0;
inline constexpr std::size_t kSegmentSamples = 264600;  // 6 s at 44.1 kHz
inline constexpr std::size_t kMinSegmentSamples = 44100;  // 1 s

struct AudioClip {
  std::string video_id;
  int sample_rate = kCanonicalRate;
  std::vector<double> samples;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

// One analysis segment of a canonical clip. start_s is always index * 6.0; the
// final segment absorbs a sub-second tail and can therefore reach 7 s.
struct SegmentRef {
  std::string video_id;
  int segment_index = 0;
  double start_s = 0.0;
  double len_s = 0.0;
  std::size_t start_sample = 0;
  std::size_t len_samples = 0;

  double end_s() const { return start_s + len_s; }
  friend bool operator==(const SegmentRef&, const SegmentRef&) = default;
};

inline bool segment_key_less(const SegmentRef& a, const SegmentRef& b) {
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  return a.segment_index < b.segment_index;
}

namespace detail {

inline std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace detail

// Decodes a RIFF/WAVE file (PCM16 or float32, 1-2 channels) into a mono clip at
// the file's own rate. Channels are averaged.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string video_id = {}) {
  using detail::read_u16;
  using detail::read_u32;
  auto tag_is = [&](std::size_t at, const char* tag) {
    return std::memcmp(bytes.data() + at, tag, 4) == 0;
  };
  if (bytes.size() < 12 || !tag_is(0, "RIFF") || !tag_is(8, "WAVE")) {
    throw Error(ErrorCode::kMalformedRiff, "missing RIFF/WAVE header");
  }
  const std::uint64_t riff_size = read_u32(bytes, 4);
  if (riff_size + 8 > bytes.size() || riff_size < 4) {
    throw Error(ErrorCode::kMalformedRiff, "RIFF size exceeds file length");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, block_align = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  const std::size_t end = static_cast<std::size_t>(riff_size + 8);
  while (pos + 8 <= end) {
    const std::uint64_t size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > end) {
      throw Error(ErrorCode::kMalformedRiff, "chunk extends past end of file");
    }
    if (tag_is(pos, "fmt ")) {
      if (size < 16) throw Error(ErrorCode::kMalformedRiff, "fmt chunk too small");
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = read_u32(bytes, body + 4);
      block_align = read_u16(bytes, body + 12);
      bits = read_u16(bytes, body + 14);
      have_fmt = true;
    } else if (tag_is(pos, "data")) {
      data = bytes.subspan(body, static_cast<std::size_t>(size));
      have_data = true;
    }
    pos = body + static_cast<std::size_t>(size) + (size & 1);
  }
  if (!have_fmt || !have_data) {
    throw Error(ErrorCode::kMalformedRiff, "missing fmt or data chunk");
  }
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw Error(ErrorCode::kUnsupportedEncoding,
                "unsupported encoding: format " + std::to_string(format) + ", " +
                    std::to_string(bits) + " bits");
  }
  if (channels < 1 || channels > 2) {
    throw Error(ErrorCode::kUnsupportedEncoding,
                "unsupported channel count " + std::to_string(channels));
  }
  if (rate < 8000 || rate > 192000) {
    throw Error(ErrorCode::kUnsupportedEncoding,
                "unsupported sample rate " + std::to_string(rate));
  }
  const std::size_t bytes_per_sample = bits / 8;
  if (block_align != channels * bytes_per_sample) {
    throw Error(ErrorCode::kMalformedRiff, "block align does not match format");
  }
  if (data.size() % block_align != 0) {
    throw Error(ErrorCode::kMalformedRiff, "data chunk is not a whole number of frames");
  }

  AudioClip clip;
  clip.video_id = std::move(video_id);
  clip.sample_rate = static_cast<int>(rate);
  const std::size_t frames = data.size() / block_align;
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t at = i * block_align + c * bytes_per_sample;
      double v;
      if (pcm16) {
        v = static_cast<std::int16_t>(read_u16(data, at)) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(data, at);
        float f;
        std::memcpy(&f, &raw, sizeof f);
        if (!std::isfinite(f)) {
          throw Error(ErrorCode::kMalformedRiff, "non-finite float sample");
        }
        v = std::clamp(static_cast<double>(f), -1.0, 1.0);
      }
      acc += v;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

enum class WavEncoding { kPcm16, kFloat32 };

// Writes a mono clip as RIFF/WAVE at the clip's own rate.
inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip,
                                            WavEncoding encoding = WavEncoding::kPcm16) {
  using namespace detail;
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t block = bits / 8;
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * block);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::kPcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : clip.samples) {
    if (encoding == WavEncoding::kPcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(out, static_cast<std::uint16_t>(v));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

namespace detail {

inline constexpr int kResampleTaps = 64;
inline constexpr double kKaiserBeta = 8.6;

inline double kaiser(double x, double half_width) {
  const double r = x / half_width;
  if (r <= -1.0 || r >= 1.0) return 0.0;
  static const double denom = std::cyl_bessel_i(0.0, kKaiserBeta);
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / denom;
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

// Band-limited conversion to 44.1 kHz using a 64-tap Kaiser-windowed sinc
// (beta 8.6). The per-phase kernels are normalised to unit DC gain.
inline AudioClip resample_to_canonical(const AudioClip& clip) {
  if (clip.sample_rate == kCanonicalRate) return clip;
  if (clip.sample_rate < 8000 || clip.sample_rate > 192000) {
    throw Error(ErrorCode::kUnsupportedEncoding,
                "sample rate out of range: " + std::to_string(clip.sample_rate));
  }
  const std::int64_t in_rate = clip.sample_rate;
  const std::int64_t out_rate = kCanonicalRate;
  const std::int64_t g = std::gcd(in_rate, out_rate);
  const std::int64_t phases = out_rate / g;  // distinct fractional positions
  const std::int64_t step = in_rate / g;     // input advance per output, in 1/phases units

  const double cutoff = std::min(1.0, static_cast<double>(out_rate) / static_cast<double>(in_rate));
  constexpr int half = detail::kResampleTaps / 2;

  // kernels[p][j] weights input sample floor(t) - half + 1 + j for fractional
  // position p / phases.
  std::vector<double> kernels(static_cast<std::size_t>(phases) * detail::kResampleTaps);
  for (std::int64_t p = 0; p < phases; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(phases);
    double* k = kernels.data() + p * detail::kResampleTaps;
    double sum = 0.0;
    for (int j = 0; j < detail::kResampleTaps; ++j) {
      const double x = frac - static_cast<double>(j - half + 1);
      k[j] = cutoff * detail::sinc(cutoff * x) * detail::kaiser(x, half);
      sum += k[j];
    }
    for (int j = 0; j < detail::kResampleTaps; ++j) k[j] /= sum;
  }

  const auto n_in = static_cast<std::int64_t>(clip.samples.size());
  const auto n_out = static_cast<std::int64_t>(
      std::llround(static_cast<double>(n_in) * static_cast<double>(out_rate) /
                   static_cast<double>(in_rate)));
  AudioClip out;
  out.video_id = clip.video_id;
  out.sample_rate = kCanonicalRate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * step;  // input position in units of 1/phases
    const std::int64_t base = pos / phases;
    const std::int64_t p = pos % phases;
    const double* k = kernels.data() + p * detail::kResampleTaps;
    double acc = 0.0;
    const std::int64_t first = base - half + 1;
    for (int j = 0; j < detail::kResampleTaps; ++j) {
      const std::int64_t idx = first + j;
      if (idx >= 0 && idx < n_in) acc += k[j] * clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(n)] = std::clamp(acc, -1.0, 1.0);
  }
  return out;
}

// Splits a canonical clip into 6 s segments. A tail shorter than 1 s is merged
// into the previous segment.
inline std::vector<SegmentRef> slice_segments(const AudioClip& clip) {
  if (clip.sample_rate != kCanonicalRate) {
    throw Error(ErrorCode::kInvalidArgument, "slice_segments needs a canonical clip");
  }
  const std::size_t n = clip.samples.size();
  if (n < kMinSegmentSamples) {
    throw Error(ErrorCode::kEmptyClip, "clip shorter than 1 s");
  }
  std::size_t count = n / kSegmentSamples;
  const std::size_t tail = n % kSegmentSamples;
  if (tail >= kMinSegmentSamples || count == 0) ++count;

  std::vector<SegmentRef> segments;
  segments.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SegmentRef s;
    s.video_id = clip.video_id;
    s.segment_index = static_cast<int>(i);
    s.start_sample = i * kSegmentSamples;
    s.len_samples = (i + 1 == count) ? n - s.start_sample : kSegmentSamples;
    s.start_s = static_cast<double>(i) * kSegmentSeconds;
    s.len_s = static_cast<double>(s.len_samples) / kCanonicalRate;
    segments.push_back(std::move(s));
  }
  return segments;
}

}  // namespace flaf
