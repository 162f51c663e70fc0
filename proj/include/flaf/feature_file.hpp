#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "flaf/error.hpp"
#include "flaf/features.hpp"

namespace flaf {

// Per-video feature file:
//   "FLAF1" | u32 LE manifest length | manifest JSON | f32 LE payload
// The payload holds, for each segment in manifest order, 168 SSD values then
// 1440 RP values.
inline std::vector<std::uint8_t> encode_feature_file(const std::string& video_id,
                                                     const std::vector<SegmentFeatures>& segments) {
  nlohmann::json manifest;
  manifest["format"] = kFeatureVersion;
  manifest["video_id"] = video_id;
  manifest["dims"] = {{"ssd", kSsdDims}, {"rp", kRpDims}};
  manifest["ssd_layout"] = "statistic-major: mean,median,variance,skewness,kurtosis,min,max x 24";
  manifest["rp_layout"] = "band-major: 24 x 60 bins, 0.17-10 Hz";
  nlohmann::json table = nlohmann::json::array();
  for (const auto& s : segments) {
    table.push_back({{"index", s.segment.segment_index},
                     {"start_s", s.segment.start_s},
                     {"len_s", s.segment.len_s},
                     {"start_sample", s.segment.start_sample},
                     {"len_samples", s.segment.len_samples}});
  }
  manifest["segments"] = std::move(table);
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kFeatureVersion, kFeatureVersion + 5);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), text.begin(), text.end());
  auto put = [&](double v) {
    const float f = static_cast<float>(v);
    std::uint32_t raw;
    std::memcpy(&raw, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((raw >> (8 * i)) & 0xff));
  };
  for (const auto& s : segments) {
    if (s.ssd.values.size() != kSsdDims || s.rp.values.size() != kRpDims) {
      throw Error(ErrorCode::kDimensionMismatch, "segment feature dimensions do not match FLAF1");
    }
    for (double v : s.ssd.values) put(v);
    for (double v : s.rp.values) put(v);
  }
  return out;
}

struct FeatureFile {
  std::string video_id;
  std::vector<SegmentFeatures> segments;
};

inline FeatureFile decode_feature_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kFeatureVersion, 5) != 0) {
    throw Error(ErrorCode::kDimensionMismatch, "not a FLAF1 feature file");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  if (9 + static_cast<std::size_t>(len) > bytes.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature manifest truncated");
  }
  const auto manifest = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
  if (manifest.at("dims").at("ssd") != kSsdDims || manifest.at("dims").at("rp") != kRpDims) {
    throw Error(ErrorCode::kDimensionMismatch, "feature dimensions do not match FLAF1");
  }
  FeatureFile file;
  file.video_id = manifest.at("video_id").get<std::string>();
  const auto& table = manifest.at("segments");
  const std::size_t per_segment = (kSsdDims + kRpDims) * 4;
  std::size_t pos = 9 + len;
  if (bytes.size() - pos != table.size() * per_segment) {
    throw Error(ErrorCode::kDimensionMismatch, "feature payload size does not match manifest");
  }
  auto get = [&]() {
    std::uint32_t raw = 0;
    for (int i = 0; i < 4; ++i) raw |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    float f;
    std::memcpy(&f, &raw, 4);
    return static_cast<double>(f);
  };
  for (const auto& row : table) {
    SegmentFeatures s;
    s.segment.video_id = file.video_id;
    s.segment.segment_index = row.at("index").get<int>();
    s.segment.start_s = row.at("start_s").get<double>();
    s.segment.len_s = row.at("len_s").get<double>();
    s.segment.start_sample = row.at("start_sample").get<std::size_t>();
    s.segment.len_samples = row.at("len_samples").get<std::size_t>();
    for (auto& v : s.ssd.values) v = get();
    for (auto& v : s.rp.values) v = get();
    file.segments.push_back(std::move(s));
  }
  return file;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace flaf
