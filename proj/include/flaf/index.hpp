#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "flaf/error.hpp"
#include "flaf/feature_file.hpp"
#include "flaf/json_io.hpp"

namespace flaf {

struct VisualDetection {
  std::string video_id;
  double t_s = 0.0;
  std::string label;
  std::array<double, 4> bbox{};  // x, y, w, h in the unit square
  double confidence = 0.0;
  std::optional<std::int64_t> track_id;

  friend bool operator==(const VisualDetection&, const VisualDetection&) = default;
};

struct CatalogRecord {
  std::string video_id;
  std::string source_path;
  double duration_s = 0.0;
  std::string ingest_time;
  std::string feature_file;
  std::vector<std::string> detector_runs;

  friend bool operator==(const CatalogRecord&, const CatalogRecord&) = default;
};

inline void to_json(Json& j, const VisualDetection& v) {
  j = Json{{"video_id", v.video_id}, {"t_s", v.t_s},           {"label", v.label},
           {"bbox", v.bbox},         {"confidence", v.confidence}};
  if (v.track_id) j["track_id"] = *v.track_id;
}

inline void from_json(const Json& j, VisualDetection& v) {
  j.at("video_id").get_to(v.video_id);
  j.at("t_s").get_to(v.t_s);
  j.at("label").get_to(v.label);
  j.at("bbox").get_to(v.bbox);
  j.at("confidence").get_to(v.confidence);
  if (j.contains("track_id") && !j.at("track_id").is_null()) {
    v.track_id = j.at("track_id").get<std::int64_t>();
  }
}

inline void to_json(Json& j, const CatalogRecord& r) {
  j = Json{{"video_id", r.video_id},       {"source_path", r.source_path},
           {"duration_s", r.duration_s},   {"ingest_time", r.ingest_time},
           {"feature_file", r.feature_file}, {"detector_runs", r.detector_runs}};
}

inline void from_json(const Json& j, CatalogRecord& r) {
  j.at("video_id").get_to(r.video_id);
  j.at("source_path").get_to(r.source_path);
  j.at("duration_s").get_to(r.duration_s);
  j.at("ingest_time").get_to(r.ingest_time);
  j.at("feature_file").get_to(r.feature_file);
  j.at("detector_runs").get_to(r.detector_runs);
}

// ---- visual detection lines ----

struct RejectedLine {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct VisualIngestResult {
  std::size_t accepted = 0;
  std::vector<RejectedLine> rejected;
};

// Validates one JSON line. Returns the detection or the rejection reason.
inline std::variant<VisualDetection, std::string> parse_visual_line(std::string_view line,
                                                                    const std::string& video_id) {
  const Json j = Json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded()) return std::string("invalid json");
  if (!j.is_object()) return std::string("not an object");
  const auto number = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || !j.at(key).is_number()) return std::nullopt;
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };
  VisualDetection v;
  if (!j.contains("video_id") || !j.at("video_id").is_string()) return std::string("video_id must be a string");
  v.video_id = j.at("video_id").get<std::string>();
  if (v.video_id != video_id) return std::string("video_id mismatch");
  const auto t = number("t_s");
  if (!t) return std::string("t_s must be a number");
  if (*t < 0.0) return std::string("t_s out of range");
  v.t_s = *t;
  if (!j.contains("label") || !j.at("label").is_string() || j.at("label").get<std::string>().empty()) {
    return std::string("label must be a non-empty string");
  }
  v.label = j.at("label").get<std::string>();
  if (!j.contains("bbox") || !j.at("bbox").is_array() || j.at("bbox").size() != 4) {
    return std::string("bbox must be 4 numbers");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& c = j.at("bbox")[i];
    if (!c.is_number() || !std::isfinite(c.get<double>())) return std::string("bbox must be 4 numbers");
    v.bbox[i] = c.get<double>();
  }
  const auto [x, y, w, h] = v.bbox;
  for (double c : v.bbox) {
    if (c < 0.0 || c > 1.0) return std::string("bbox out of range");
  }
  if (x + w > 1.0 || y + h > 1.0) return std::string("bbox out of range");
  const auto conf = number("confidence");
  if (!conf) return std::string("confidence must be a number");
  if (*conf < 0.0 || *conf > 1.0) return std::string("confidence out of range");
  v.confidence = *conf;
  if (j.contains("track_id") && !j.at("track_id").is_null()) {
    if (!j.at("track_id").is_number_integer()) return std::string("track_id must be an integer");
    v.track_id = j.at("track_id").get<std::int64_t>();
  }
  return v;
}

// ---- queries ----

struct EventFilter {
  std::optional<std::string> label;
  std::optional<double> min_probability;
  std::optional<std::string> video_id;
  std::optional<double> t_from;  // [t_from, t_to), intervals included iff they intersect
  std::optional<double> t_to;
};

inline bool interval_hits(double start, double end, std::optional<double> from, std::optional<double> to) {
  if (to && !(start < *to)) return false;
  if (from && !(end > *from)) return false;
  return true;
}

// Point annotations (visual boxes) are the degenerate interval [t, t].
inline bool point_hits(double t, std::optional<double> from, std::optional<double> to) {
  if (to && !(t < *to)) return false;
  if (from && !(t >= *from)) return false;
  return true;
}

inline bool event_matches(const EventDetection& e, const EventFilter& f) {
  if (f.label && e.label != *f.label) return false;
  if (f.video_id && e.video_id != *f.video_id) return false;
  if (f.min_probability && e.probability < *f.min_probability) return false;
  return interval_hits(e.t_start_s, e.t_end_s, f.t_from, f.t_to);
}

// probability desc, then time, then the remaining fields for a total order
inline bool event_rank_less(const EventDetection& a, const EventDetection& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  if (a.t_start_s != b.t_start_s) return a.t_start_s < b.t_start_s;
  if (a.t_end_s != b.t_end_s) return a.t_end_s < b.t_end_s;
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  if (a.label != b.label) return a.label < b.label;
  return a.detector_id < b.detector_id;
}

enum class AnnotationKind { kEvent, kSegment, kVisual };

inline const char* annotation_kind_name(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::kEvent: return "event";
    case AnnotationKind::kSegment: return "segment";
    case AnnotationKind::kVisual: return "visual";
  }
  return "?";
}

struct TimelineAnnotation {
  AnnotationKind kind = AnnotationKind::kEvent;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  std::string label;
  std::variant<EventDetection, VisualDetection, SegmentRef> item;
};

inline bool timeline_less(const TimelineAnnotation& a, const TimelineAnnotation& b) {
  if (a.t_start_s != b.t_start_s) return a.t_start_s < b.t_start_s;
  if (a.kind != b.kind) return a.kind < b.kind;
  return a.label < b.label;
}

inline void to_json(Json& j, const TimelineAnnotation& a) {
  j = Json{{"kind", annotation_kind_name(a.kind)},
           {"t_start_s", a.t_start_s},
           {"t_end_s", a.t_end_s},
           {"label", a.label}};
  std::visit([&](const auto& item) { j["item"] = item; }, a.item);
}

struct VideoCounts {
  std::size_t segments = 0;
  std::size_t events = 0;
  std::size_t visual = 0;
  bool envelope = false;
};

// ---- log framing ----

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string encode_frame(std::string_view payload) {
  std::string out(8, '\0');
  const auto len = static_cast<std::uint32_t>(payload.size());
  const auto crc = crc32_of(payload);
  for (int i = 0; i < 4; ++i) {
    out[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out[4 + i] = static_cast<char>((crc >> (8 * i)) & 0xff);
  }
  out.append(payload);
  return out;
}

struct LogScan {
  std::vector<std::pair<std::uint64_t, std::string>> frames;  // offset, payload
  std::uint64_t valid_end = 0;  // bytes covered by complete frames
  bool torn_tail = false;
};

namespace detail {

inline std::uint32_t le32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24);
}

inline bool frame_at(std::string_view log, std::size_t at) {
  if (at + 8 > log.size()) return false;
  const std::uint32_t len = le32(log, at);
  if (len == 0 || at + 8 + len > log.size() || log[at + 8] != '{') return false;
  return crc32_of(log.substr(at + 8, len)) == le32(log, at + 4);
}

}  // namespace detail

// Walks the log. A frame whose CRC fails raises CorruptLogError. A frame that
// runs past the end of the file is a torn final append, unless some complete
// frame can still be found after it, in which case it is corruption too.
inline LogScan scan_log(std::string_view log, std::size_t max_record_bytes) {
  LogScan scan;
  std::size_t at = 0;
  while (at < log.size()) {
    const bool header_complete = at + 8 <= log.size();
    const std::uint32_t len = header_complete ? detail::le32(log, at) : 0;
    if (header_complete && len > max_record_bytes) {
      throw CorruptLogError(at, "record length " + std::to_string(len) + " exceeds limit");
    }
    if (!header_complete || at + 8 + len > log.size()) {
      for (std::size_t p = at + 1; p < log.size(); ++p) {
        if (detail::frame_at(log, p)) throw CorruptLogError(at, "truncated record followed by data");
      }
      scan.torn_tail = true;
      break;
    }
    const auto payload = log.substr(at + 8, len);
    if (crc32_of(payload) != detail::le32(log, at + 4)) throw CorruptLogError(at, "crc mismatch");
    scan.frames.emplace_back(at, std::string(payload));
    at += 8 + len;
  }
  scan.valid_end = at;
  return scan;
}

// ---- state ----

// Everything the index knows. Live writes and log replay go through apply(),
// so the two paths cannot drift apart.
struct IndexState {
  std::uint64_t lsn = 0;
  std::map<std::string, CatalogRecord> videos;
  std::map<std::string, std::vector<SegmentFeatures>> segments;
  std::map<std::string, std::vector<EventDetection>> events;  // per video, timeline order
  std::map<std::string, std::vector<VisualDetection>> visual;
  std::map<std::string, OnsetEnvelope> envelopes;
  std::map<std::pair<std::string, std::string>, OffsetEstimate> offsets;
  std::vector<SyncCluster> clusters;
  std::map<std::string, std::vector<EventDetection>> by_label;  // derived

  void index_label_bucket(const std::string& label) {
    auto& bucket = by_label[label];
    bucket.clear();
    for (const auto& [_, evs] : events) {
      for (const auto& e : evs) {
        if (e.label == label) bucket.push_back(e);
      }
    }
    std::sort(bucket.begin(), bucket.end(), event_rank_less);
    if (bucket.empty()) by_label.erase(label);
  }

  void apply(const Json& rec) {
    const auto kind = rec.at("kind").get<std::string>();
    lsn = rec.at("lsn").get<std::uint64_t>();
    if (kind == "video") {
      auto r = rec.at("record").get<CatalogRecord>();
      videos[r.video_id] = std::move(r);
    } else if (kind == "segments") {
      segments[rec.at("video_id").get<std::string>()] = rec.at("segments").get<std::vector<SegmentFeatures>>();
    } else if (kind == "events") {
      const auto vid = rec.at("video_id").get<std::string>();
      const auto det = rec.at("detector_id").get<std::string>();
      auto incoming = rec.at("events").get<std::vector<EventDetection>>();
      auto& list = events[vid];
      std::set<std::string> touched;
      for (const auto& e : list) {
        if (e.detector_id == det) touched.insert(e.label);
      }
      std::erase_if(list, [&](const EventDetection& e) { return e.detector_id == det; });
      for (auto& e : incoming) {
        touched.insert(e.label);
        list.push_back(std::move(e));
      }
      sort_events(list);
      for (const auto& label : touched) index_label_bucket(label);
    } else if (kind == "visual") {
      auto& list = visual[rec.at("video_id").get<std::string>()];
      for (auto& v : rec.at("detections").get<std::vector<VisualDetection>>()) list.push_back(std::move(v));
    } else if (kind == "envelope") {
      auto e = rec.at("envelope").get<OnsetEnvelope>();
      envelopes[e.video_id] = std::move(e);
    } else if (kind == "offsets") {
      for (auto& o : rec.at("offsets").get<std::vector<OffsetEstimate>>()) {
        offsets[{o.video_a, o.video_b}] = std::move(o);
      }
    } else if (kind == "clusters") {
      clusters = rec.at("clusters").get<std::vector<SyncCluster>>();
    } else {
      throw Error(ErrorCode::kCorruptLog, "unknown record kind " + kind);
    }
  }

  Json to_json() const {
    Json j;
    j["lsn"] = lsn;
    Json vids = Json::array();
    for (const auto& [_, r] : videos) vids.push_back(r);
    j["videos"] = vids;
    j["segments"] = segments;
    j["events"] = events;
    j["visual"] = visual;
    j["envelopes"] = envelopes;
    Json offs = Json::array();
    for (const auto& [_, o] : offsets) offs.push_back(o);
    j["offsets"] = offs;
    j["clusters"] = clusters;
    return j;
  }

  static IndexState from_json(const Json& j) {
    IndexState s;
    s.lsn = j.at("lsn").get<std::uint64_t>();
    for (auto& r : j.at("videos").get<std::vector<CatalogRecord>>()) s.videos[r.video_id] = r;
    s.segments = j.at("segments").get<decltype(s.segments)>();
    s.events = j.at("events").get<decltype(s.events)>();
    s.visual = j.at("visual").get<decltype(s.visual)>();
    s.envelopes = j.at("envelopes").get<decltype(s.envelopes)>();
    for (auto& o : j.at("offsets").get<std::vector<OffsetEstimate>>()) s.offsets[{o.video_a, o.video_b}] = o;
    s.clusters = j.at("clusters").get<decltype(s.clusters)>();
    std::set<std::string> labels;
    for (const auto& [_, evs] : s.events) {
      for (const auto& e : evs) labels.insert(e.label);
    }
    for (const auto& l : labels) s.index_label_bucket(l);
    return s;
  }
};

// ---- the store ----

struct IndexOptions {
  bool read_only = false;
  bool sync_writes = true;          // fdatasync every append
  std::size_t snapshot_every = 0;   // records between automatic snapshots, 0 = manual
  std::size_t max_record_bytes = std::size_t{1} << 30;
  // Called at named points of the write path; tests use it to kill the
  // process at precise moments.
  std::function<void(std::string_view)> fault_hook;
};

inline constexpr const char* kLogFile = "wal.log";
inline constexpr const char* kSnapshotFile = "snapshot.json";
inline constexpr const char* kLockFile = "LOCK";

class FusionIndex {
 public:
  explicit FusionIndex(std::filesystem::path dir, IndexOptions opts = {})
      : dir_(std::move(dir)), opts_(std::move(opts)) {
    std::error_code ec;
    if (!opts_.read_only) std::filesystem::create_directories(dir_, ec);
    if (!opts_.read_only) {
      lock_fd_ = ::open((dir_ / kLockFile).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
      if (lock_fd_ < 0) throw Error(ErrorCode::kIo, "cannot open lock file in " + dir_.string());
      if (flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw Error(ErrorCode::kDataDirLocked, "data directory " + dir_.string() + " is in use");
      }
    }
    recover();
  }

  ~FusionIndex() {
    if (log_fd_ >= 0) ::close(log_fd_);
    if (lock_fd_ >= 0) ::close(lock_fd_);
  }

  FusionIndex(const FusionIndex&) = delete;
  FusionIndex& operator=(const FusionIndex&) = delete;

  const std::filesystem::path& dir() const noexcept { return dir_; }

  // ---- writes ----

  void put_video(const CatalogRecord& record) {
    if (record.video_id.empty()) throw Error(ErrorCode::kInvalidArgument, "video_id is empty");
    if (!(record.duration_s > 0.0) || !std::isfinite(record.duration_s)) {
      throw Error(ErrorCode::kInvalidArgument, "duration must be positive");
    }
    std::unique_lock lock(mu_);
    if (const auto it = state_.videos.find(record.video_id); it != state_.videos.end()) {
      if (it->second == record) return;
      throw Error(ErrorCode::kDuplicateVideo, "video already registered: " + record.video_id);
    }
    commit(Json{{"kind", "video"}, {"record", record}});
  }

  void put_segment_features(const std::string& video_id, const std::vector<SegmentFeatures>& segs) {
    for (const auto& s : segs) {
      if (s.segment.video_id != video_id) {
        throw Error(ErrorCode::kInvalidArgument, "segment belongs to " + s.segment.video_id);
      }
      if (s.feature_version != kFeatureVersion || s.ssd.values.size() != kSsdDims ||
          s.rp.values.size() != kRpDims) {
        throw Error(ErrorCode::kDimensionMismatch, "segment features do not match " +
                                                       std::string(kFeatureVersion) + " dimensions");
      }
    }
    std::unique_lock lock(mu_);
    require_video(video_id);
    commit(Json{{"kind", "segments"}, {"video_id", video_id}, {"segments", segs}});
  }

  // Replaces every event of (video_id, detector_id).
  void put_events(const std::string& video_id, const std::string& detector_id,
                  std::vector<EventDetection> events) {
    for (auto& e : events) {
      if (e.video_id.empty()) e.video_id = video_id;
      if (e.detector_id.empty()) e.detector_id = detector_id;
      if (e.video_id != video_id || e.detector_id != detector_id) {
        throw Error(ErrorCode::kInvalidArgument, "event does not belong to this batch");
      }
      if (!(e.t_start_s < e.t_end_s) || !(e.probability >= 0.0 && e.probability <= 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "invalid event interval or probability");
      }
    }
    std::unique_lock lock(mu_);
    require_video(video_id);
    commit(Json{{"kind", "events"}, {"video_id", video_id}, {"detector_id", detector_id}, {"events", events}});
  }

  VisualIngestResult ingest_visual(const std::string& video_id, std::string_view jsonl) {
    VisualIngestResult result;
    std::vector<VisualDetection> good;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < jsonl.size()) {
      auto end = jsonl.find('\n', start);
      if (end == std::string_view::npos) end = jsonl.size();
      auto line = jsonl.substr(start, end - start);
      start = end + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
      auto parsed = parse_visual_line(line, video_id);
      if (auto* v = std::get_if<VisualDetection>(&parsed)) {
        good.push_back(std::move(*v));
      } else {
        result.rejected.push_back({line_no, std::get<std::string>(parsed)});
      }
    }
    std::unique_lock lock(mu_);
    require_video(video_id);
    if (!good.empty()) commit(Json{{"kind", "visual"}, {"video_id", video_id}, {"detections", good}});
    result.accepted = good.size();
    return result;
  }

  void put_envelope(const OnsetEnvelope& env) {
    std::unique_lock lock(mu_);
    require_video(env.video_id);
    commit(Json{{"kind", "envelope"}, {"envelope", env}});
  }

  void put_offsets(const std::vector<OffsetEstimate>& offsets) {
    std::unique_lock lock(mu_);
    for (const auto& o : offsets) {
      require_video(o.video_a);
      require_video(o.video_b);
    }
    commit(Json{{"kind", "offsets"}, {"offsets", offsets}});
  }

  void put_clusters(const std::vector<SyncCluster>& clusters) {
    std::unique_lock lock(mu_);
    for (const auto& c : clusters) {
      for (const auto& m : c.members) require_video(m);
    }
    commit(Json{{"kind", "clusters"}, {"clusters", clusters}});
  }

  // Writes the full state to snapshot.json and empties the log.
  void snapshot() {
    std::unique_lock lock(mu_);
    snapshot_locked();
  }

  // ---- reads ----

  std::uint64_t lsn() const {
    std::shared_lock lock(mu_);
    return state_.lsn;
  }

  Json state_json() const {
    std::shared_lock lock(mu_);
    return state_.to_json();
  }

  bool has_video(const std::string& id) const {
    std::shared_lock lock(mu_);
    return state_.videos.count(id) > 0;
  }

  CatalogRecord video(const std::string& id) const {
    std::shared_lock lock(mu_);
    require_video(id);
    return state_.videos.at(id);
  }

  std::vector<CatalogRecord> videos() const {
    std::shared_lock lock(mu_);
    std::vector<CatalogRecord> out;
    for (const auto& [_, r] : state_.videos) out.push_back(r);
    return out;
  }

  VideoCounts counts(const std::string& id) const {
    std::shared_lock lock(mu_);
    require_video(id);
    VideoCounts c;
    if (auto it = state_.segments.find(id); it != state_.segments.end()) c.segments = it->second.size();
    if (auto it = state_.events.find(id); it != state_.events.end()) c.events = it->second.size();
    if (auto it = state_.visual.find(id); it != state_.visual.end()) c.visual = it->second.size();
    c.envelope = state_.envelopes.count(id) > 0;
    return c;
  }

  std::vector<SegmentFeatures> segments(const std::string& id) const {
    std::shared_lock lock(mu_);
    require_video(id);
    const auto it = state_.segments.find(id);
    return it == state_.segments.end() ? std::vector<SegmentFeatures>{} : it->second;
  }

  std::vector<SegmentFeatures> all_segments() const {
    std::shared_lock lock(mu_);
    std::vector<SegmentFeatures> out;
    for (const auto& [_, segs] : state_.segments) out.insert(out.end(), segs.begin(), segs.end());
    return out;
  }

  std::vector<EventDetection> query_events(const EventFilter& filter) const {
    std::shared_lock lock(mu_);
    std::vector<EventDetection> out;
    const auto take = [&](const std::vector<EventDetection>& list) {
      for (const auto& e : list) {
        if (event_matches(e, filter)) out.push_back(e);
      }
    };
    if (filter.video_id) {
      if (auto it = state_.events.find(*filter.video_id); it != state_.events.end()) take(it->second);
    } else if (filter.label) {
      if (auto it = state_.by_label.find(*filter.label); it != state_.by_label.end()) take(it->second);
    } else {
      for (const auto& [_, list] : state_.events) take(list);
    }
    std::sort(out.begin(), out.end(), event_rank_less);
    return out;
  }

  std::vector<VisualDetection> visual(const std::string& id) const {
    std::shared_lock lock(mu_);
    require_video(id);
    const auto it = state_.visual.find(id);
    return it == state_.visual.end() ? std::vector<VisualDetection>{} : it->second;
  }

  std::vector<TimelineAnnotation> timeline(const std::string& id, std::optional<double> from = std::nullopt,
                                           std::optional<double> to = std::nullopt) const {
    std::shared_lock lock(mu_);
    require_video(id);
    std::vector<TimelineAnnotation> acoustic, visual_part;
    if (auto it = state_.events.find(id); it != state_.events.end()) {
      for (const auto& e : it->second) {
        if (interval_hits(e.t_start_s, e.t_end_s, from, to)) {
          acoustic.push_back({AnnotationKind::kEvent, e.t_start_s, e.t_end_s, e.label, e});
        }
      }
    }
    if (auto it = state_.segments.find(id); it != state_.segments.end()) {
      for (const auto& s : it->second) {
        const auto& r = s.segment;
        if (interval_hits(r.start_s, r.end_s(), from, to)) {
          acoustic.push_back({AnnotationKind::kSegment, r.start_s, r.end_s(), "segment", r});
        }
      }
    }
    if (auto it = state_.visual.find(id); it != state_.visual.end()) {
      for (const auto& v : it->second) {
        if (point_hits(v.t_s, from, to)) visual_part.push_back({AnnotationKind::kVisual, v.t_s, v.t_s, v.label, v});
      }
    }
    std::stable_sort(acoustic.begin(), acoustic.end(), timeline_less);
    std::stable_sort(visual_part.begin(), visual_part.end(), timeline_less);
    std::vector<TimelineAnnotation> out;
    out.reserve(acoustic.size() + visual_part.size());
    std::merge(acoustic.begin(), acoustic.end(), visual_part.begin(), visual_part.end(),
               std::back_inserter(out), timeline_less);
    return out;
  }

  std::optional<OnsetEnvelope> envelope(const std::string& id) const {
    std::shared_lock lock(mu_);
    const auto it = state_.envelopes.find(id);
    if (it == state_.envelopes.end()) return std::nullopt;
    return it->second;
  }

  std::map<std::string, OnsetEnvelope> envelopes() const {
    std::shared_lock lock(mu_);
    return state_.envelopes;
  }

  std::vector<OffsetEstimate> offsets() const {
    std::shared_lock lock(mu_);
    std::vector<OffsetEstimate> out;
    for (const auto& [_, o] : state_.offsets) out.push_back(o);
    return out;
  }

  std::vector<SyncCluster> clusters() const {
    std::shared_lock lock(mu_);
    return state_.clusters;
  }

 private:
  void require_video(const std::string& id) const {
    if (!state_.videos.count(id)) throw Error(ErrorCode::kUnknownVideo, "unknown video: " + id);
  }

  void fault(std::string_view point) const {
    if (opts_.fault_hook) opts_.fault_hook(point);
  }

  static void write_all(int fd, std::string_view bytes, const std::filesystem::path& what) {
    while (!bytes.empty()) {
      const auto n = ::write(fd, bytes.data(), bytes.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kIo, "write " + what.string() + ": " + std::strerror(errno));
      }
      bytes.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  static void sync_dir(const std::filesystem::path& dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd >= 0) {
      ::fsync(fd);
      ::close(fd);
    }
  }

  // Append + flush, then apply. Caller holds the write lock.
  void commit(Json rec) {
    if (opts_.read_only) throw Error(ErrorCode::kInvalidArgument, "index opened read-only");
    rec["lsn"] = state_.lsn + 1;
    const auto payload = rec.dump();
    if (payload.size() > opts_.max_record_bytes) throw Error(ErrorCode::kInvalidArgument, "record too large");
    write_all(log_fd_, encode_frame(payload), dir_ / kLogFile);
    if (opts_.sync_writes && ::fdatasync(log_fd_) != 0) {
      throw Error(ErrorCode::kIo, std::string("fdatasync: ") + std::strerror(errno));
    }
    fault("after_append");
    state_.apply(rec);
    ++since_snapshot_;
    if (opts_.snapshot_every > 0 && since_snapshot_ >= opts_.snapshot_every) snapshot_locked();
  }

  void snapshot_locked() {
    if (opts_.read_only) throw Error(ErrorCode::kInvalidArgument, "index opened read-only");
    const Json snap{{"format", "flaf-index"}, {"version", 1}, {"state", state_.to_json()}};
    const auto tmp = dir_ / (std::string(kSnapshotFile) + ".tmp");
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    try {
      write_all(fd, snap.dump(), tmp);
    } catch (...) {
      ::close(fd);
      throw;
    }
    ::fsync(fd);
    ::close(fd);
    fault("before_snapshot_rename");
    std::filesystem::rename(tmp, dir_ / kSnapshotFile);
    sync_dir(dir_);
    fault("after_snapshot_rename");
    if (::ftruncate(log_fd_, 0) != 0) throw Error(ErrorCode::kIo, "cannot truncate log");
    ::fsync(log_fd_);
    since_snapshot_ = 0;
    fault("after_snapshot");
  }

  void recover() {
    const auto snap_path = dir_ / kSnapshotFile;
    if (std::filesystem::exists(snap_path)) {
      const auto bytes = read_file_bytes(snap_path);
      const Json snap = Json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (snap.is_discarded() || !snap.is_object() || !snap.contains("state")) {
        throw Error(ErrorCode::kCorruptLog, "snapshot " + snap_path.string() + " is unreadable");
      }
      state_ = IndexState::from_json(snap.at("state"));
    }
    const auto log_path = dir_ / kLogFile;
    std::string log;
    if (std::filesystem::exists(log_path)) {
      const auto bytes = read_file_bytes(log_path);
      log.assign(bytes.begin(), bytes.end());
    }
    const auto scan = scan_log(log, opts_.max_record_bytes);
    for (const auto& [offset, payload] : scan.frames) {
      const Json rec = Json::parse(payload, nullptr, false);
      if (rec.is_discarded() || !rec.is_object() || !rec.contains("lsn") || !rec.contains("kind")) {
        throw CorruptLogError(offset, "record is not a log entry");
      }
      if (rec.at("lsn").get<std::uint64_t>() <= state_.lsn) continue;  // already in the snapshot
      state_.apply(rec);
      ++since_snapshot_;
    }
    if (opts_.read_only) return;
    log_fd_ = ::open(log_path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (log_fd_ < 0) throw Error(ErrorCode::kIo, "cannot open " + log_path.string());
    if (scan.torn_tail) {
      if (::ftruncate(log_fd_, static_cast<off_t>(scan.valid_end)) != 0) {
        throw Error(ErrorCode::kIo, "cannot drop torn log tail");
      }
      ::fsync(log_fd_);
    }
  }

  std::filesystem::path dir_;
  IndexOptions opts_;
  int lock_fd_ = -1;
  int log_fd_ = -1;
  std::size_t since_snapshot_ = 0;
  mutable std::shared_mutex mu_;
  IndexState state_;
};

}  // namespace flaf
