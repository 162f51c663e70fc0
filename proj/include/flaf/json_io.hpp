#pragma once

// JSON forms of the engine's records, shared by the index log, the CLI and
// the HTTP service.

#include <json.hpp>

#include "flaf/events.hpp"
#include "flaf/features.hpp"
#include "flaf/similarity.hpp"
#include "flaf/sync.hpp"

namespace flaf {

using Json = nlohmann::json;

inline void to_json(Json& j, const SegmentRef& s) {
  j = Json{{"video_id", s.video_id},         {"segment_index", s.segment_index},
           {"start_s", s.start_s},           {"len_s", s.len_s},
           {"start_sample", s.start_sample}, {"len_samples", s.len_samples}};
}

inline void from_json(const Json& j, SegmentRef& s) {
  j.at("video_id").get_to(s.video_id);
  j.at("segment_index").get_to(s.segment_index);
  j.at("start_s").get_to(s.start_s);
  j.at("len_s").get_to(s.len_s);
  j.at("start_sample").get_to(s.start_sample);
  j.at("len_samples").get_to(s.len_samples);
}

inline void to_json(Json& j, const SegmentFeatures& f) {
  j = Json{{"segment", f.segment},
           {"feature_version", f.feature_version},
           {"ssd", f.ssd.values},
           {"rp", f.rp.values}};
}

inline void from_json(const Json& j, SegmentFeatures& f) {
  j.at("segment").get_to(f.segment);
  j.at("feature_version").get_to(f.feature_version);
  j.at("ssd").get_to(f.ssd.values);
  j.at("rp").get_to(f.rp.values);
}

inline void to_json(Json& j, const EventDetection& e) {
  j = Json{{"video_id", e.video_id}, {"t_start_s", e.t_start_s},     {"t_end_s", e.t_end_s},
           {"label", e.label},       {"probability", e.probability}, {"detector_id", e.detector_id}};
}

inline void from_json(const Json& j, EventDetection& e) {
  j.at("video_id").get_to(e.video_id);
  j.at("t_start_s").get_to(e.t_start_s);
  j.at("t_end_s").get_to(e.t_end_s);
  j.at("label").get_to(e.label);
  j.at("probability").get_to(e.probability);
  j.at("detector_id").get_to(e.detector_id);
}

inline void to_json(Json& j, const OnsetEnvelope& e) {
  j = Json{{"video_id", e.video_id}, {"rate", e.rate}, {"values", e.values}};
}

inline void from_json(const Json& j, OnsetEnvelope& e) {
  j.at("video_id").get_to(e.video_id);
  j.at("rate").get_to(e.rate);
  j.at("values").get_to(e.values);
}

inline void to_json(Json& j, const OffsetEstimate& e) {
  j = Json{{"video_a", e.video_a}, {"video_b", e.video_b}, {"lag", e.lag},
           {"offset_s", e.offset_s}, {"cost", e.cost},     {"confidence", e.confidence}};
}

inline void from_json(const Json& j, OffsetEstimate& e) {
  j.at("video_a").get_to(e.video_a);
  j.at("video_b").get_to(e.video_b);
  j.at("lag").get_to(e.lag);
  j.at("offset_s").get_to(e.offset_s);
  j.at("cost").get_to(e.cost);
  j.at("confidence").get_to(e.confidence);
}

inline void to_json(Json& j, const SyncCluster& c) {
  j = Json{{"cluster_id", c.cluster_id},
           {"members", c.members},
           {"reference", c.reference},
           {"member_offsets", c.member_offsets},
           {"edges", c.edges}};
}

inline void from_json(const Json& j, SyncCluster& c) {
  j.at("cluster_id").get_to(c.cluster_id);
  j.at("members").get_to(c.members);
  j.at("reference").get_to(c.reference);
  j.at("member_offsets").get_to(c.member_offsets);
  j.at("edges").get_to(c.edges);
}

inline void to_json(Json& j, const PlaybackEntry& p) {
  j = Json{{"video_id", p.video_id}, {"start_delay_s", p.start_delay_s}};
}

inline void to_json(Json& j, const SimilarityHit& h) {
  Json groups = Json::object();
  for (std::size_t g = 0; g < kDistanceGroups; ++g) groups[kGroupNames[g]] = h.group_distances[g];
  j = Json{{"video_id", h.segment.video_id},
           {"segment_index", h.segment.segment_index},
           {"start_s", h.segment.start_s},
           {"end_s", h.segment.end_s()},
           {"rank", h.rank},
           {"fused_rank_score", h.fused_rank_score},
           {"group_distances", groups}};
}

inline void to_json(Json& j, const CurvePoint& p) {
  j = Json{{"t_s", p.t_s}, {"probability", p.probability}};
}

}  // namespace flaf
