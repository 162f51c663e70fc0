#pragma once

#include <cmath>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "flaf/error.hpp"
#include "flaf/events.hpp"
#include "flaf/index.hpp"
#include "flaf/json_io.hpp"
#include "flaf/pipeline.hpp"
#include "flaf/similarity.hpp"
#include "flaf/sync.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen
#include <httplib.h>

namespace flaf {

inline constexpr std::size_t kDefaultPageLimit = 100;
inline constexpr std::size_t kMaxPageLimit = 10000;
inline constexpr std::size_t kDefaultSimilarK = 10;

struct ApiError {
  int status = 500;
  std::string code;
  std::string message;
};

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownVideo:
    case ErrorCode::kUnknownSegment:
    case ErrorCode::kUnknownDetector: return 404;
    case ErrorCode::kDuplicateVideo: return 409;
    case ErrorCode::kUnsupportedEncoding: return 415;
    case ErrorCode::kMalformedRiff:
    case ErrorCode::kEmptyClip:
    case ErrorCode::kTooShort:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kMissingGroup:
    case ErrorCode::kInsufficientOverlap: return 422;
    case ErrorCode::kSpecInvalid:
    case ErrorCode::kNoInputs:
    case ErrorCode::kInvalidArgument: return 400;
    case ErrorCode::kDataDirLocked: return 423;
    case ErrorCode::kPortInUse:
    case ErrorCode::kCorruptLog:
    case ErrorCode::kIo: return 500;
  }
  return 500;
}

inline ApiError to_api_error(const Error& e) {
  return {http_status_for(e.code()), std::string(error_code_name(e.code())), e.what()};
}

inline Json error_body(const ApiError& e) {
  return Json{{"status", e.status}, {"code", e.code}, {"message", e.message}};
}

struct Page {
  std::size_t limit = kDefaultPageLimit;
  std::size_t offset = 0;
};

inline Json paginate(const Json& array, const Page& page) {
  Json out = Json::array();
  for (std::size_t i = page.offset; i < array.size() && out.size() < page.limit; ++i) out.push_back(array[i]);
  return out;
}

// One handler per endpoint, shared by the HTTP server and the CLI so both
// return the same payloads.
class QueryService {
 public:
  QueryService(FusionIndex& index, std::filesystem::path data_dir, std::size_t workers = 1)
      : index_(index), data_dir_(std::move(data_dir)), workers_(std::max<std::size_t>(workers, 1)) {}

  Json videos(const Page& page = {}) const {
    Json all = Json::array();
    for (const auto& v : index_.videos()) {
      const auto c = index_.counts(v.video_id);
      Json j = v;
      j["counts"] = {{"segments", c.segments}, {"events", c.events}, {"visual", c.visual}, {"envelope", c.envelope}};
      all.push_back(std::move(j));
    }
    return paginate(all, page);
  }

  Json timeline(const std::string& video_id, std::optional<double> from, std::optional<double> to,
                const Page& page = {}) const {
    check_range(from, to);
    return paginate(Json(index_.timeline(video_id, from, to)), page);
  }

  Json events(const EventFilter& filter, const Page& page = {}) const {
    check_range(filter.t_from, filter.t_to);
    if (filter.min_probability && !(*filter.min_probability >= 0.0 && *filter.min_probability <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "min_p must lie in [0, 1]");
    }
    return paginate(Json(index_.query_events(filter)), page);
  }

  // The query segment is the one containing t: index floor(t / 6).
  Json similar(const std::string& video_id, double t_s, std::size_t k, bool exclude_self) const {
    if (!std::isfinite(t_s) || t_s < 0.0) throw Error(ErrorCode::kInvalidArgument, "t must be a non-negative number");
    if (k < 1 || k > kMaxPageLimit) throw Error(ErrorCode::kInvalidArgument, "k out of range");
    if (!index_.has_video(video_id)) throw Error(ErrorCode::kUnknownVideo, "unknown video " + video_id);
    const auto corpus = index_.all_segments();
    const int seg = static_cast<int>(std::floor(t_s / kSegmentSeconds));
    QueryOptions q;
    q.k = k;
    if (exclude_self) q.exclude_video = video_id;
    return Json(query_similar(video_id, seg, corpus, q));
  }

  Json clusters(const Page& page = {}) const {
    Json all = Json::array();
    for (const auto& c : index_.clusters()) {
      Json j = c;
      j["playback"] = playback_schedule(c);
      all.push_back(std::move(j));
    }
    return paginate(all, page);
  }

  Json build_sync() {
    std::lock_guard lock(write_mu_);
    SyncOptions sopts;
    sopts.workers = workers_;
    const auto cl = build_sync_clusters(index_.all_segments(), index_.envelopes(), sopts);
    std::vector<OffsetEstimate> edges;
    for (const auto& c : cl) edges.insert(edges.end(), c.edges.begin(), c.edges.end());
    index_.put_offsets(edges);
    index_.put_clusters(cl);
    return clusters({kMaxPageLimit, 0});
  }

  Json curve(const std::string& video_id, const std::string& label) const {
    const auto rec = index_.video(video_id);
    if (!Taxonomy::defaults().contains(label)) throw Error(ErrorCode::kInvalidArgument, "unknown label " + label);
    const auto artifact = data_dir_ / "artifacts" / detail::safe_file_name(video_id) / "audio.wav";
    AudioClip clip;
    if (std::filesystem::is_regular_file(artifact)) {
      clip = decode_wav(read_file_bytes(artifact), video_id);
    } else {
      clip = resample_to_canonical(decode_wav(read_file_bytes(rec.source_path), video_id));
    }
    return Json(probability_curve(clip, label));
  }

  Json ingest(const std::vector<std::filesystem::path>& paths, const IngestOptions& io = {}) {
    std::lock_guard lock(write_mu_);
    const auto run = run_ingest(index_, data_dir_, paths, workers_, io);
    return Json(run.report);
  }

  Json visual(const std::string& video_id, std::string_view jsonl) {
    const auto r = index_.ingest_visual(video_id, jsonl);
    Json rejected = Json::array();
    for (const auto& x : r.rejected) rejected.push_back({{"line", x.line}, {"reason", x.reason}});
    return Json{{"video_id", video_id}, {"accepted", r.accepted}, {"rejected", rejected}};
  }

  FusionIndex& index() { return index_; }

 private:
  static void check_range(std::optional<double> from, std::optional<double> to) {
    if ((from && !std::isfinite(*from)) || (to && !std::isfinite(*to))) {
      throw Error(ErrorCode::kInvalidArgument, "from/to must be finite");
    }
    if (from && to && *from > *to) throw Error(ErrorCode::kInvalidArgument, "from must not exceed to");
  }

  FusionIndex& index_;
  std::filesystem::path data_dir_;
  std::size_t workers_;
  std::mutex write_mu_;  // one ingestion or sync build at a time
};

namespace detail {

inline std::optional<double> query_double(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto text = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a number");
}

inline std::optional<std::size_t> query_size(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto text = req.get_param_value(key);
  if (text.empty() || text.size() > 9 || !std::all_of(text.begin(), text.end(), ::isdigit)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a non-negative integer");
  }
  return std::stoul(text);
}

inline std::optional<std::string> query_string(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

inline bool query_bool(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return false;
  const auto v = req.get_param_value(key);
  if (v == "" || v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be true or false");
}

inline Page query_page(const httplib::Request& req) {
  Page p;
  if (auto l = query_size(req, "limit")) {
    if (*l < 1 || *l > kMaxPageLimit) throw Error(ErrorCode::kInvalidArgument, "limit out of range");
    p.limit = *l;
  }
  if (auto o = query_size(req, "offset")) p.offset = *o;
  return p;
}

inline void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.status, error_body(e)); }

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, fn(req));
    } catch (const Error& e) {
      send_error(res, to_api_error(e));
    } catch (const Json::exception& e) {
      send_error(res, {400, "bad_request", std::string("invalid json: ") + e.what()});
    } catch (const std::exception& e) {
      send_error(res, {500, "internal", e.what()});
    }
  };
}

}  // namespace detail

inline void install_routes(httplib::Server& srv, QueryService& svc) {
  using detail::guarded;
  srv.Get("/videos", guarded([&svc](const httplib::Request& req) { return svc.videos(detail::query_page(req)); }));
  srv.Get(R"(/videos/([^/]+)/timeline)", guarded([&svc](const httplib::Request& req) {
            return svc.timeline(req.matches[1], detail::query_double(req, "from"), detail::query_double(req, "to"),
                                detail::query_page(req));
          }));
  srv.Get(R"(/videos/([^/]+)/events/([^/]+)/curve)", guarded([&svc](const httplib::Request& req) {
            return svc.curve(req.matches[1], req.matches[2]);
          }));
  srv.Get("/events", guarded([&svc](const httplib::Request& req) {
            EventFilter f;
            f.label = detail::query_string(req, "label");
            f.min_probability = detail::query_double(req, "min_p");
            f.video_id = detail::query_string(req, "video");
            f.t_from = detail::query_double(req, "from");
            f.t_to = detail::query_double(req, "to");
            return svc.events(f, detail::query_page(req));
          }));
  srv.Get("/similar", guarded([&svc](const httplib::Request& req) {
            const auto video = detail::query_string(req, "video");
            const auto t = detail::query_double(req, "t");
            if (!video || !t) throw Error(ErrorCode::kInvalidArgument, "video and t are required");
            return svc.similar(*video, *t, detail::query_size(req, "k").value_or(kDefaultSimilarK),
                               detail::query_bool(req, "exclude_self"));
          }));
  srv.Get("/sync/clusters",
          guarded([&svc](const httplib::Request& req) { return svc.clusters(detail::query_page(req)); }));
  srv.Post("/sync/build", guarded([&svc](const httplib::Request&) { return svc.build_sync(); }));
  srv.Post("/ingest", guarded([&svc](const httplib::Request& req) {
             const auto body = Json::parse(req.body);
             if (!body.is_object() || !body.contains("paths") || !body["paths"].is_array()) {
               throw Error(ErrorCode::kInvalidArgument, "body must be {\"paths\": [...]}");
             }
             std::vector<std::filesystem::path> paths;
             for (const auto& p : body["paths"]) {
               if (!p.is_string()) throw Error(ErrorCode::kInvalidArgument, "paths must be strings");
               paths.emplace_back(p.get<std::string>());
             }
             return svc.ingest(paths);
           }));
  srv.Post(R"(/visual/([^/]+))", guarded([&svc](const httplib::Request& req) {
             return svc.visual(req.matches[1], req.body);
           }));
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const int status = res.status;
    detail::send_error(res, {status, status == 404 ? "not_found" : "http_error", httplib::status_message(status)});
    return httplib::Server::HandlerResponse::Handled;
  });
}

// Owns the bound server and its listener thread.
class HttpServer {
 public:
  HttpServer(QueryService& svc, const std::string& host, int port) {
    srv_.new_task_queue = [] { return new httplib::ThreadPool(std::max(4u, std::thread::hardware_concurrency())); };
    // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
    // would let a second server share the port silently
    srv_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    install_routes(srv_, svc);
    if (port == 0) {
      port_ = srv_.bind_to_any_port(host);
      if (port_ < 0) throw Error(ErrorCode::kPortInUse, "cannot bind " + host);
    } else {
      if (!srv_.bind_to_port(host, port)) {
        throw Error(ErrorCode::kPortInUse, "cannot bind " + host + ":" + std::to_string(port));
      }
      port_ = port;
    }
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~HttpServer() { stop(); }
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int port() const { return port_; }
  void wait() {
    if (thread_.joinable()) thread_.join();
  }
  void stop() {
    srv_.stop();
    wait();
  }

 private:
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace flaf
