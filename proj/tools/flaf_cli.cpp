// flaf: command-line front end over the same handlers the HTTP service uses.

#include <CLI11.hpp>

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "flaf/pipeline.hpp"
#include "flaf/service.hpp"

using namespace flaf;

namespace {

struct Globals {
  std::string data_dir = "flaf-data";
  bool json = false;
  std::size_t workers = 1;
};

void print_json(const Json& j) { std::cout << j.dump(2) << '\n'; }

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void print_events(const Json& events) {
  for (const auto& e : events) {
    std::cout << e["video_id"].get<std::string>() << "  " << fmt(e["t_start_s"]) << "-" << fmt(e["t_end_s"])
              << "  " << e["label"].get<std::string>() << "  p=" << fmt(e["probability"]) << "\n";
  }
  std::cout << events.size() << " event(s)\n";
}

void print_hits(const Json& hits) {
  for (const auto& h : hits) {
    std::cout << h["rank"].get<int>() << ". " << h["video_id"].get<std::string>() << " #"
              << h["segment_index"].get<int>() << "  " << fmt(h["start_s"], 1) << "-" << fmt(h["end_s"], 1)
              << " s  score=" << fmt(h["fused_rank_score"], 2) << "\n";
  }
}

void print_timeline(const Json& items) {
  for (const auto& a : items) {
    std::cout << fmt(a["t_start_s"]) << "-" << fmt(a["t_end_s"]) << "  " << a["kind"].get<std::string>() << "  "
              << a["label"].get<std::string>() << "\n";
  }
}

void print_clusters(const Json& clusters) {
  for (const auto& c : clusters) {
    std::cout << c["cluster_id"].get<std::string>() << "  reference=" << c["reference"].get<std::string>() << "\n";
    for (const auto& p : c["playback"]) {
      std::cout << "  " << p["video_id"].get<std::string>() << "  offset "
                << fmt(c["member_offsets"][p["video_id"].get<std::string>()]) << " s  start after "
                << fmt(p["start_delay_s"]) << " s\n";
    }
  }
  std::cout << clusters.size() << " cluster(s)\n";
}

void print_report(const Json& report) {
  for (const auto& j : report["jobs"]) {
    std::cout << j["job"].get<std::string>() << "  " << j["status"].get<std::string>()
              << (j["reused"].get<bool>() ? " (reused)" : "") << "  attempts=" << j["attempts"].get<int>();
    if (j.contains("error")) std::cout << "  " << j["error"].get<std::string>();
    std::cout << "\n";
  }
}

std::filesystem::path data_path(const Globals& g) { return g.data_dir; }

IndexOptions read_only() {
  IndexOptions o;
  o.read_only = true;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flaf: audio forensic indexing engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--data-dir", g.data_dir, "Data directory (index, artifacts, run state)");
  app.add_flag("--json", g.json, "Machine-readable JSON on stdout");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::Range(1, 256));

  std::function<int()> action;

  auto* ingest = app.add_subcommand("ingest", "Ingest WAV files");
  std::vector<std::string> ingest_paths;
  ingest->add_option("paths", ingest_paths, "WAV files")->required();
  ingest->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)));
      QueryService svc(index, data_path(g), g.workers);
      std::vector<std::filesystem::path> paths(ingest_paths.begin(), ingest_paths.end());
      const auto report = svc.ingest(paths);
      g.json ? print_json(report) : print_report(report);
      return report["ok"].get<bool>() ? 0 : 1;
    };
  });

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->callback([&] {
    action = [&] {
      // block before any thread starts so only sigwait sees these
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
      FusionIndex index(index_dir_of(data_path(g)));
      QueryService svc(index, data_path(g), g.workers);
      HttpServer server(svc, host, port);
      std::cerr << "listening on " << host << ":" << server.port() << std::endl;
      if (g.json) print_json(Json{{"host", host}, {"port", server.port()}});
      std::cout.flush();
      int sig = 0;
      sigwait(&stop_signals, &sig);
      server.stop();
      return 0;
    };
  });

  auto* events = app.add_subcommand("events", "Query acoustic events");
  std::optional<std::string> label, video;
  std::optional<double> min_p, from, to;
  std::size_t limit = kDefaultPageLimit, offset = 0;
  events->add_option("--label", label);
  events->add_option("--min-p", min_p);
  events->add_option("--video", video);
  events->add_option("--from", from);
  events->add_option("--to", to);
  events->add_option("--limit", limit)->check(CLI::Range(std::size_t{1}, kMaxPageLimit));
  events->add_option("--offset", offset);
  events->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)), read_only());
      QueryService svc(index, data_path(g));
      const auto out = svc.events({label, min_p, video, from, to}, {limit, offset});
      g.json ? print_json(out) : print_events(out);
      return 0;
    };
  });

  auto* similar = app.add_subcommand("similar", "Segments similar to the one at --t in --video");
  std::string sim_video;
  double sim_t = 0.0;
  std::size_t sim_k = kDefaultSimilarK;
  bool exclude_self = false;
  similar->add_option("--video", sim_video)->required();
  similar->add_option("--t", sim_t)->required();
  similar->add_option("--k", sim_k)->check(CLI::Range(std::size_t{1}, kMaxPageLimit));
  similar->add_flag("--exclude-self", exclude_self);
  similar->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)), read_only());
      QueryService svc(index, data_path(g));
      const auto out = svc.similar(sim_video, sim_t, sim_k, exclude_self);
      g.json ? print_json(out) : print_hits(out);
      return 0;
    };
  });

  auto* sync = app.add_subcommand("sync", "Show sync clusters; --build recomputes them");
  bool build = false;
  sync->add_flag("--build", build);
  sync->callback([&] {
    action = [&] {
      if (build) {
        FusionIndex index(index_dir_of(data_path(g)));
        QueryService svc(index, data_path(g), g.workers);
        const auto out = svc.build_sync();
        g.json ? print_json(out) : print_clusters(out);
      } else {
        FusionIndex index(index_dir_of(data_path(g)), read_only());
        QueryService svc(index, data_path(g));
        const auto out = svc.clusters({kMaxPageLimit, 0});
        g.json ? print_json(out) : print_clusters(out);
      }
      return 0;
    };
  });

  auto* timeline = app.add_subcommand("timeline", "Fused timeline of one video");
  std::string tl_video;
  std::optional<double> tl_from, tl_to;
  std::size_t tl_limit = kDefaultPageLimit, tl_offset = 0;
  timeline->add_option("--video", tl_video)->required();
  timeline->add_option("--from", tl_from);
  timeline->add_option("--to", tl_to);
  timeline->add_option("--limit", tl_limit)->check(CLI::Range(std::size_t{1}, kMaxPageLimit));
  timeline->add_option("--offset", tl_offset);
  timeline->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)), read_only());
      QueryService svc(index, data_path(g));
      const auto out = svc.timeline(tl_video, tl_from, tl_to, {tl_limit, tl_offset});
      g.json ? print_json(out) : print_timeline(out);
      return 0;
    };
  });

  auto* videos = app.add_subcommand("videos", "List catalogued videos");
  videos->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)), read_only());
      QueryService svc(index, data_path(g));
      const auto out = svc.videos({kMaxPageLimit, 0});
      if (g.json) {
        print_json(out);
      } else {
        for (const auto& v : out) {
          std::cout << v["video_id"].get<std::string>() << "  " << fmt(v["duration_s"], 2) << " s  "
                    << v["source_path"].get<std::string>() << "\n";
        }
      }
      return 0;
    };
  });

  auto* visual = app.add_subcommand("visual", "Ingest visual detections (JSON lines) for a video");
  std::string vis_video, vis_file;
  visual->add_option("--video", vis_video)->required();
  visual->add_option("file", vis_file)->required()->check(CLI::ExistingFile);
  visual->callback([&] {
    action = [&] {
      FusionIndex index(index_dir_of(data_path(g)));
      QueryService svc(index, data_path(g));
      const auto bytes = read_file_bytes(vis_file);
      const auto out = svc.visual(vis_video, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      if (g.json) {
        print_json(out);
      } else {
        std::cout << out["accepted"].get<std::size_t>() << " accepted, " << out["rejected"].size() << " rejected\n";
        for (const auto& r : out["rejected"]) {
          std::cout << "  line " << r["line"].get<std::size_t>() << ": " << r["reason"].get<std::string>() << "\n";
        }
      }
      return 0;
    };
  });

  auto* validate = app.add_subcommand("validate-dag", "Check a DAG file");
  std::string dag_file;
  validate->add_option("file", dag_file)->required();
  validate->callback([&] {
    action = [&] {
      const auto v = validate_dag(load_dag_file(dag_file));
      if (g.json) {
        print_json(v);
      } else if (v.ok) {
        std::cout << "ok:";
        for (const auto& id : v.order) std::cout << ' ' << id;
        std::cout << "\n";
      } else {
        std::cout << "invalid: " << v.summary() << "\n";
      }
      return v.ok ? 0 : 1;
    };
  });

  auto* run = app.add_subcommand("run-dag", "Run a DAG file (external commands plus builtin noop)");
  std::string run_file, state_dir;
  run->add_option("file", run_file)->required();
  run->add_option("--state-dir", state_dir, "Run state (default <data-dir>/runs/<file stem>)");
  run->callback([&] {
    action = [&] {
      const auto dag = load_dag_file(run_file);
      BuiltinRegistry builtins{{"noop", [](const JobContext&) {}}};
      RunOptions ro;
      ro.workers = g.workers;
      ro.state_dir = state_dir.empty() ? data_path(g) / "runs" / std::filesystem::path(run_file).stem() : std::filesystem::path(state_dir);
      ro.work_dir = std::filesystem::absolute(run_file).parent_path();
      ro.builtins = &builtins;
      const Json report = run_dag(dag, ro);
      g.json ? print_json(report) : print_report(report);
      return report["ok"].get<bool>() ? 0 : 1;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return action();
  } catch (const Error& e) {
    const auto api = to_api_error(e);
    if (g.json) {
      std::cerr << error_body(api).dump() << "\n";
    } else {
      std::cerr << "error: " << api.code << ": " << api.message << "\n";
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
