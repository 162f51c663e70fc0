#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <ctime>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "flaf/dsp.hpp"
#include "flaf/error.hpp"
#include "flaf/events.hpp"
#include "flaf/feature_file.hpp"
#include "flaf/features.hpp"
#include "flaf/hash.hpp"
#include "flaf/index.hpp"
#include "flaf/json_io.hpp"
#include "flaf/media_io.hpp"
#include "flaf/subprocess.hpp"

namespace flaf {

namespace fs = std::filesystem;

struct JobSpec {
  std::string id;
  std::vector<std::string> cmd;  // argv; empty for builtin jobs
  std::string builtin;
  Json args = Json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  int retry_limit = 0;
  double timeout_s = 0.0;
};

struct DagSpec {
  std::vector<JobSpec> jobs;
  std::vector<std::pair<std::string, std::string>> edges;  // parent -> child
};

inline void to_json(Json& j, const JobSpec& s) {
  j = Json{{"id", s.id}, {"inputs", s.inputs}, {"outputs", s.outputs},
           {"retry_limit", s.retry_limit}, {"timeout_s", s.timeout_s}};
  if (!s.cmd.empty()) j["cmd"] = s.cmd;
  if (!s.builtin.empty()) {
    j["builtin"] = s.builtin;
    j["args"] = s.args;
  }
}

inline void to_json(Json& j, const DagSpec& d) {
  j = Json{{"jobs", d.jobs}, {"edges", Json::array()}};
  for (const auto& [a, b] : d.edges) j["edges"].push_back(Json::array({a, b}));
}

// Structural problems (wrong types, missing ids) raise SpecInvalid here;
// graph problems are left for validate_dag to report.
inline DagSpec parse_dag(const Json& j) {
  auto bad = [](const std::string& m) { return Error(ErrorCode::kSpecInvalid, m); };
  if (!j.is_object() || !j.contains("jobs") || !j["jobs"].is_array()) {
    throw bad("dag must be an object with a jobs array");
  }
  DagSpec d;
  for (const auto& jj : j["jobs"]) {
    if (!jj.is_object()) throw bad("job must be an object");
    JobSpec s;
    if (!jj.contains("id") || !jj["id"].is_string()) throw bad("job id must be a string");
    s.id = jj["id"].get<std::string>();
    if (jj.contains("cmd")) {
      const auto& c = jj["cmd"];
      if (c.is_string()) {
        s.cmd = {"/bin/sh", "-c", c.get<std::string>(), "sh"};
      } else if (c.is_array() && !c.empty() &&
                 std::all_of(c.begin(), c.end(), [](const Json& x) { return x.is_string(); })) {
        s.cmd = c.get<std::vector<std::string>>();
      } else {
        throw bad("job " + s.id + ": cmd must be a string or non-empty string array");
      }
    }
    if (jj.contains("builtin")) {
      if (!jj["builtin"].is_string()) throw bad("job " + s.id + ": builtin must be a string");
      s.builtin = jj["builtin"].get<std::string>();
    }
    if (jj.contains("args")) s.args = jj["args"];
    for (const char* key : {"inputs", "outputs"}) {
      if (!jj.contains(key)) continue;
      const auto& arr = jj[key];
      if (!arr.is_array() ||
          !std::all_of(arr.begin(), arr.end(), [](const Json& x) { return x.is_string(); })) {
        throw bad("job " + s.id + ": " + key + " must be a string array");
      }
      (std::string(key) == "inputs" ? s.inputs : s.outputs) = arr.get<std::vector<std::string>>();
    }
    if (jj.contains("retry_limit")) {
      if (!jj["retry_limit"].is_number_integer()) throw bad("job " + s.id + ": retry_limit must be an integer");
      s.retry_limit = jj["retry_limit"].get<int>();
    }
    if (jj.contains("timeout_s")) {
      if (!jj["timeout_s"].is_number()) throw bad("job " + s.id + ": timeout_s must be a number");
      s.timeout_s = jj["timeout_s"].get<double>();
    }
    d.jobs.push_back(std::move(s));
  }
  if (j.contains("edges")) {
    if (!j["edges"].is_array()) throw bad("edges must be an array");
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
        throw bad("edge must be a pair of job ids");
      }
      d.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
  }
  return d;
}

inline DagSpec load_dag_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kSpecInvalid, std::string("dag file is not json: ") + e.what());
  }
  return parse_dag(j);
}

struct DagValidation {
  bool ok = false;
  std::vector<std::string> order;
  std::vector<std::string> cycle;  // closed walk, first == last
  std::vector<std::string> unknown_nodes;
  std::vector<std::string> duplicate_ids;
  std::vector<std::string> problems;

  std::string summary() const {
    std::string s;
    auto add = [&](const std::string& head, const std::vector<std::string>& v, const char* sep) {
      if (v.empty()) return;
      if (!s.empty()) s += "; ";
      s += head;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    };
    add("cycle: ", cycle, " -> ");
    add("unknown nodes: ", unknown_nodes, ", ");
    add("duplicate ids: ", duplicate_ids, ", ");
    add("", problems, "; ");
    return s;
  }
};

inline void to_json(Json& j, const DagValidation& v) {
  j = Json{{"ok", v.ok}, {"order", v.order}, {"cycle", v.cycle}, {"unknown_nodes", v.unknown_nodes},
           {"duplicate_ids", v.duplicate_ids}, {"problems", v.problems}};
}

namespace detail {

// Adjacency over job indices; duplicate edges collapse.
struct DagGraph {
  std::vector<std::vector<std::size_t>> children, parents;
};

inline DagGraph build_graph(const DagSpec& d, const std::map<std::string, std::size_t>& index) {
  DagGraph g;
  g.children.resize(d.jobs.size());
  g.parents.resize(d.jobs.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [a, b] : d.edges) {
    const auto ia = index.at(a), ib = index.at(b);
    if (!seen.insert({ia, ib}).second) continue;
    g.children[ia].push_back(ib);
    g.parents[ib].push_back(ia);
  }
  return g;
}

// Kahn's algorithm, ties broken by declaration order.
inline std::vector<std::size_t> topo_order(const DagGraph& g) {
  const std::size_t n = g.children.size();
  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = g.parents[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    order.push_back(i);
    for (auto c : g.children[i]) {
      if (--indeg[c] == 0) ready.push(c);
    }
  }
  return order;
}

inline std::vector<std::size_t> find_cycle(const DagGraph& g) {
  const std::size_t n = g.children.size();
  std::vector<int> colour(n, 0);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> cycle;
  std::function<bool(std::size_t)> dfs = [&](std::size_t u) {
    colour[u] = 1;
    stack.push_back(u);
    for (auto v : g.children[u]) {
      if (colour[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        cycle.assign(it, stack.end());
        cycle.push_back(v);
        return true;
      }
      if (colour[v] == 0 && dfs(v)) return true;
    }
    stack.pop_back();
    colour[u] = 2;
    return false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (colour[i] == 0 && dfs(i)) break;
  }
  return cycle;
}

}  // namespace detail

inline DagValidation validate_dag(const DagSpec& d) {
  DagValidation v;
  std::map<std::string, std::size_t> index;
  std::set<std::string> dups;
  for (std::size_t i = 0; i < d.jobs.size(); ++i) {
    const auto& job = d.jobs[i];
    if (job.id.empty()) v.problems.push_back("job " + std::to_string(i) + " has an empty id");
    if (!index.emplace(job.id, i).second) dups.insert(job.id);
    if (job.cmd.empty() == job.builtin.empty()) {
      v.problems.push_back("job " + job.id + " needs exactly one of cmd or builtin");
    }
    if (job.retry_limit < 0) v.problems.push_back("job " + job.id + " has a negative retry_limit");
    if (job.timeout_s < 0.0 || !std::isfinite(job.timeout_s)) {
      v.problems.push_back("job " + job.id + " has an invalid timeout_s");
    }
  }
  v.duplicate_ids.assign(dups.begin(), dups.end());
  std::set<std::string> unknown;
  for (const auto& [a, b] : d.edges) {
    if (!index.count(a)) unknown.insert(a);
    if (!index.count(b)) unknown.insert(b);
  }
  v.unknown_nodes.assign(unknown.begin(), unknown.end());
  if (!v.duplicate_ids.empty() || !v.unknown_nodes.empty()) return v;

  const auto g = detail::build_graph(d, index);
  const auto order = detail::topo_order(g);
  if (order.size() != d.jobs.size()) {
    for (auto i : detail::find_cycle(g)) v.cycle.push_back(d.jobs[i].id);
    return v;
  }
  for (auto i : order) v.order.push_back(d.jobs[i].id);
  v.ok = v.problems.empty();
  return v;
}

enum class JobStatus { kSucceeded, kFailed, kSkipped };

inline std::string_view job_status_name(JobStatus s) {
  switch (s) {
    case JobStatus::kSucceeded: return "succeeded";
    case JobStatus::kFailed: return "failed";
    case JobStatus::kSkipped: return "skipped";
  }
  return "?";
}

struct JobResult {
  std::string job_id;
  JobStatus status = JobStatus::kSkipped;
  int attempts = 0;
  double wall_time_s = 0.0;
  std::map<std::string, std::string> output_hashes;  // path -> sha256
  bool reused = false;                                // satisfied from a previous run
  std::string error;
};

inline void to_json(Json& j, const JobResult& r) {
  j = Json{{"job", r.job_id},          {"status", job_status_name(r.status)},
           {"attempts", r.attempts},   {"wall_time_s", r.wall_time_s},
           {"outputs", r.output_hashes}, {"reused", r.reused}};
  if (!r.error.empty()) j["error"] = r.error;
}

struct JobContext {
  const JobSpec& job;
  int attempt = 1;
  fs::path scratch_dir;
  fs::path work_dir;

  fs::path resolve(const std::string& p) const { return work_dir / p; }
  fs::path input(std::size_t i) const { return resolve(job.inputs.at(i)); }
  fs::path output(std::size_t i) const { return resolve(job.outputs.at(i)); }
};

using BuiltinOp = std::function<void(const JobContext&)>;
using BuiltinRegistry = std::map<std::string, BuiltinOp>;

struct RunOptions {
  std::size_t workers = 1;
  fs::path state_dir;  // job records, scratch space and the event log
  fs::path work_dir;   // relative inputs and outputs resolve here; empty = cwd
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
  const BuiltinRegistry* builtins = nullptr;
  bool resume = true;
};

struct RunReport {
  std::map<std::string, JobResult> results;
  fs::path event_log;

  bool all_succeeded() const {
    return std::all_of(results.begin(), results.end(),
                       [](const auto& kv) { return kv.second.status == JobStatus::kSucceeded; });
  }
};

inline void to_json(Json& j, const RunReport& r) {
  j = Json{{"ok", r.all_succeeded()}, {"event_log", r.event_log.string()}, {"jobs", Json::array()}};
  for (const auto& [id, res] : r.results) j["jobs"].push_back(res);
}

namespace detail {

inline std::string safe_file_name(const std::string& id) {
  std::string out;
  bool changed = false;
  for (char c : id) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') {
      out += c;
    } else {
      out += '_';
      changed = true;
    }
  }
  if (changed || out.empty() || out[0] == '.') out += "-" + sha256_hex(id).substr(0, 12);
  return out;
}

inline double epoch_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Job identity: its definition plus the content of every input. A record
// is reusable when this matches and every output still hashes as recorded.
inline std::string job_fingerprint(const JobSpec& job, const fs::path& work_dir) {
  Json j = job;
  Json inputs = Json::object();
  for (const auto& in : job.inputs) {
    const auto p = work_dir / in;
    std::error_code ec;
    inputs[in] = fs::is_regular_file(p, ec) ? sha256_file(p) : std::string("absent");
  }
  j["input_hashes"] = inputs;
  return sha256_hex(j.dump());
}

enum class Outcome { kSucceeded, kReused, kFailed };

struct Completion {
  std::size_t job = 0;
  Outcome outcome = Outcome::kFailed;
  double wall_s = 0.0;
  std::map<std::string, std::string> hashes;
  std::string error;
};

class Executor {
 public:
  Executor(const DagSpec& dag, const RunOptions& opts, fs::path work_dir)
      : dag_(dag), opts_(opts), work_dir_(std::move(work_dir)) {}

  Completion run(std::size_t i, int attempt) const {
    const auto& job = dag_.jobs[i];
    Completion c;
    c.job = i;
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&](Outcome o) {
      c.outcome = o;
      c.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return c;
    };
    try {
      const auto fingerprint = job_fingerprint(job, work_dir_);
      const auto record = opts_.state_dir / "jobs" / (safe_file_name(job.id) + ".json");
      if (opts_.resume && reusable(record, fingerprint, c.hashes)) return finish(Outcome::kReused);
      c.hashes.clear();

      const auto scratch = opts_.state_dir / "scratch" / safe_file_name(job.id);
      fs::remove_all(scratch);
      fs::create_directories(scratch);
      for (const auto& out : job.outputs) fs::create_directories((work_dir_ / out).parent_path());
      JobContext ctx{job, attempt, scratch, work_dir_};
      if (!job.builtin.empty()) {
        opts_.builtins->at(job.builtin)(ctx);
      } else {
        run_external(ctx);
      }
      for (const auto& out : job.outputs) {
        const auto p = work_dir_ / out;
        if (!fs::is_regular_file(p)) throw Error(ErrorCode::kIo, "declared output missing: " + out);
        c.hashes[out] = sha256_file(p);
      }
      fs::remove_all(scratch);
      write_record(record, job, fingerprint, c.hashes);
      return finish(Outcome::kSucceeded);
    } catch (const std::exception& e) {
      c.error = e.what();
      return finish(Outcome::kFailed);
    }
  }

 private:
  bool reusable(const fs::path& record, const std::string& fingerprint,
                std::map<std::string, std::string>& hashes) const {
    std::error_code ec;
    if (!fs::is_regular_file(record, ec)) return false;
    Json r;
    try {
      std::ifstream in(record);
      r = Json::parse(in);
      if (r.at("fingerprint") != fingerprint) return false;
      const auto& recorded = r.at("outputs");
      for (auto it = recorded.begin(); it != recorded.end(); ++it) {
        const auto p = work_dir_ / it.key();
        if (!fs::is_regular_file(p, ec) || sha256_file(p) != it.value().get<std::string>()) return false;
        hashes[it.key()] = it.value().get<std::string>();
      }
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }

  static void write_record(const fs::path& record, const JobSpec& job, const std::string& fingerprint,
                           const std::map<std::string, std::string>& hashes) {
    fs::create_directories(record.parent_path());
    const Json r{{"job", job.id}, {"fingerprint", fingerprint}, {"outputs", hashes},
                 {"completed_at", utc_timestamp()}};
    const auto tmp = fs::path(record.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << r.dump(2) << '\n';
      if (!out) throw Error(ErrorCode::kIo, "cannot write job record " + tmp.string());
    }
    fs::rename(tmp, record);
  }

  // Inputs are passed as absolute paths; relative outputs the command left in
  // its scratch directory are moved into place.
  void run_external(const JobContext& ctx) const {
    auto argv = ctx.job.cmd;
    for (const auto& in : ctx.job.inputs) argv.push_back(fs::absolute(ctx.resolve(in)).string());
    ProcessOptions po;
    po.cwd = ctx.scratch_dir;
    po.timeout_s = ctx.job.timeout_s;
    po.env = {{"FLAF_SCRATCH_DIR", ctx.scratch_dir.string()},
              {"FLAF_WORK_DIR", fs::absolute(ctx.work_dir).string()},
              {"FLAF_JOB_ID", ctx.job.id},
              {"FLAF_ATTEMPT", std::to_string(ctx.attempt)}};
    const auto r = run_process(argv, po);
    if (r.timed_out) throw Error(ErrorCode::kIo, "timed out after " + std::to_string(ctx.job.timeout_s) + " s");
    if (r.exit_code != 0) {
      auto tail = r.stderr_text.substr(r.stderr_text.size() > 400 ? r.stderr_text.size() - 400 : 0);
      throw Error(ErrorCode::kIo, "exit code " + std::to_string(r.exit_code) + (tail.empty() ? "" : ": " + tail));
    }
    for (const auto& out : ctx.job.outputs) {
      if (fs::path(out).is_absolute()) continue;
      const auto staged = ctx.scratch_dir / out;
      std::error_code ec;
      if (fs::is_regular_file(staged, ec)) {
        fs::create_directories(ctx.resolve(out).parent_path());
        fs::rename(staged, ctx.resolve(out));
      }
    }
  }

  const DagSpec& dag_;
  const RunOptions& opts_;
  fs::path work_dir_;
};

// Fixed pool; tasks in, completions out. The destructor drains and joins.
class WorkerPool {
 public:
  WorkerPool(std::size_t n, std::function<Completion(std::size_t, int)> fn) : fn_(std::move(fn)) {
    for (std::size_t i = 0; i < n; ++i) threads_.emplace_back([this] { loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    task_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::size_t job, int attempt) {
    {
      std::lock_guard lock(mu_);
      tasks_.emplace_back(job, attempt);
    }
    task_cv_.notify_one();
  }

  // Waits until a completion arrives or `deadline` passes.
  std::vector<Completion> wait(std::optional<std::chrono::steady_clock::time_point> deadline) {
    std::unique_lock lock(mu_);
    auto pred = [&] { return !done_.empty(); };
    if (deadline) {
      done_cv_.wait_until(lock, *deadline, pred);
    } else {
      done_cv_.wait(lock, pred);
    }
    std::vector<Completion> out(std::make_move_iterator(done_.begin()), std::make_move_iterator(done_.end()));
    done_.clear();
    return out;
  }

 private:
  void loop() {
    for (;;) {
      std::pair<std::size_t, int> task;
      {
        std::unique_lock lock(mu_);
        task_cv_.wait(lock, [&] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = tasks_.front();
        tasks_.pop_front();
      }
      auto c = fn_(task.first, task.second);
      {
        std::lock_guard lock(mu_);
        done_.push_back(std::move(c));
      }
      done_cv_.notify_one();
    }
  }

  std::function<Completion(std::size_t, int)> fn_;
  std::mutex mu_;
  std::condition_variable task_cv_, done_cv_;
  std::deque<std::pair<std::size_t, int>> tasks_;
  std::deque<Completion> done_;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

class EventLog {
 public:
  explicit EventLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::kIo, "cannot open event log " + path.string());
  }
  void write(const std::string& job, const char* event, Json extra = Json::object()) {
    extra["ts"] = epoch_seconds();
    extra["job"] = job;
    extra["event"] = event;
    out_ << extra.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace detail

// Event log lines: {"ts", "job", "event"} plus "attempt" where relevant.
// Events: start, succeeded, reused, attempt_failed, retry_scheduled, failed, skipped.
inline RunReport run_dag(const DagSpec& dag, const RunOptions& opts) {
  const auto v = validate_dag(dag);
  if (!v.ok) throw Error(ErrorCode::kSpecInvalid, v.summary());
  if (opts.workers == 0) throw Error(ErrorCode::kInvalidArgument, "worker count must be at least 1");
  if (opts.state_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "state_dir is required");
  for (const auto& job : dag.jobs) {
    if (!job.builtin.empty() && (!opts.builtins || !opts.builtins->count(job.builtin))) {
      throw Error(ErrorCode::kSpecInvalid, "job " + job.id + " uses unknown builtin " + job.builtin);
    }
  }

  const std::size_t n = dag.jobs.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[dag.jobs[i].id] = i;
  const auto g = detail::build_graph(dag, index);
  std::vector<std::size_t> rank(n);
  {
    const auto order = detail::topo_order(g);
    for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;
  }

  fs::create_directories(opts.state_dir);
  const fs::path work_dir = opts.work_dir.empty() ? fs::current_path() : opts.work_dir;
  RunReport report;
  report.event_log = opts.state_dir / "events.jsonl";
  detail::EventLog log(report.event_log);
  for (const auto& job : dag.jobs) report.results[job.id].job_id = job.id;

  enum class St { kWaiting, kReady, kRunning, kBackoff, kDone };
  std::vector<St> st(n, St::kWaiting);
  std::vector<std::size_t> pending(n);
  std::vector<int> attempts(n, 0);
  auto by_rank = [&](std::size_t a, std::size_t b) { return rank[a] > rank[b]; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_rank)> ready(by_rank);
  using Clock = std::chrono::steady_clock;
  std::multimap<Clock::time_point, std::size_t> timers;
  std::size_t running = 0, done = 0;

  for (std::size_t i = 0; i < n; ++i) {
    pending[i] = g.parents[i].size();
    if (pending[i] == 0) {
      st[i] = St::kReady;
      ready.push(i);
    }
  }

  auto skip_descendants = [&](std::size_t root) {
    std::vector<std::size_t> stack(g.children[root].begin(), g.children[root].end());
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      if (st[u] == St::kDone) continue;
      st[u] = St::kDone;
      ++done;
      auto& r = report.results[dag.jobs[u].id];
      r.status = JobStatus::kSkipped;
      r.error = "ancestor " + dag.jobs[root].id + " failed";
      log.write(dag.jobs[u].id, "skipped", {{"cause", dag.jobs[root].id}});
      stack.insert(stack.end(), g.children[u].begin(), g.children[u].end());
    }
  };

  detail::Executor exec(dag, opts, work_dir);
  detail::WorkerPool pool(std::min(opts.workers, std::max<std::size_t>(n, 1)),
                          [&exec](std::size_t i, int attempt) { return exec.run(i, attempt); });

  while (done < n) {
    const auto now = Clock::now();
    while (!timers.empty() && timers.begin()->first <= now) {
      const auto i = timers.begin()->second;
      timers.erase(timers.begin());
      st[i] = St::kReady;
      ready.push(i);
    }
    while (running < opts.workers && !ready.empty()) {
      const auto i = ready.top();
      ready.pop();
      st[i] = St::kRunning;
      ++running;
      log.write(dag.jobs[i].id, "start", {{"attempt", attempts[i] + 1}});
      pool.submit(i, attempts[i] + 1);
    }
    if (running == 0 && timers.empty()) break;  // unreachable for a valid dag

    std::optional<Clock::time_point> deadline;
    if (!timers.empty()) deadline = timers.begin()->first;
    for (auto& c : pool.wait(deadline)) {
      --running;
      const auto i = c.job;
      const auto& job = dag.jobs[i];
      auto& r = report.results[job.id];
      r.wall_time_s += c.wall_s;
      if (c.outcome == detail::Outcome::kFailed) {
        ++attempts[i];
        r.attempts = attempts[i];
        r.error = c.error;
        log.write(job.id, "attempt_failed", {{"attempt", attempts[i]}, {"error", c.error}});
        if (attempts[i] <= job.retry_limit) {
          const double delay = opts.backoff_base_s * std::pow(opts.backoff_factor, attempts[i] - 1);
          st[i] = St::kBackoff;
          timers.emplace(Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                            std::chrono::duration<double>(delay)),
                         i);
          log.write(job.id, "retry_scheduled", {{"attempt", attempts[i] + 1}, {"delay_s", delay}});
        } else {
          st[i] = St::kDone;
          ++done;
          r.status = JobStatus::kFailed;
          log.write(job.id, "failed", {{"attempts", attempts[i]}});
          skip_descendants(i);
        }
        continue;
      }
      st[i] = St::kDone;
      ++done;
      r.status = JobStatus::kSucceeded;
      r.error.clear();
      r.output_hashes = std::move(c.hashes);
      if (c.outcome == detail::Outcome::kReused) {
        r.reused = true;
        log.write(job.id, "reused");
      } else {
        ++attempts[i];
        r.attempts = attempts[i];
        log.write(job.id, "succeeded", {{"attempt", attempts[i]}});
      }
      for (auto child : g.children[i]) {
        if (--pending[child] == 0 && st[child] == St::kWaiting) {
          st[child] = St::kReady;
          ready.push(child);
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ingestion workflow

inline constexpr const char* kIngestStages[] = {"decode", "melspec", "features", "events", "envelope", "index"};

struct IngestOptions {
  std::string ingest_time;  // empty = wall clock at index-put
};

// Per video: decode -> melspec -> {features, events, envelope} -> index,
// then one catalog-commit barrier. Artifact paths are relative to the run's
// work dir (the data dir).
inline DagSpec ingest_workflow(const std::vector<fs::path>& paths, const IngestOptions& io = {}) {
  if (paths.empty()) throw Error(ErrorCode::kNoInputs, "no input videos");
  DagSpec d;
  std::set<std::string> ids;
  std::vector<std::string> receipts;
  for (const auto& path : paths) {
    const auto vid = path.stem().string();
    if (vid.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot derive a video id from " + path.string());
    if (!ids.insert(vid).second) throw Error(ErrorCode::kDuplicateVideo, "two inputs map to video id " + vid);
    const std::string dir = "artifacts/" + detail::safe_file_name(vid) + "/";
    const auto src = fs::absolute(path).lexically_normal().string();
    auto job = [&](const char* stage, std::vector<std::string> in, std::vector<std::string> out) {
      JobSpec s;
      s.id = std::string(stage) + ":" + vid;
      s.builtin = std::string("ingest-") + stage;
      s.args = Json{{"video_id", vid}};
      s.inputs = std::move(in);
      s.outputs = std::move(out);
      return s;
    };
    auto decode = job("decode", {}, {dir + "audio.wav", dir + "meta.json"});
    decode.args["source_path"] = src;
    decode.args["source_sha256"] = sha256_file(path);
    d.jobs.push_back(decode);
    d.jobs.push_back(job("melspec", {dir + "audio.wav"}, {dir + "mel.bin"}));
    d.jobs.push_back(job("features", {dir + "audio.wav"}, {dir + "features.flaf"}));
    d.jobs.push_back(job("events", {dir + "audio.wav"}, {dir + "events.json"}));
    d.jobs.push_back(job("envelope", {dir + "mel.bin"}, {dir + "envelope.json"}));
    auto put = job("index", {dir + "meta.json", dir + "features.flaf", dir + "events.json", dir + "envelope.json"},
                   {dir + "indexed.json"});
    if (!io.ingest_time.empty()) put.args["ingest_time"] = io.ingest_time;
    d.jobs.push_back(put);
    const auto id = [&](const char* stage) { return std::string(stage) + ":" + vid; };
    d.edges.emplace_back(id("decode"), id("melspec"));
    for (const char* s : {"features", "events", "envelope"}) d.edges.emplace_back(id("melspec"), id(s));
    for (const char* s : {"features", "events", "envelope"}) d.edges.emplace_back(id(s), id("index"));
    receipts.push_back(dir + "indexed.json");
  }
  JobSpec commit;
  commit.id = "catalog-commit";
  commit.builtin = "ingest-catalog-commit";
  commit.inputs = receipts;
  commit.outputs = {"artifacts/catalog.json"};
  for (const auto& vid : ids) d.edges.emplace_back("index:" + vid, commit.id);
  d.jobs.push_back(commit);
  return d;
}

namespace detail {

inline constexpr char kMelMagic[8] = {'F', 'L', 'A', 'F', 'M', 'E', 'L', '1'};

inline void write_mel(const fs::path& path, const MelSpectrogram& mel) {
  std::vector<std::uint8_t> out(kMelMagic, kMelMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(mel.n_frames()));
  put_u32(out, static_cast<std::uint32_t>(mel.n_bands()));
  auto put_f64 = [&](double x) {
    std::uint64_t raw;
    std::memcpy(&raw, &x, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(raw >> (8 * i)));
  };
  put_f64(mel.frame_hop_s);
  for (double x : mel.values.data()) put_f64(x);
  write_file_bytes(path, out);
}

inline MelSpectrogram read_mel(const fs::path& path) {
  const auto b = read_file_bytes(path);
  if (b.size() < 24 || std::memcmp(b.data(), kMelMagic, 8) != 0) {
    throw Error(ErrorCode::kDimensionMismatch, "not a mel artifact: " + path.string());
  }
  const std::size_t rows = read_u32(b, 8), cols = read_u32(b, 12);
  if (b.size() != 24 + rows * cols * 8) throw Error(ErrorCode::kDimensionMismatch, "mel artifact truncated");
  std::size_t pos = 16;
  auto get = [&] {
    std::uint64_t raw = 0;
    for (int i = 0; i < 8; ++i) raw |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    double x;
    std::memcpy(&x, &raw, 8);
    return x;
  };
  MelSpectrogram mel;
  mel.frame_hop_s = get();
  mel.values = Matrix(rows, cols);
  for (double& x : mel.values.data()) x = get();
  return mel;
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return Json::parse(in);
}

inline void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

inline AudioClip read_canonical(const fs::path& path, const std::string& video_id) {
  return decode_wav(read_file_bytes(path), video_id);
}

}  // namespace detail

// Builtins for ingest_workflow; index writes go through `index`.
inline BuiltinRegistry ingest_builtins(FusionIndex& index, Taxonomy taxonomy = Taxonomy::defaults()) {
  BuiltinRegistry r;
  r["ingest-decode"] = [](const JobContext& c) {
    const auto vid = c.job.args.at("video_id").get<std::string>();
    const fs::path src = c.job.args.at("source_path").get<std::string>();
    const auto clip = resample_to_canonical(decode_wav(read_file_bytes(src), vid));
    write_file_bytes(c.output(0), encode_wav(clip, WavEncoding::kFloat32));
    detail::write_json(c.output(1), Json{{"video_id", vid},
                                         {"source_path", src.string()},
                                         {"duration_s", clip.duration_s()},
                                         {"samples", clip.samples.size()}});
  };
  r["ingest-melspec"] = [](const JobContext& c) {
    const auto clip = detail::read_canonical(c.input(0), c.job.args.at("video_id"));
    detail::write_mel(c.output(0), mel_spectrogram_db(clip.samples));
  };
  r["ingest-features"] = [](const JobContext& c) {
    const auto vid = c.job.args.at("video_id").get<std::string>();
    const auto clip = detail::read_canonical(c.input(0), vid);
    write_file_bytes(c.output(0), encode_feature_file(vid, extract_segment_features(clip)));
  };
  r["ingest-events"] = [taxonomy](const JobContext& c) {
    const auto clip = detail::read_canonical(c.input(0), c.job.args.at("video_id"));
    detail::write_json(c.output(0), Json(detect_events_baseline(clip, taxonomy)));
  };
  r["ingest-envelope"] = [](const JobContext& c) {
    detail::write_json(c.output(0),
                       Json(onset_envelope(detail::read_mel(c.input(0)), c.job.args.at("video_id"))));
  };
  r["ingest-index"] = [&index](const JobContext& c) {
    const auto vid = c.job.args.at("video_id").get<std::string>();
    const auto meta = detail::read_json(c.input(0));
    const auto file = decode_feature_file(read_file_bytes(c.input(1)));
    const auto events = detail::read_json(c.input(2)).get<std::vector<EventDetection>>();
    const auto env = detail::read_json(c.input(3)).get<OnsetEnvelope>();

    CatalogRecord rec;
    rec.video_id = vid;
    rec.source_path = meta.at("source_path").get<std::string>();
    rec.duration_s = meta.at("duration_s").get<double>();
    rec.feature_file = c.job.inputs.at(1);
    rec.detector_runs = {kBaselineDetectorId};
    if (index.has_video(vid)) {
      auto prior = index.video(vid);
      rec.ingest_time = prior.ingest_time;  // a re-put after an interrupted run
    } else {
      rec.ingest_time = c.job.args.value("ingest_time", detail::utc_timestamp());
    }
    index.put_video(rec);
    index.put_segment_features(vid, file.segments);
    index.put_events(vid, kBaselineDetectorId, events);
    index.put_envelope(env);
    detail::write_json(c.output(0), Json{{"video_id", vid},
                                         {"segments", file.segments.size()},
                                         {"events", events.size()},
                                         {"envelope_frames", env.values.size()}});
  };
  r["ingest-catalog-commit"] = [&index](const JobContext& c) {
    Json cat = Json::array();
    for (std::size_t i = 0; i < c.job.inputs.size(); ++i) {
      cat.push_back(Json{{"receipt", c.job.inputs[i]}, {"sha256", sha256_file(c.input(i))}});
    }
    index.snapshot();
    detail::write_json(c.output(0), Json{{"videos", cat}});
  };
  return r;
}

struct IngestRun {
  DagSpec dag;
  RunReport report;
};

// Runs the ingestion workflow against `data_dir`: artifacts and run state
// live beside the index directory.
inline IngestRun run_ingest(FusionIndex& index, const fs::path& data_dir, const std::vector<fs::path>& paths,
                            std::size_t workers, const IngestOptions& io = {}) {
  IngestRun out;
  out.dag = ingest_workflow(paths, io);
  const auto builtins = ingest_builtins(index);
  RunOptions ro;
  ro.workers = workers;
  ro.state_dir = data_dir / "pipeline";
  ro.work_dir = data_dir;
  ro.builtins = &builtins;
  out.report = run_dag(out.dag, ro);
  return out;
}

inline fs::path index_dir_of(const fs::path& data_dir) { return data_dir / "index"; }

}  // namespace flaf
