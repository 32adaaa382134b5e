#include "ampgc/bench.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/core.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ampgc/error.hpp"
#include "ampgc/stats.hpp"
#include "text_util.hpp"

namespace ampgc::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace

void RunPlan::validate() const {
  if (target.empty()) config_error("run plan needs a target command");
  if (invocations < 1) config_error("invocations must be >= 1");
  if (iterations < 1) config_error("iterations must be >= 1");
  if (measured_tail < 1 || measured_tail > iterations) config_error("measured_tail must lie in [1, iterations]");
  if (!(cv_threshold > 0)) config_error("cv_threshold must be positive");
  if (cv_window < 2) config_error("cv_window must be >= 2");
  if (!(heap_mb > 0)) config_error("heap_mb must be positive");
  if (domains.empty()) config_error("at least one energy domain is required");
}

std::vector<std::string> expand_target(const RunPlan& plan, int invocation, const std::string& energy_trace_path) {
  std::vector<std::string> argv;
  argv.reserve(plan.target.size());
  for (auto arg : plan.target) {
    arg = replace_all(std::move(arg), "{heap_mb}", fmt::format("{}", plan.heap_mb));
    arg = replace_all(std::move(arg), "{placement}", render(plan.config));
    arg = replace_all(std::move(arg), "{iterations}", std::to_string(plan.iterations));
    arg = replace_all(std::move(arg), "{seed}", std::to_string(plan.seed + static_cast<std::uint64_t>(invocation)));
    arg = replace_all(std::move(arg), "{invocation}", std::to_string(invocation));
    arg = replace_all(std::move(arg), "{energy_trace}", energy_trace_path);
    argv.push_back(std::move(arg));
  }
  return argv;
}

std::span<const IterationResult> InvocationResult::measured(int tail) const {
  const auto n = iterations.size();
  const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(tail, 0)));
  return std::span<const IterationResult>(iterations).subspan(n - k);
}

std::vector<std::string> metric_names(const RunPlan& plan) {
  std::vector<std::string> names{"exec_ms"};
  for (auto d : plan.domains) names.push_back(fmt::format("energy_{}_j", to_string(d)));
  for (const char* m : {"gc_cycles", "gc_minor", "gc_major", "mark_ms", "relocate_ms", "gc_time_ms", "gc_activity", "avg_workers", "heap_per_worker_mb",
                        "avg_cycle_ms", "heap_mb", "latency_p999_ms"})
    names.emplace_back(m);
  return names;
}

std::optional<double> metric_value(const IterationResult& it, std::string_view metric) {
  if (metric == "exec_ms") return it.exec_ms;
  if (metric.starts_with("energy_") && metric.ends_with("_j")) {
    const auto dom = parse_energy_domain(metric.substr(7, metric.size() - 9));
    auto e = it.energy_j.find(dom);
    if (e == it.energy_j.end()) return std::nullopt;
    return e->second;
  }
  const auto& m = it.metrics;
  if (metric == "gc_cycles") return static_cast<double>(m.num_cycles);
  if (metric == "gc_minor") return static_cast<double>(m.num_minor);
  if (metric == "gc_major") return static_cast<double>(m.num_major);
  if (metric == "mark_ms") return m.mark_ms;
  if (metric == "relocate_ms") return m.relocate_ms;
  if (metric == "gc_time_ms") return m.gc_time_ms;
  if (metric == "gc_activity") return m.gc_activity;
  if (metric == "avg_workers") return m.avg_workers;
  if (metric == "heap_per_worker_mb") return m.heap_per_worker_mb;
  if (metric == "avg_cycle_ms") return m.avg_cycle_ms;
  if (metric == "heap_mb") return m.heap_mb;
  if (metric == "latency_p999_ms") {
    if (it.latency_samples.empty()) return std::nullopt;
    return stats::percentile(it.latency_samples, 99.9);
  }
  config_error(fmt::format("unknown metric '{}'", metric));
}

std::vector<double> RunSeries::measured_values(std::string_view metric) const {
  std::vector<double> out;
  for (const auto& inv : invocations) {
    if (inv.failed) continue;
    for (const auto& it : inv.measured(plan.measured_tail))
      if (auto v = metric_value(it, metric)) out.push_back(*v);
  }
  return out;
}

bool RunSeries::all_clean() const {
  return std::all_of(invocations.begin(), invocations.end(),
                     [](const InvocationResult& r) { return r.clean && !r.failed; });
}

std::optional<std::size_t> detect_steady(std::span<const double> exec_times, int window, double threshold) {
  if (window < 2) config_error("steady-state window must be >= 2");
  for (double t : exec_times)
    if (!(t > 0)) config_error("execution times must be positive");
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t i = w - 1; i < exec_times.size(); ++i) {
    const auto win = exec_times.subspan(i + 1 - w, w);
    if (stats::sample_stddev(win) / stats::mean(win) < threshold) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Cache flushing

ThrashFlusher::ThrashFlusher(std::size_t bytes) : buffer_(bytes) {
  if (bytes == 0) config_error("flush buffer must not be empty");
}

std::size_t ThrashFlusher::buffer_bytes_for(const CoreTopology& topo) {
  return 2 * static_cast<std::size_t>(topo.l3_kb()) * 1024;
}

void ThrashFlusher::flush() {
  // Touch every line twice: a write to evict dirty lines of others, a read
  // so the compiler cannot drop the pass.
  ++salt_;
  for (std::size_t i = 0; i < buffer_.size(); i += 64) buffer_[i] = static_cast<unsigned char>(buffer_[i] + salt_);
  volatile unsigned sink = 0;
  unsigned acc = 0;
  for (std::size_t i = 0; i < buffer_.size(); i += 64) acc += buffer_[i];
  sink = acc;
  (void)sink;
}

// ---------------------------------------------------------------------------
// Target processes

namespace {

class PosixProcess final : public TargetProcess {
 public:
  PosixProcess(pid_t pid, int fd) : pid_(pid), fd_(fd) {}
  ~PosixProcess() override {
    if (fd_ >= 0) ::close(fd_);
    if (!reaped_) {
      ::kill(pid_, SIGKILL);
      int st = 0;
      while (::waitpid(pid_, &st, 0) < 0 && errno == EINTR) {
      }
    }
  }

  long pid() const override { return pid_; }

  std::optional<std::string> next_line() override {
    while (true) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      if (eof_) {
        if (buf_.empty()) return std::nullopt;
        std::string line = std::move(buf_);
        buf_.clear();
        return line;
      }
      char chunk[4096];
      const auto n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        eof_ = true;
        continue;
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  int wait() override {
    if (reaped_) return status_;
    while (next_line()) {
    }
    int st = 0;
    while (::waitpid(pid_, &st, 0) < 0) {
      if (errno != EINTR) throw Error(ErrorKind::kTarget, fmt::format("waitpid: {}", std::strerror(errno)));
    }
    reaped_ = true;
    status_ = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + WTERMSIG(st);
    return status_;
  }

 private:
  pid_t pid_;
  int fd_;
  std::string buf_;
  bool eof_ = false;
  bool reaped_ = false;
  int status_ = 0;
};

}  // namespace

std::unique_ptr<TargetProcess> PosixLauncher::launch(const std::vector<std::string>& argv) {
  if (argv.empty()) throw Error(ErrorKind::kTarget, "empty target command");
  int out[2];
  int err[2];
  if (::pipe2(out, O_CLOEXEC) != 0 || ::pipe2(err, O_CLOEXEC) != 0)
    throw Error(ErrorKind::kTarget, fmt::format("pipe: {}", std::strerror(errno)));
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorKind::kTarget, fmt::format("fork: {}", std::strerror(errno)));
  if (pid == 0) {
    ::dup2(out[1], STDOUT_FILENO);
    ::execvp(args[0], args.data());
    const int e = errno;
    [[maybe_unused]] auto n = ::write(err[1], &e, sizeof e);
    ::_exit(127);
  }
  ::close(out[1]);
  ::close(err[1]);
  int child_errno = 0;
  ssize_t n;
  while ((n = ::read(err[0], &child_errno, sizeof child_errno)) < 0 && errno == EINTR) {
  }
  ::close(err[0]);
  auto proc = std::make_unique<PosixProcess>(pid, out[0]);
  if (n > 0) {
    proc->wait();
    throw Error(ErrorKind::kTarget, fmt::format("cannot execute '{}': {}", argv[0], std::strerror(child_errno)));
  }
  return proc;
}

// ---------------------------------------------------------------------------
// Collector

InvocationCollector::InvocationCollector(int index, std::vector<EnergyDomain> domains, std::uint64_t max_range_uj)
    : domains_(std::move(domains)), range_(max_range_uj) {
  result_.index = index;
}

namespace {

std::optional<int> iter_number(std::string_view tok) { return detail::parse_int<int>(tok); }

}  // namespace

bool InvocationCollector::feed(std::string_view line, const EnergyProbe& live) {
  const auto toks = detail::tokens(line);
  if (toks.empty()) return false;
  if (toks[0] == "ITER" && toks.size() >= 3) {
    const auto n = iter_number(toks[1]);
    if (!n) throw Error(ErrorKind::kParse, fmt::format("bad ITER marker '{}'", line));
    if (toks[2] == "BEGIN") {
      open_iter_ = *n;
      open_begin_ms_ = virtual_ms_;
      pending_gc_.clear();
      pending_latency_.clear();
      if (live) begin_energy_ = live();
      return false;
    }
    if (toks[2] == "END") {
      if (open_iter_ != n) throw Error(ErrorKind::kParse, fmt::format("ITER {} END without BEGIN", *n));
      if (toks.size() < 4 || !toks[3].starts_with("exec_ms="))
        throw Error(ErrorKind::kParse, fmt::format("ITER END without exec_ms: '{}'", line));
      const auto exec = detail::parse_double(toks[3].substr(8));
      if (!exec || !(*exec > 0)) throw Error(ErrorKind::kParse, fmt::format("bad exec_ms in '{}'", line));
      IterationResult it;
      it.index = *n;
      it.exec_ms = *exec;
      it.latency_samples = std::move(pending_latency_);
      if (live && !begin_energy_.empty()) {
        const auto end = live();
        for (auto d : domains_) {
          auto b = begin_energy_.find(d);
          auto e = end.find(d);
          if (b != begin_energy_.end() && e != end.end()) it.energy_j[d] = delta(b->second, e->second, range_).joules;
        }
      }
      auto log = parse_log(pending_gc_);
      iter_cycles_.push_back(std::move(log.cycles));
      virtual_ms_ += *exec;
      bounds_.push_back({open_begin_ms_, virtual_ms_});
      result_.iterations.push_back(std::move(it));
      pending_gc_.clear();
      pending_latency_.clear();
      open_iter_.reset();
      return true;
    }
    return false;
  }
  if (toks[0] == "LATENCY" && toks.size() == 2) {
    const auto v = detail::parse_double(toks[1]);
    if (!v) throw Error(ErrorKind::kParse, fmt::format("bad LATENCY line '{}'", line));
    pending_latency_.push_back(*v);
    return false;
  }
  if (is_gc_log_line(line)) {
    GcLogParser one;
    one.feed(line);
    auto parsed = one.finish();
    for (const auto& s : parsed.stalls) all_stalls_.push_back(s);
    if (parsed.run_end) run_end_ = parsed.run_end;
    if (!parsed.cycles.empty()) pending_gc_.emplace_back(line);
  }
  return false;
}

void InvocationCollector::apply_trace(const FixtureBackend& trace) {
  auto to_ns = [](double ms) { return static_cast<std::int64_t>(std::llround(ms * 1e6)); };
  for (std::size_t i = 0; i < result_.iterations.size(); ++i) {
    for (auto d : domains_) {
      if (!trace.available(d)) continue;
      auto samples = trace.window(d, to_ns(bounds_[i].begin_ms), to_ns(bounds_[i].end_ms));
      if (samples.size() < 2) continue;
      const auto total = total_energy(samples, trace.max_range_uj(d));
      result_.iterations[i].energy_j[d] = total.delta.joules;
      result_.energy_truncated = result_.energy_truncated || total.truncated;
    }
  }
}

InvocationResult InvocationCollector::finish(int exit_code, int window, double threshold, double heap_mb) {
  const double heap = run_end_ ? run_end_->heap_mb : heap_mb;
  for (std::size_t i = 0; i < result_.iterations.size(); ++i) {
    auto& it = result_.iterations[i];
    it.metrics = derive_metrics(iter_cycles_[i], {}, it.exec_ms, heap);
  }
  result_.stalls = all_stalls_;
  result_.exit_code = exit_code;
  result_.clean = is_clean_run(result_.stalls) && exit_code == 0;
  if (exit_code != 0) {
    result_.failed = true;
    result_.failure = fmt::format("target exited with status {}", exit_code);
  }
  std::vector<double> times;
  for (const auto& it : result_.iterations) times.push_back(it.exec_ms);
  result_.steady_index = detect_steady(times, window, threshold);
  result_.steady_reached = result_.steady_index.has_value();
  return std::move(result_);
}

// ---------------------------------------------------------------------------
// Runner

RunSeries run_experiment(const RunPlan& plan, const CoreTopology& topo, const Environment& env) {
  plan.validate();
  if (env.launcher == nullptr) config_error("no target launcher configured");
  if (env.energy_source == EnergySource::Live && env.energy == nullptr)
    config_error("live energy measurement needs a backend");
  if (env.energy_source == EnergySource::Trace && env.scratch_dir.empty())
    config_error("trace energy measurement needs a scratch directory");

  RunSeries series;
  series.plan = plan;
  const bool flushing = plan.flush_caches && env.flusher != nullptr;
  series.flush_method = flushing ? env.flusher->method() : "none";
  series.energy_source = env.energy_source == EnergySource::Live    ? "live"
                         : env.energy_source == EnergySource::Trace ? "trace"
                                                                    : "none";
  const AffinityPlan affinity = build_affinity_plan(plan.config, topo);

  std::uint64_t range = kDefaultMaxRangeUj;
  if (env.energy_source == EnergySource::Live) range = env.energy->max_range_uj(plan.domains.front());
  InvocationCollector::EnergyProbe live;
  if (env.energy_source == EnergySource::Live) {
    live = [&env, &plan] {
      std::map<EnergyDomain, EnergySample> m;
      for (auto d : plan.domains)
        if (env.energy->available(d)) m[d] = env.energy->read_counter(d);
      return m;
    };
  }

  for (int k = 0; k < plan.invocations; ++k) {
    std::string trace_path;
    if (env.energy_source == EnergySource::Trace) {
      fs::create_directories(env.scratch_dir);
      trace_path = (env.scratch_dir / fmt::format("energy_{}.csv", k)).string();
      fs::remove(trace_path);
    }
    auto proc = env.launcher->launch(expand_target(plan, k, trace_path));

    std::unique_ptr<ThreadBackend> threads;
    std::unique_ptr<PinWatcher> watcher;
    if (env.thread_backend) {
      threads = env.thread_backend();
      watcher = std::make_unique<PinWatcher>(*threads, proc->pid(), affinity, env.rules);
      if (env.initial_poll) watcher->poll_once();  // records are queued for drain()
      watcher->start();
    }

    InvocationCollector collector(k, plan.domains, range);
    std::optional<Error> protocol_error;
    int ended = 0;
    while (auto line = proc->next_line()) {
      try {
        // Flush between iterations only. The target keeps running, so the
        // flush overlaps the start of its next iteration.
        if (collector.feed(*line, live) && ++ended < plan.iterations && flushing) env.flusher->flush();
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kParse) throw;
        protocol_error = e;
        break;
      }
    }
    const int status = proc->wait();
    if (watcher) {
      watcher->release();
      auto recs = watcher->drain();
      series.pin_records.insert(series.pin_records.end(), recs.begin(), recs.end());
      if (auto f = watcher->failure()) throw *f;
    }
    if (env.energy_source == EnergySource::Trace) {
      if (fs::exists(trace_path)) {
        collector.apply_trace(FixtureBackend::load(trace_path));
        fs::remove(trace_path);
      } else {
        series.warnings.push_back(fmt::format("invocation {}: target wrote no energy trace", k));
      }
    }
    auto result = collector.finish(status, plan.cv_window, plan.cv_threshold, plan.heap_mb);
    if (protocol_error) {
      result.failed = true;
      result.clean = false;
      result.failure = protocol_error->what();
    } else if (!result.failed && static_cast<int>(result.iterations.size()) != plan.iterations) {
      result.failed = true;
      result.clean = false;
      result.failure =
          fmt::format("target announced {} of {} iterations", result.iterations.size(), plan.iterations);
    }
    if (result.failed) spdlog::warn("invocation {} failed: {}", k, result.failure);
    if (!result.failed && !result.steady_reached)
      series.warnings.push_back(fmt::format("invocation {}: steady state not reached", k));
    series.invocations.push_back(std::move(result));
  }
  return series;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string_view stall_name(StallKind k) {
  switch (k) {
    case StallKind::AllocationStall: return "allocation";
    case StallKind::RelocationStall: return "relocation";
    case StallKind::OutOfMemory: return "oom";
  }
  return "oom";
}

StallKind parse_stall_name(std::string_view s) {
  if (s == "allocation") return StallKind::AllocationStall;
  if (s == "relocation") return StallKind::RelocationStall;
  if (s == "oom") return StallKind::OutOfMemory;
  throw Error(ErrorKind::kParse, fmt::format("unknown stall kind '{}'", s));
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json plan_json(const RunPlan& p) {
  json domains = json::array();
  for (auto d : p.domains) domains.push_back(std::string(to_string(d)));
  return json{{"benchmark", p.benchmark},
              {"config", render(p.config)},
              {"mutator_pcores", p.config.mutator_pcore_count},
              {"target", p.target},
              {"invocations", p.invocations},
              {"iterations", p.iterations},
              {"measured_tail", p.measured_tail},
              {"cv_threshold", p.cv_threshold},
              {"cv_window", p.cv_window},
              {"heap_mb", p.heap_mb},
              {"flush_caches", p.flush_caches},
              {"seed", p.seed},
              {"domains", domains}};
}

RunPlan plan_from(const json& j) {
  RunPlan p;
  p.benchmark = j.at("benchmark").get<std::string>();
  p.config = parse_config_name(j.at("config").get<std::string>(), j.at("mutator_pcores").get<int>());
  p.target = j.at("target").get<std::vector<std::string>>();
  p.invocations = j.at("invocations").get<int>();
  p.iterations = j.at("iterations").get<int>();
  p.measured_tail = j.at("measured_tail").get<int>();
  p.cv_threshold = j.at("cv_threshold").get<double>();
  p.cv_window = j.at("cv_window").get<int>();
  p.heap_mb = j.at("heap_mb").get<double>();
  p.flush_caches = j.at("flush_caches").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.domains.clear();
  for (const auto& d : j.at("domains")) p.domains.push_back(parse_energy_domain(d.get<std::string>()));
  return p;
}

json metrics_json(const RunMetrics& m) {
  return json{{"num_cycles", m.num_cycles},
              {"num_minor", m.num_minor},
              {"num_major", m.num_major},
              {"mark_ms", m.mark_ms},
              {"relocate_ms", m.relocate_ms},
              {"gc_time_ms", m.gc_time_ms},
              {"gc_activity", m.gc_activity},
              {"wall_ms", m.wall_ms},
              {"heap_mb", m.heap_mb},
              {"avg_workers", opt(m.avg_workers)},
              {"heap_per_worker_mb", opt(m.heap_per_worker_mb)},
              {"avg_cycle_ms", opt(m.avg_cycle_ms)},
              {"warning", opt(m.warning)}};
}

RunMetrics metrics_from(const json& j) {
  RunMetrics m;
  m.num_cycles = j.at("num_cycles").get<int>();
  m.num_minor = j.at("num_minor").get<int>();
  m.num_major = j.at("num_major").get<int>();
  m.mark_ms = j.at("mark_ms").get<double>();
  m.relocate_ms = j.at("relocate_ms").get<double>();
  m.gc_time_ms = j.at("gc_time_ms").get<double>();
  m.gc_activity = j.at("gc_activity").get<double>();
  m.wall_ms = j.at("wall_ms").get<double>();
  m.heap_mb = j.at("heap_mb").get<double>();
  m.avg_workers = get_opt<double>(j, "avg_workers");
  m.heap_per_worker_mb = get_opt<double>(j, "heap_per_worker_mb");
  m.avg_cycle_ms = get_opt<double>(j, "avg_cycle_ms");
  m.warning = get_opt<std::string>(j, "warning");
  return m;
}

json invocation_json(const InvocationResult& r) {
  json iters = json::array();
  for (const auto& it : r.iterations) {
    json energy = json::object();
    for (const auto& [d, j] : it.energy_j) energy[std::string(to_string(d))] = j;
    iters.push_back(json{{"index", it.index},
                         {"exec_ms", it.exec_ms},
                         {"energy_j", energy},
                         {"metrics", metrics_json(it.metrics)},
                         {"latency_samples", it.latency_samples}});
  }
  json stalls = json::array();
  for (const auto& s : r.stalls) stalls.push_back(json{{"kind", stall_name(s.kind)}, {"t", s.timestamp_ms}});
  return json{{"index", r.index},
              {"failed", r.failed},
              {"failure", r.failure},
              {"exit_code", r.exit_code},
              {"clean", r.clean},
              {"steady_reached", r.steady_reached},
              {"steady_index", opt(r.steady_index)},
              {"energy_truncated", r.energy_truncated},
              {"stalls", stalls},
              {"iterations", iters}};
}

InvocationResult invocation_from(const json& j) {
  InvocationResult r;
  r.index = j.at("index").get<int>();
  r.failed = j.at("failed").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  r.exit_code = j.at("exit_code").get<int>();
  r.clean = j.at("clean").get<bool>();
  r.steady_reached = j.at("steady_reached").get<bool>();
  r.steady_index = get_opt<std::size_t>(j, "steady_index");
  r.energy_truncated = j.at("energy_truncated").get<bool>();
  for (const auto& s : j.at("stalls"))
    r.stalls.push_back(StallEvent{parse_stall_name(s.at("kind").get<std::string>()), s.at("t").get<double>()});
  for (const auto& ij : j.at("iterations")) {
    IterationResult it;
    it.index = ij.at("index").get<int>();
    it.exec_ms = ij.at("exec_ms").get<double>();
    for (const auto& [k, v] : ij.at("energy_j").items()) it.energy_j[parse_energy_domain(k)] = v.get<double>();
    it.metrics = metrics_from(ij.at("metrics"));
    it.latency_samples = ij.at("latency_samples").get<std::vector<double>>();
    r.iterations.push_back(std::move(it));
  }
  return r;
}

json pin_json(const PinRecord& p) {
  return json{{"tid", p.tid},
              {"name", p.name},
              {"role", std::string(to_string(p.role))},
              {"cpus", std::vector<int>(p.cpus.begin(), p.cpus.end())},
              {"timestamp_ns", p.timestamp_ns},
              {"unpinned_window_ns", p.unpinned_window_ns}};
}

PinRecord pin_from(const json& j) {
  PinRecord p;
  p.tid = j.at("tid").get<long>();
  p.name = j.at("name").get<std::string>();
  p.role = parse_thread_role(j.at("role").get<std::string>());
  for (int c : j.at("cpus").get<std::vector<int>>()) p.cpus.insert(c);
  p.timestamp_ns = j.at("timestamp_ns").get<std::int64_t>();
  p.unpinned_window_ns = j.at("unpinned_window_ns").get<std::int64_t>();
  return p;
}

json series_to_json(const RunSeries& s) {
  json invs = json::array();
  for (const auto& r : s.invocations) invs.push_back(invocation_json(r));
  json pins = json::array();
  for (const auto& p : s.pin_records) pins.push_back(pin_json(p));
  return json{{"meta",
               {{"format", "ampgc-series/1"},
                {"flush_method", s.flush_method},
                {"energy_source", s.energy_source},
                {"energy_boundaries", "iteration markers"},
                {"steady_state", {{"window", s.plan.cv_window}, {"threshold", s.plan.cv_threshold}}},
                {"explicit_gc_between_iterations", false}}},
              {"plan", plan_json(s.plan)},
              {"warnings", s.warnings},
              {"pin_records", pins},
              {"invocations", invs}};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kConfig, fmt::format("cannot write '{}'", p.string()));
  out << text;
  if (!out) throw Error(ErrorKind::kConfig, fmt::format("write to '{}' failed", p.string()));
}

std::string csv_number(std::optional<double> v) { return v ? fmt::format("{}", *v) : std::string(); }

}  // namespace

std::string series_json(const RunSeries& series) { return series_to_json(series).dump(2) + "\n"; }

RunSeries series_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
    RunSeries s;
    s.plan = plan_from(j.at("plan"));
    s.flush_method = j.at("meta").at("flush_method").get<std::string>();
    s.energy_source = j.at("meta").at("energy_source").get<std::string>();
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& p : j.at("pin_records")) s.pin_records.push_back(pin_from(p));
    for (const auto& r : j.at("invocations")) s.invocations.push_back(invocation_from(r));
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, fmt::format("malformed series document: {}", e.what()));
  }
}

std::string measured_csv(const RunSeries& s) {
  std::string out = "benchmark,config,invocation,iteration,exec_ms";
  for (auto d : s.plan.domains) out += fmt::format(",energy_{}_j", to_string(d));
  out += ",gc_cycles,gc_activity,avg_workers,avg_cycle_ms,heap_mb,clean\n";
  const auto cfg = render(s.plan.config);
  for (const auto& inv : s.invocations) {
    if (inv.failed) continue;
    for (const auto& it : inv.measured(s.plan.measured_tail)) {
      out += fmt::format("{},{},{},{},{}", s.plan.benchmark, cfg, inv.index, it.index, it.exec_ms);
      for (auto d : s.plan.domains) {
        auto e = it.energy_j.find(d);
        out += "," + csv_number(e == it.energy_j.end() ? std::nullopt : std::optional<double>(e->second));
      }
      out += fmt::format(",{},{},{},{},{},{}\n", it.metrics.num_cycles, it.metrics.gc_activity,
                         csv_number(it.metrics.avg_workers), csv_number(it.metrics.avg_cycle_ms), it.metrics.heap_mb,
                         inv.clean ? 1 : 0);
    }
  }
  return out;
}

void save_series(const RunSeries& series, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "series.json", series_json(series));
  for (const auto& inv : series.invocations)
    write_file(dir / fmt::format("invocation_{}.json", inv.index), invocation_json(inv).dump(2) + "\n");
  write_file(dir / "measured.csv", measured_csv(series));
}

RunSeries load_series(const fs::path& dir) {
  const auto path = fs::is_directory(dir) ? dir / "series.json" : dir;
  const auto text = detail::read_file(path);
  if (!text) throw Error(ErrorKind::kConfig, fmt::format("cannot read series '{}'", path.string()));
  return series_from_json(*text);
}

// ---------------------------------------------------------------------------
// Heap search

double heap_grid_point(double base_mb, double growth, int k) { return base_mb * std::pow(growth, k); }

HeapSearchResult heap_search(const std::function<bool(double, int)>& is_clean, double base_mb, double growth,
                             int required_clean, double cap_mb) {
  if (!(base_mb > 0)) config_error("heap search base must be positive");
  if (!(growth > 1)) config_error("heap search growth must exceed 1");
  if (required_clean < 1) config_error("heap search needs at least one clean run");
  HeapSearchResult r;
  for (int k = 0;; ++k) {
    const double heap = heap_grid_point(base_mb, growth, k);
    if (heap > cap_mb)
      throw Error(ErrorKind::kNoHeap, fmt::format("no stall-free heap up to {} MB", cap_mb));
    bool ok = true;
    for (int run = 0; run < required_clean; ++run) {
      const bool clean = is_clean(heap, run);
      r.probes.push_back({heap, run, clean});
      if (!clean) {
        ok = false;
        break;
      }
    }
    if (ok) {
      r.heap_mb = heap;
      r.grid_index = k;
      return r;
    }
  }
}

}  // namespace ampgc::bench
