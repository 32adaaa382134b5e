#include "ampgc/pinctl.hpp"

#include <fnmatch.h>
#include <sched.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "text_util.hpp"

namespace fs = std::filesystem;

namespace ampgc {

std::vector<RoleRule> default_role_rules() {
  return {
      {"ZWorker*", ThreadRole::GcWorker, 100},      {"ZDriver*", ThreadRole::GcWorker, 100},
      {"GC*", ThreadRole::GcWorker, 90},            {"C1 *", ThreadRole::JitCompiler, 80},
      {"C2 *", ThreadRole::JitCompiler, 80},        {"Compiler*", ThreadRole::JitCompiler, 80},
      {"VM *", ThreadRole::VmService, 70},          {"*", ThreadRole::Unclassified, -1000},
  };
}

RoleRule parse_role_rule(std::string_view text) {
  // pattern may itself contain ':' only if escaped by the glob; split from the right
  const auto last = text.rfind(':');
  const auto mid = last == std::string_view::npos ? last : text.rfind(':', last - 1);
  if (last == std::string_view::npos || mid == std::string_view::npos)
    throw Error(ErrorKind::kConfig, fmt::format("role rule '{}' must be pattern:role:priority", text));
  auto prio = detail::parse_int(text.substr(last + 1));
  if (!prio) throw Error(ErrorKind::kConfig, fmt::format("role rule '{}' has a bad priority", text));
  return RoleRule{std::string(text.substr(0, mid)),
                  parse_thread_role(detail::trim(text.substr(mid + 1, last - mid - 1))), *prio};
}

ThreadRole classify_thread(std::string_view name, std::span<const RoleRule> rules) {
  const std::string n(name);
  const RoleRule* best = nullptr;
  for (const RoleRule& r : rules) {
    if (fnmatch(r.pattern.c_str(), n.c_str(), 0) != 0) continue;
    if (best == nullptr || r.priority > best->priority) best = &r;
  }
  return best ? best->role : ThreadRole::Unclassified;
}

// ---------------------------------------------------------------------------
// OS backend

OsThreadBackend::OsThreadBackend(fs::path proc_root) : proc_root_(std::move(proc_root)) {}

std::optional<std::vector<ThreadInfo>> OsThreadBackend::list_threads(long pid) {
  const fs::path task_dir = proc_root_ / std::to_string(pid) / "task";
  std::error_code ec;
  fs::directory_iterator it(task_dir, ec);
  if (ec) return std::nullopt;
  std::vector<ThreadInfo> out;
  for (const auto& entry : it) {
    auto tid = detail::parse_int<long>(entry.path().filename().string());
    if (!tid) continue;
    auto comm = detail::read_file(entry.path() / "comm");
    if (!comm) continue;  // exited between listing and reading
    out.push_back(ThreadInfo{*tid, std::string(detail::trim(*comm))});
  }
  std::sort(out.begin(), out.end(), [](const ThreadInfo& a, const ThreadInfo& b) { return a.tid < b.tid; });
  return out;
}

AffinityOutcome OsThreadBackend::set_affinity(long tid, const CpuSet& cpus) {
  cpu_set_t mask;
  CPU_ZERO(&mask);
  for (int cpu : cpus) {
    if (cpu < 0 || cpu >= CPU_SETSIZE) throw Error(ErrorKind::kConfig, fmt::format("cpu {} out of range", cpu));
    CPU_SET(cpu, &mask);
  }
  if (sched_setaffinity(static_cast<pid_t>(tid), sizeof(mask), &mask) == 0) return AffinityOutcome::kApplied;
  const int err = errno;
  if (err == ESRCH) return AffinityOutcome::kThreadGone;
  if (err == EPERM || err == EACCES)
    throw Error(ErrorKind::kPermission,
                fmt::format("sched_setaffinity({}) denied: run as the target's owner or grant CAP_SYS_NICE", tid));
  throw Error(ErrorKind::kConfig, fmt::format("sched_setaffinity({}) failed: {}", tid, std::strerror(err)));
}

std::int64_t OsThreadBackend::now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// Mock backend

MockThreadBackend::MockThreadBackend(std::vector<ThreadAppearance> trace, std::chrono::nanoseconds period,
                                     std::optional<int> process_exits_at_poll)
    : trace_(std::move(trace)), period_(period), exit_poll_(process_exits_at_poll) {}

std::optional<std::vector<ThreadInfo>> MockThreadBackend::list_threads(long /*pid*/) {
  const int poll = polls_++;
  if (exit_poll_ && poll >= *exit_poll_) return std::nullopt;
  std::vector<ThreadInfo> out;
  for (const auto& t : trace_)
    if (t.appears_at_poll <= poll) out.push_back(ThreadInfo{t.tid, t.name});
  return out;
}

AffinityOutcome MockThreadBackend::set_affinity(long tid, const CpuSet& cpus) {
  if (deny_) throw Error(ErrorKind::kPermission, "affinity change denied (mock)");
  for (const auto& t : trace_)
    if (t.tid == tid && t.exits_before_pin) return AffinityOutcome::kThreadGone;
  calls_.emplace_back(tid, cpus);
  return AffinityOutcome::kApplied;
}

std::int64_t MockThreadBackend::now_ns() {
  // The clock reads the time of the most recent poll.
  return static_cast<std::int64_t>(std::max(polls_ - 1, 0)) * period_.count();
}

std::vector<ThreadAppearance> simulated_jvm_threads(int gc_workers) {
  std::vector<ThreadAppearance> t;
  long tid = 1000;
  t.push_back({tid++, "main", 0, false});
  t.push_back({tid++, "VM Thread", 0, false});
  t.push_back({tid++, "C2 CompilerThread0", 0, false});
  t.push_back({tid++, "C1 CompilerThread0", 0, false});
  t.push_back({tid++, "ZDriverMajor", 0, false});
  for (int i = 0; i < gc_workers; ++i) t.push_back({tid++, fmt::format("ZWorkerYoung#{}", i), 0, false});
  return t;
}

// ---------------------------------------------------------------------------
// Watcher

PinWatcher::PinWatcher(ThreadBackend& backend, long pid, AffinityPlan plan, std::vector<RoleRule> rules,
                       std::chrono::milliseconds period)
    : backend_(backend), pid_(pid), plan_(std::move(plan)), rules_(std::move(rules)), period_(period) {
  if (period_.count() <= 0) throw Error(ErrorKind::kConfig, "pin polling period must be positive");
  std::set<ThreadRole> reachable{ThreadRole::Unclassified};
  for (const auto& r : rules_) reachable.insert(r.role);
  for (ThreadRole role : reachable) (void)plan_.cpus_for(role);  // throws on empty set
  last_poll_ns_ = backend_.now_ns();
}

PinWatcher::~PinWatcher() { release(); }

std::vector<PinRecord> PinWatcher::poll_once() {
  std::vector<PinRecord> fresh;
  {
    std::lock_guard lock(mu_);
    if (stop_) return fresh;
  }
  if (gone_) return fresh;
  auto threads = backend_.list_threads(pid_);
  const std::int64_t now = backend_.now_ns();
  if (!threads) {
    gone_ = true;
    return fresh;
  }
  for (const ThreadInfo& t : *threads) {
    if (seen_.count(t.tid)) continue;
    seen_.insert(t.tid);
    const ThreadRole role = classify_thread(t.name, rules_);
    const CpuSet& cpus = plan_.cpus_for(role);
    if (backend_.set_affinity(t.tid, cpus) == AffinityOutcome::kThreadGone) {
      spdlog::debug("thread {} ({}) exited before it could be pinned", t.tid, t.name);
      continue;
    }
    fresh.push_back(PinRecord{t.tid, t.name, role, cpus, now, now - last_poll_ns_});
  }
  last_poll_ns_ = now;
  {
    std::lock_guard lock(mu_);
    queue_.insert(queue_.end(), fresh.begin(), fresh.end());
  }
  return fresh;
}

void PinWatcher::start() {
  std::lock_guard lock(mu_);
  if (thread_.joinable() || stop_) return;
  thread_ = std::thread([this] { run_loop(); });
}

void PinWatcher::run_loop() {
  while (true) {
    try {
      poll_once();
    } catch (const Error& e) {
      std::lock_guard lock(mu_);
      failure_ = e;
      return;
    }
    if (gone_) return;
    std::unique_lock lock(mu_);
    if (cv_.wait_for(lock, period_, [this] { return stop_; })) return;
  }
}

void PinWatcher::release() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

std::vector<PinRecord> PinWatcher::drain() {
  std::lock_guard lock(mu_);
  std::vector<PinRecord> out(queue_.begin(), queue_.end());
  queue_.clear();
  return out;
}

std::optional<Error> PinWatcher::failure() const {
  std::lock_guard lock(mu_);
  return failure_;
}

}  // namespace ampgc
