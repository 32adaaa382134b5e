#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ampgc/error.hpp"
#include "ampgc/topology.hpp"

namespace ampgc {

/// Glob pattern (`*`, `?`, `[...]`) matched against the thread name.
struct RoleRule {
  std::string pattern;
  ThreadRole role = ThreadRole::Unclassified;
  int priority = 0;

  bool operator==(const RoleRule&) const = default;
};

/// ZGC/HotSpot thread-name conventions, plus a lowest-priority catch-all.
std::vector<RoleRule> default_role_rules();

/// "pattern:role:priority", e.g. "ZWorker*:gc_worker:100".
RoleRule parse_role_rule(std::string_view text);

/// Highest-priority matching rule wins; equal priorities keep list order.
/// Names matching nothing are Unclassified.
ThreadRole classify_thread(std::string_view name, std::span<const RoleRule> rules);

struct ThreadInfo {
  long tid = 0;
  std::string name;
};

struct PinRecord {
  long tid = 0;
  std::string name;
  ThreadRole role = ThreadRole::Unclassified;
  CpuSet cpus;
  std::int64_t timestamp_ns = 0;
  /// Upper bound on how long the thread may have run unpinned: time since
  /// the previous poll of the thread list.
  std::int64_t unpinned_window_ns = 0;

  bool operator==(const PinRecord&) const = default;
};

enum class AffinityOutcome { kApplied, kThreadGone };

/// Access to a process's threads. Implementations are called from a single
/// watcher thread per pid.
class ThreadBackend {
 public:
  virtual ~ThreadBackend() = default;
  /// nullopt once the process has exited.
  virtual std::optional<std::vector<ThreadInfo>> list_threads(long pid) = 0;
  /// Throws Error(kPermission) when the caller lacks the rights.
  virtual AffinityOutcome set_affinity(long tid, const CpuSet& cpus) = 0;
  virtual std::int64_t now_ns() = 0;
};

/// /proc-style task tree plus sched_setaffinity.
class OsThreadBackend final : public ThreadBackend {
 public:
  explicit OsThreadBackend(std::filesystem::path proc_root = "/proc");

  std::optional<std::vector<ThreadInfo>> list_threads(long pid) override;
  AffinityOutcome set_affinity(long tid, const CpuSet& cpus) override;
  std::int64_t now_ns() override;

 private:
  std::filesystem::path proc_root_;
};

/// One thread's lifetime in a scripted trace, counted in polls.
struct ThreadAppearance {
  long tid = 0;
  std::string name;
  int appears_at_poll = 0;
  /// The thread is visible in the list but exits before it can be pinned.
  bool exits_before_pin = false;
};

/// Replays a thread-appearance trace. Time advances by `period` per poll, so
/// replays are fully deterministic.
class MockThreadBackend final : public ThreadBackend {
 public:
  MockThreadBackend(std::vector<ThreadAppearance> trace, std::chrono::nanoseconds period,
                    std::optional<int> process_exits_at_poll = std::nullopt);

  std::optional<std::vector<ThreadInfo>> list_threads(long pid) override;
  AffinityOutcome set_affinity(long tid, const CpuSet& cpus) override;
  std::int64_t now_ns() override;

  void deny_permission(bool deny) { deny_ = deny; }

  /// Every successful set_affinity call, in order.
  const std::vector<std::pair<long, CpuSet>>& calls() const { return calls_; }
  int polls() const { return polls_; }

 private:
  std::vector<ThreadAppearance> trace_;
  std::chrono::nanoseconds period_;
  std::optional<int> exit_poll_;
  int polls_ = 0;
  bool deny_ = false;
  std::vector<std::pair<long, CpuSet>> calls_;
};

/// The simulated target's thread set, all visible at the first poll.
std::vector<ThreadAppearance> simulated_jvm_threads(int gc_workers = 4);

/// Watches one process and pins each thread the first time it is seen.
/// Threads are never re-pinned.
class PinWatcher {
 public:
  /// Throws Error(kConfig) if any role the rules can produce has no CPUs.
  PinWatcher(ThreadBackend& backend, long pid, AffinityPlan plan, std::vector<RoleRule> rules,
             std::chrono::milliseconds period = std::chrono::milliseconds(10));
  ~PinWatcher();

  PinWatcher(const PinWatcher&) = delete;
  PinWatcher& operator=(const PinWatcher&) = delete;

  /// One synchronous discovery pass. Returns the records it produced (also
  /// queued for drain()). Use either this or start(), not both.
  std::vector<PinRecord> poll_once();

  /// Polls on a background thread until release() or process exit.
  void start();

  /// Stops polling. Affinities already applied stay in place. Idempotent.
  void release();

  /// Takes all queued records.
  std::vector<PinRecord> drain();

  bool process_gone() const { return gone_.load(); }
  /// Set when the background thread stopped on an error (e.g. permission).
  std::optional<Error> failure() const;

 private:
  void run_loop();

  ThreadBackend& backend_;
  long pid_;
  AffinityPlan plan_;
  std::vector<RoleRule> rules_;
  std::chrono::milliseconds period_;

  std::set<long> seen_;
  std::int64_t last_poll_ns_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<PinRecord> queue_;
  std::optional<Error> failure_;
  bool stop_ = false;
  std::atomic<bool> gone_{false};
  std::thread thread_;
};

}  // namespace ampgc
