#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ampgc/gclog.hpp"
#include "ampgc/pinctl.hpp"
#include "ampgc/rapl.hpp"
#include "ampgc/topology.hpp"

namespace ampgc::bench {

struct RunPlan {
  std::string benchmark = "target";
  HardwareConfig config;
  /// argv template. Placeholders: {heap_mb} {placement} {iterations} {seed} {invocation} {energy_trace}.
  std::vector<std::string> target;
  int invocations = 10;
  int iterations = 20;
  int measured_tail = 5;
  double cv_threshold = 0.05;
  int cv_window = 5;
  double heap_mb = 256;
  bool flush_caches = true;
  std::uint64_t seed = 1;  // invocation k runs with seed + k
  std::vector<EnergyDomain> domains{EnergyDomain::Pkg, EnergyDomain::Pp0};

  /// Throws Error(kConfig) on a violated invariant.
  void validate() const;
};

/// Substitutes the placeholders of `plan.target` for one invocation.
std::vector<std::string> expand_target(const RunPlan& plan, int invocation, const std::string& energy_trace_path);

struct IterationResult {
  int index = 0;  // 1-based, as announced by the target
  double exec_ms = 0;
  std::map<EnergyDomain, double> energy_j;
  RunMetrics metrics;
  std::vector<double> latency_samples;
};

struct InvocationResult {
  int index = 0;
  std::vector<IterationResult> iterations;
  std::vector<StallEvent> stalls;
  std::optional<std::size_t> steady_index;
  bool steady_reached = false;
  bool clean = false;
  bool failed = false;
  std::string failure;
  int exit_code = 0;
  bool energy_truncated = false;

  /// The last `tail` iterations (fewer if the invocation ended early).
  std::span<const IterationResult> measured(int tail) const;
};

struct RunSeries {
  RunPlan plan;
  std::vector<InvocationResult> invocations;
  std::vector<PinRecord> pin_records;
  std::string flush_method;
  std::string energy_source;
  std::vector<std::string> warnings;

  /// One value per measured iteration across all invocations.
  std::vector<double> measured_values(std::string_view metric) const;
  bool all_clean() const;
};

/// Value of a named metric for one iteration; nullopt when not recorded.
/// Throws Error(kConfig) for an unknown name.
std::optional<double> metric_value(const IterationResult& it, std::string_view metric);

/// Names accepted by RunSeries::measured_values.
std::vector<std::string> metric_names(const RunPlan& plan);

/// Smallest i >= window-1 whose trailing window has CV = stddev/mean below
/// `threshold`.
std::optional<std::size_t> detect_steady(std::span<const double> exec_times, int window, double threshold);

// ---------------------------------------------------------------------------
// Cache flushing

class CacheFlusher {
 public:
  virtual ~CacheFlusher() = default;
  virtual void flush() = 0;
  virtual std::string method() const = 0;
};

/// Streams reads and writes over a buffer larger than the last-level cache.
class ThrashFlusher final : public CacheFlusher {
 public:
  explicit ThrashFlusher(std::size_t bytes);
  static std::size_t buffer_bytes_for(const CoreTopology& topo);

  void flush() override;
  std::string method() const override { return "buffer_thrash"; }
  std::size_t size() const { return buffer_.size(); }

 private:
  std::vector<unsigned char> buffer_;
  unsigned char salt_ = 0;
};

class MockFlusher final : public CacheFlusher {
 public:
  void flush() override { ++calls_; }
  std::string method() const override { return "mock"; }
  int calls() const { return calls_; }

 private:
  int calls_ = 0;
};

// ---------------------------------------------------------------------------
// Target processes

class TargetProcess {
 public:
  virtual ~TargetProcess() = default;
  virtual long pid() const = 0;
  /// Next stdout line; nullopt at end of stream.
  virtual std::optional<std::string> next_line() = 0;
  /// Waits for exit. Returns the exit code, or 128 + signal.
  virtual int wait() = 0;
};

class Launcher {
 public:
  virtual ~Launcher() = default;
  /// Throws Error(kTarget) when the program cannot be started.
  virtual std::unique_ptr<TargetProcess> launch(const std::vector<std::string>& argv) = 0;
};

/// fork/exec with stdout captured through a pipe; stderr is inherited.
class PosixLauncher final : public Launcher {
 public:
  std::unique_ptr<TargetProcess> launch(const std::vector<std::string>& argv) override;
};

// ---------------------------------------------------------------------------
// Runner

enum class EnergySource {
  None,
  Live,   // backend read at each ITER marker
  Trace,  // target writes a fixture CSV to {energy_trace}; read after exit
};

struct Environment {
  Launcher* launcher = nullptr;
  /// Fresh thread backend per invocation; empty disables pinning.
  std::function<std::unique_ptr<ThreadBackend>()> thread_backend;
  std::vector<RoleRule> rules = default_role_rules();
  /// Poll synchronously once right after launch before the watcher thread
  /// starts. With a mock backend whose threads all exist at poll 0 this
  /// makes pin records independent of scheduling.
  bool initial_poll = true;
  EnergySource energy_source = EnergySource::None;
  EnergyBackend* energy = nullptr;
  CacheFlusher* flusher = nullptr;
  /// Directory for energy traces written by the target.
  std::filesystem::path scratch_dir;
};

/// Runs every invocation of `plan` sequentially.
RunSeries run_experiment(const RunPlan& plan, const CoreTopology& topo, const Environment& env);

/// Turns the stdout of one target run into iteration results.
class InvocationCollector {
 public:
  /// Reads the live counters of every requested domain.
  using EnergyProbe = std::function<std::map<EnergyDomain, EnergySample>()>;

  InvocationCollector(int index, std::vector<EnergyDomain> domains, std::uint64_t max_range_uj);

  /// Feeds one line; `live` may be empty. Returns true on an `ITER n END` marker.
  bool feed(std::string_view line, const EnergyProbe& live = {});
  /// Assigns per-iteration energy from a trace whose time axis is the sum
  /// of announced execution times.
  void apply_trace(const FixtureBackend& trace);
  /// `heap_mb` is used when the target printed no RUNEND line.
  InvocationResult finish(int exit_code, int window, double threshold, double heap_mb);

 private:
  struct Bounds {
    double begin_ms = 0;
    double end_ms = 0;
  };

  InvocationResult result_;
  std::vector<EnergyDomain> domains_;
  std::uint64_t range_;
  std::vector<std::string> pending_gc_;
  std::vector<double> pending_latency_;
  std::vector<StallEvent> all_stalls_;
  std::map<EnergyDomain, EnergySample> begin_energy_;
  std::vector<Bounds> bounds_;
  std::vector<std::vector<GcCycleRecord>> iter_cycles_;
  std::optional<RunEnd> run_end_;
  std::optional<int> open_iter_;
  double virtual_ms_ = 0;
  double open_begin_ms_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence

/// Writes series.json, invocation_<k>.json and measured.csv. Contents are a
/// function of the series only (no timestamps or absolute paths).
void save_series(const RunSeries& series, const std::filesystem::path& dir);
RunSeries load_series(const std::filesystem::path& dir);
std::string series_json(const RunSeries& series);
RunSeries series_from_json(std::string_view text);
std::string measured_csv(const RunSeries& series);

// ---------------------------------------------------------------------------
// Heap search

struct HeapProbe {
  double heap_mb = 0;
  int run = 0;
  bool clean = false;
};

struct HeapSearchResult {
  double heap_mb = 0;
  int grid_index = 0;
  std::vector<HeapProbe> probes;
};

inline constexpr double kHeapCapMb = 65536.0;

/// Grid point base * growth^k.
double heap_grid_point(double base_mb, double growth, int k);

/// Walks the grid upwards; a size is accepted after `required_clean`
/// consecutive clean runs and abandoned on the first unclean one. Throws
/// Error(kNoHeap) once the grid passes `cap_mb`.
HeapSearchResult heap_search(const std::function<bool(double heap_mb, int run)>& is_clean, double base_mb = 16,
                             double growth = 1.10, int required_clean = 5, double cap_mb = kHeapCapMb);

}  // namespace ampgc::bench
