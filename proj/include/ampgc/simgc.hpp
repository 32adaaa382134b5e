#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ampgc/gclog.hpp"
#include "ampgc/rapl.hpp"
#include "ampgc/topology.hpp"

namespace ampgc::sim {

/// Inputs of one simulated run. Heuristic constants are exposed here and
/// echoed into the run metadata.
struct SimParams {
  // heap and workload
  double heap_mb = 256;
  double alloc_rate_mb_s = 300;   // mean mutator allocation rate
  double burst_factor = 4.0;      // rate multiplier on a burst tick
  double burst_prob = 0.01;       // per-tick burst probability
  double live_fraction = 0.05;    // share of transient data still reachable when a cycle marks it
  double resident_mb = 40;        // long-lived data, always live
  double min_heap_mb = 0;         // footprint floor: below it the run fails with OOM at start
  double run_seconds = 5;         // mutator work summed over all iterations
  int iterations = 1;
  double tick_ms = 1;
  std::uint64_t seed = 1;

  // collector placement
  int gc_core_count = 4;
  double gc_core_speed = 1.0;     // p-core = 1.0
  int gc_hwt_per_core = 2;
  CoreType gc_core_type = CoreType::P;
  int mutator_pcores = 4;
  std::optional<int> fixed_workers;  // bypasses worker adaptation

  // collector cost model
  double unit_cost_ms_per_mb = 5.0;  // true cost of one MB of live data for one worker at speed 1.0
  double mark_share = 0.6;           // fraction of a cycle's work spent marking
  int major_every = 4;               // every n-th cycle is major
  double minor_resident_share = 0.25;  // resident data a minor cycle must scan

  // heuristics
  double ewma_alpha = 0.3;
  double headroom = 1.2;
  int history_depth = 8;
  double cold_unit_cost_ms_per_mb = 10.0;
  double usage_trigger = 0.75;  // proactive start when used/heap reaches this
  double idle_trigger_s = 300;
  double rate_sample_ms = 100;  // allocation-rate sampling window

  // mutator latency model
  double latency_period_ms = 5;
  double latency_base_ms = 1.0;
  double latency_jitter_ms = 0.2;
  double phase_penalty_ms = 15.0;
  double warmup_amplitude = 0.3;   // first iteration runs this much slower
  double warmup_decay_iters = 1.5;

  // energy model (synthetic)
  double idle_w = 8.0;
  double pcore_active_w = 7.0;
  double pcore_second_thread_w = 1.5;
  double ecore_active_w = 1.8;
  double emodule_w = 1.0;  // per powered e-core module while any GC worker runs
  double energy_period_ms = 100;
  std::uint64_t energy_max_range_uj = kDefaultMaxRangeUj;
  std::uint64_t energy_offset_uj = 0;

  /// Throws Error(kConfig) when a field is out of range.
  void validate() const;
  int gc_capacity() const { return gc_core_count * gc_hwt_per_core; }
};

/// Typical speeds relative to a p-core used when mapping a placement onto
/// simulator parameters.
inline constexpr double kEcoreSpeed = 0.7;

/// Sets core count, type, speed and HWTs per core from a placement.
SimParams with_placement(SimParams p, const HardwareConfig& config);

struct CycleObservation {
  int workers = 1;
  double duration_ms = 0;
  double work_mb = 0;
  double speed = 1.0;
};

/// Heuristic memory: a bounded history of completed cycles and the
/// smoothed allocation rate.
struct HeuristicState {
  double smoothed_alloc_mb_s = 0;
  bool rate_initialized = false;
  std::deque<CycleObservation> history;
  std::size_t history_depth = 8;
  double ewma_alpha = 0.3;
  double cold_unit_cost_ms_per_mb = 10.0;

  void observe_rate(double mb_s);
  void observe_cycle(const CycleObservation& obs);
  /// EWMA of duration * workers * speed / work over the history, oldest
  /// first; the cold constant while it is empty.
  double unit_cost() const;
};

double predict_cycle_duration(int workers, const HeuristicState& hs, double work_mb, double speed);

/// Inputs to the trigger and worker-selection rules at one instant.
struct TriggerView {
  double free_mb = 0;
  double used_mb = 0;
  double heap_mb = 0;
  double next_work_mb = 0;
  double ms_since_last_cycle = 0;
  double speed = 1.0;
  int capacity = 1;
  double headroom = 1.2;
  double usage_trigger = 0.75;
  double idle_trigger_s = 300;
  const HeuristicState* hs = nullptr;

  /// free / smoothed allocation rate, in ms (infinite at rate 0).
  double time_until_oom_ms() const;
};

enum class Trigger { None, AllocationRate, HeapUsage, Idle };

Trigger start_trigger(const TriggerView& v);
inline bool should_start_cycle(const TriggerView& v) { return start_trigger(v) != Trigger::None; }
int choose_workers(const TriggerView& v);

struct TickState {
  double t_ms = 0;
  double heap_mb = 0;
  double used_mb = 0;
  double free_mb = 0;
  double allocated_mb = 0;  // cumulative
  double reclaimed_mb = 0;  // cumulative
  double initial_used_mb = 0;
};

struct SimOutput {
  /// Full target stream: ITER markers, GC log lines, LATENCY lines, RUNEND.
  std::vector<std::string> stdout_lines;
  std::vector<std::string> gc_log;
  std::vector<GcCycleRecord> cycles;
  std::vector<StallEvent> stalls;
  std::vector<double> latency_samples;
  std::vector<EnergySample> energy_trace;
  std::vector<double> iteration_exec_ms;
  double exec_ms = 0;
  bool clean = true;
  bool out_of_memory = false;

  std::string energy_csv(std::uint64_t max_range_uj) const;
};

using TickObserver = std::function<void(const TickState&)>;

/// Runs the workload to completion (or OOM). Deterministic in `params`.
SimOutput simulate(const SimParams& params, const TickObserver& observer = {});

}  // namespace ampgc::sim
