#include "ampgc/simgc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/core.h>

#include "ampgc/error.hpp"

namespace ampgc::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kEcoresPerModule = 4;

[[noreturn]] void bad_param(const std::string& what) { throw Error(ErrorKind::kConfig, "simulator: " + what); }

// Uniform [0, 1) from the top 53 bits, independent of the standard
// library's distribution implementation.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

void SimParams::validate() const {
  if (!(heap_mb > 0)) bad_param("heap_mb must be positive");
  if (!(alloc_rate_mb_s >= 0)) bad_param("alloc_rate_mb_s must be non-negative");
  if (!(burst_factor >= 1)) bad_param("burst_factor must be >= 1");
  if (!(burst_prob >= 0 && burst_prob <= 1)) bad_param("burst_prob must lie in [0, 1]");
  if (!(live_fraction > 0 && live_fraction < 1)) bad_param("live_fraction must lie in (0, 1)");
  if (!(resident_mb >= 0)) bad_param("resident_mb must be non-negative");
  if (!(run_seconds > 0)) bad_param("run_seconds must be positive");
  if (iterations < 1) bad_param("iterations must be >= 1");
  if (!(tick_ms > 0)) bad_param("tick_ms must be positive");
  if (gc_core_count < 1) bad_param("gc_core_count must be >= 1");
  if (!(gc_core_speed > 0)) bad_param("gc_core_speed must be positive");
  if (gc_hwt_per_core < 1) bad_param("gc_hwt_per_core must be >= 1");
  if (mutator_pcores < 1) bad_param("mutator_pcores must be >= 1");
  if (fixed_workers && *fixed_workers < 1) bad_param("fixed_workers must be >= 1");
  if (!(unit_cost_ms_per_mb > 0)) bad_param("unit_cost_ms_per_mb must be positive");
  if (!(mark_share > 0 && mark_share < 1)) bad_param("mark_share must lie in (0, 1)");
  if (major_every < 1) bad_param("major_every must be >= 1");
  if (!(minor_resident_share >= 0 && minor_resident_share <= 1)) bad_param("minor_resident_share must lie in [0, 1]");
  if (!(ewma_alpha > 0 && ewma_alpha <= 1)) bad_param("ewma_alpha must lie in (0, 1]");
  if (!(headroom > 0)) bad_param("headroom must be positive");
  if (history_depth < 1) bad_param("history_depth must be >= 1");
  if (!(cold_unit_cost_ms_per_mb > 0)) bad_param("cold_unit_cost_ms_per_mb must be positive");
  if (!(usage_trigger > 0 && usage_trigger <= 1)) bad_param("usage_trigger must lie in (0, 1]");
  if (!(idle_trigger_s > 0)) bad_param("idle_trigger_s must be positive");
  if (!(rate_sample_ms > 0)) bad_param("rate_sample_ms must be positive");
  if (!(latency_period_ms > 0)) bad_param("latency_period_ms must be positive");
  if (!(energy_period_ms > 0)) bad_param("energy_period_ms must be positive");
  if (energy_max_range_uj == 0 || energy_offset_uj >= energy_max_range_uj)
    bad_param("energy counter offset must lie below its range");
}

SimParams with_placement(SimParams p, const HardwareConfig& config) {
  p.gc_core_count = config.gc_core_count;
  p.gc_core_type = config.gc_core_type;
  p.mutator_pcores = config.mutator_pcore_count;
  if (config.gc_core_type == CoreType::P) {
    p.gc_core_speed = 1.0;
    p.gc_hwt_per_core = 2;
  } else {
    p.gc_core_speed = kEcoreSpeed;
    p.gc_hwt_per_core = 1;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Heuristics

void HeuristicState::observe_rate(double mb_s) {
  if (!rate_initialized) {
    smoothed_alloc_mb_s = mb_s;
    rate_initialized = true;
  } else {
    smoothed_alloc_mb_s = ewma_alpha * mb_s + (1.0 - ewma_alpha) * smoothed_alloc_mb_s;
  }
}

void HeuristicState::observe_cycle(const CycleObservation& obs) {
  if (obs.work_mb <= 0 || obs.duration_ms <= 0) return;
  history.push_back(obs);
  while (history.size() > history_depth) history.pop_front();
}

double HeuristicState::unit_cost() const {
  if (history.empty()) return cold_unit_cost_ms_per_mb;
  double cost = 0.0;
  bool first = true;
  for (const auto& h : history) {
    const double observed = h.duration_ms * h.workers * h.speed / h.work_mb;
    cost = first ? observed : ewma_alpha * observed + (1.0 - ewma_alpha) * cost;
    first = false;
  }
  return cost;
}

double predict_cycle_duration(int workers, const HeuristicState& hs, double work_mb, double speed) {
  if (workers < 1) bad_param("prediction needs at least one worker");
  if (!(speed > 0)) bad_param("prediction needs a positive speed");
  return work_mb * hs.unit_cost() / (static_cast<double>(workers) * speed);
}

double TriggerView::time_until_oom_ms() const {
  const double rate = hs && hs->rate_initialized ? hs->smoothed_alloc_mb_s : 0.0;
  if (rate <= 0) return kInf;
  return free_mb / rate * 1000.0;
}

Trigger start_trigger(const TriggerView& v) {
  if (v.hs == nullptr) bad_param("trigger evaluation needs heuristic state");
  const double ttoom = v.time_until_oom_ms();
  if (ttoom <= predict_cycle_duration(v.capacity, *v.hs, v.next_work_mb, v.speed) * v.headroom)
    return Trigger::AllocationRate;
  if (v.heap_mb > 0 && v.used_mb >= v.usage_trigger * v.heap_mb) return Trigger::HeapUsage;
  if (v.ms_since_last_cycle >= v.idle_trigger_s * 1000.0) return Trigger::Idle;
  return Trigger::None;
}

int choose_workers(const TriggerView& v) {
  if (v.hs == nullptr) bad_param("worker selection needs heuristic state");
  if (v.capacity < 1) bad_param("GC capacity must be >= 1");
  const double budget = v.time_until_oom_ms() / v.headroom;
  for (int w = 1; w <= v.capacity; ++w) {
    if (predict_cycle_duration(w, *v.hs, v.next_work_mb, v.speed) <= budget) return w;
  }
  return v.capacity;
}

// ---------------------------------------------------------------------------
// Simulation

std::string SimOutput::energy_csv(std::uint64_t max_range_uj) const {
  return format_energy_csv(energy_trace, max_range_uj);
}

namespace {

struct ActiveCycle {
  long id = 0;
  CycleKind kind = CycleKind::Minor;
  int workers = 1;
  double start_ms = 0;
  double mark_end_ms = 0;
  double end_ms = 0;
  double mark_ms = 0;
  double relocate_ms = 0;
  double work_mb = 0;
  double snapshot_transient_mb = 0;
  bool mark_done = false;
};

class Simulation {
 public:
  Simulation(const SimParams& p, const TickObserver& observer)
      : p_(p), observer_(observer), bursts_(p.seed), jitter_(p.seed ^ 0x9E3779B97F4A7C15ULL) {
    hs_.history_depth = static_cast<std::size_t>(p.history_depth);
    hs_.ewma_alpha = p.ewma_alpha;
    hs_.cold_unit_cost_ms_per_mb = p.cold_unit_cost_ms_per_mb;
    resident_ = p.resident_mb;
    initial_used_ = used();
    pkg_uj_ = static_cast<double>(p.energy_offset_uj);
    pp0_uj_ = static_cast<double>(p.energy_offset_uj);
  }

  SimOutput run() {
    if (p_.heap_mb < p_.min_heap_mb || resident_ >= p_.heap_mb) {
      add_stall(StallKind::OutOfMemory);
      out_.out_of_memory = true;
      finish();
      return std::move(out_);
    }
    emit_energy();
    begin_iteration();
    while (iter_ < p_.iterations && !out_.out_of_memory) step();
    finish();
    return std::move(out_);
  }

 private:
  double used() const { return resident_ + transient_; }
  double free_mb() const { return p_.heap_mb - used(); }

  double slowdown(int iteration) const {
    return 1.0 + p_.warmup_amplitude * std::exp(-static_cast<double>(iteration) / p_.warmup_decay_iters);
  }

  double iteration_work_ms() const { return p_.run_seconds * 1000.0 / p_.iterations; }

  CycleKind next_kind() const {
    return (next_cycle_id_ % p_.major_every == 0) ? CycleKind::Major : CycleKind::Minor;
  }

  double work_for(CycleKind kind, double transient) const {
    const double resident_part = kind == CycleKind::Major ? resident_ : p_.minor_resident_share * resident_;
    return resident_part + p_.live_fraction * transient;
  }

  TriggerView view() const {
    TriggerView v;
    v.free_mb = free_mb();
    v.used_mb = used();
    v.heap_mb = p_.heap_mb;
    v.next_work_mb = work_for(next_kind(), transient_);
    v.ms_since_last_cycle = t_ - last_cycle_end_;
    v.speed = p_.gc_core_speed;
    v.capacity = p_.gc_capacity();
    v.headroom = p_.headroom;
    v.usage_trigger = p_.usage_trigger;
    v.idle_trigger_s = p_.idle_trigger_s;
    v.hs = &hs_;
    return v;
  }

  void start_cycle() {
    const TriggerView v = view();
    ActiveCycle c;
    c.id = next_cycle_id_++;
    c.kind = (c.id % p_.major_every == 0) ? CycleKind::Major : CycleKind::Minor;
    c.workers = p_.fixed_workers ? *p_.fixed_workers : choose_workers(v);
    c.snapshot_transient_mb = transient_;
    c.work_mb = work_for(c.kind, transient_);
    const double duration = c.work_mb * p_.unit_cost_ms_per_mb / (c.workers * p_.gc_core_speed);
    c.mark_ms = duration * p_.mark_share;
    c.relocate_ms = duration - c.mark_ms;
    c.start_ms = t_;
    c.mark_end_ms = t_ + c.mark_ms;
    c.end_ms = t_ + duration;
    cycle_ = c;
    add_latency(p_.latency_base_ms + p_.phase_penalty_ms);
  }

  // Returns true when the cycle finished inside [t, t + dt).
  bool advance_cycle(double tick_end) {
    if (!cycle_) return false;
    ActiveCycle& c = *cycle_;
    if (!c.mark_done && c.mark_end_ms <= tick_end) {
      c.mark_done = true;
      add_latency(p_.latency_base_ms + p_.phase_penalty_ms);
    }
    if (c.end_ms > tick_end) return false;
    const double reclaim = (1.0 - p_.live_fraction) * c.snapshot_transient_mb;
    transient_ -= reclaim;
    reclaimed_ += reclaim;
    GcCycleRecord r{c.id, c.kind, c.start_ms, c.end_ms, c.mark_ms, c.relocate_ms, c.workers, used()};
    out_.cycles.push_back(r);
    emit(format_cycle(r), true);
    hs_.observe_cycle(CycleObservation{c.workers, c.end_ms - c.start_ms, c.work_mb, p_.gc_core_speed});
    last_cycle_end_ = c.end_ms;
    add_latency(p_.latency_base_ms + p_.phase_penalty_ms);
    cycle_.reset();
    return true;
  }

  double gc_power_w(int workers) const {
    if (p_.gc_core_type == CoreType::P) {
      const int cores = std::min(p_.gc_core_count, (workers + p_.gc_hwt_per_core - 1) / p_.gc_hwt_per_core);
      const int extra = std::max(0, std::min(workers, p_.gc_capacity()) - cores);
      return cores * p_.pcore_active_w + extra * p_.pcore_second_thread_w;
    }
    const int cores = std::min(workers, p_.gc_core_count);
    // A module is powered as a whole as soon as the placement spans it.
    const int modules = (p_.gc_core_count + kEcoresPerModule - 1) / kEcoresPerModule;
    return cores * p_.ecore_active_w + modules * p_.emodule_w;
  }

  void step() {
    const double dt = p_.tick_ms;
    if (!cycle_ && should_start_cycle(view())) start_cycle();

    const double slow = slowdown(iter_);
    const bool burst = bursts_() < p_.burst_prob;
    const double rate = p_.alloc_rate_mb_s * (burst ? p_.burst_factor : 1.0);
    const double demand = rate * dt / 1000.0 / slow;
    if (demand > free_mb() && !cycle_) start_cycle();
    const double granted = std::min(demand, std::max(0.0, free_mb()));
    const double fraction = demand > 0 ? granted / demand : 1.0;
    const bool stalled_now = fraction < 1.0;
    if (stalled_now && !stalled_) {
      add_stall(cycle_ && cycle_->mark_done ? StallKind::RelocationStall : StallKind::AllocationStall);
      stall_started_ = t_;
    }
    stalled_ = stalled_now;
    transient_ += granted;
    allocated_ += granted;
    window_alloc_ += granted;
    progress_ += dt * fraction / slow;

    const int gc_workers = cycle_ ? cycle_->workers : 0;
    const bool completed = advance_cycle(t_ + dt);
    if (completed && stalled_now && free_mb() < p_.alloc_rate_mb_s * dt / 1000.0) {
      add_stall(StallKind::OutOfMemory);
      out_.out_of_memory = true;
    }

    const double pp0_w = p_.mutator_pcores * p_.pcore_active_w * fraction + (gc_workers ? gc_power_w(gc_workers) : 0.0);
    pp0_uj_ += pp0_w * dt * 1000.0;
    pkg_uj_ += (pp0_w + p_.idle_w) * dt * 1000.0;
    t_ += dt;

    if (t_ - window_start_ >= p_.rate_sample_ms) {
      hs_.observe_rate(window_alloc_ / ((t_ - window_start_) / 1000.0));
      window_alloc_ = 0;
      window_start_ = t_;
    }
    while (next_latency_ <= t_) {
      const double stall_ms = stalled_ ? t_ - stall_started_ : 0.0;
      add_latency(p_.latency_base_ms + p_.latency_jitter_ms * jitter_() + stall_ms);
      next_latency_ += p_.latency_period_ms;
    }
    if (t_ >= next_energy_) {
      emit_energy();
      next_energy_ += p_.energy_period_ms;
    }
    if (!out_.out_of_memory && progress_ >= iteration_work_ms()) end_iteration();

    if (observer_) {
      observer_(TickState{t_, p_.heap_mb, used(), free_mb(), allocated_, reclaimed_, initial_used_});
    }
  }

  void begin_iteration() {
    emit(fmt::format("ITER {} BEGIN", iter_ + 1), false);
    iter_start_ = t_;
  }

  void end_iteration() {
    const double exec = t_ - iter_start_;
    out_.iteration_exec_ms.push_back(exec);
    emit_energy();
    emit(fmt::format("ITER {} END exec_ms={}", iter_ + 1, exec), false);
    progress_ -= iteration_work_ms();
    ++iter_;
    if (iter_ < p_.iterations) begin_iteration();
  }

  void finish() {
    out_.exec_ms = t_;
    if (t_ > 0) emit_energy();
    out_.clean = out_.stalls.empty();
    emit(format_run_end(RunEnd{t_, p_.heap_mb}), true);
  }

  void add_stall(StallKind kind) {
    StallEvent s{kind, t_};
    out_.stalls.push_back(s);
    emit(format_stall(s), true);
  }

  void add_latency(double ms) {
    out_.latency_samples.push_back(ms);
    emit(fmt::format("LATENCY {}", ms), false);
  }

  void emit(std::string line, bool gc) {
    if (gc) out_.gc_log.push_back(line);
    out_.stdout_lines.push_back(std::move(line));
  }

  void emit_energy() {
    const auto ts = static_cast<std::int64_t>(std::llround(t_ * 1e6));
    if (!out_.energy_trace.empty() && out_.energy_trace.back().timestamp_ns >= ts) return;
    const auto range = p_.energy_max_range_uj;
    auto counter = [range](double uj) {
      return static_cast<std::uint64_t>(std::fmod(std::floor(uj), static_cast<double>(range)));
    };
    out_.energy_trace.push_back(EnergySample{EnergyDomain::Pkg, ts, counter(pkg_uj_)});
    out_.energy_trace.push_back(EnergySample{EnergyDomain::Pp0, ts, counter(pp0_uj_)});
  }

  const SimParams& p_;
  const TickObserver& observer_;
  Uniform bursts_;
  Uniform jitter_;
  HeuristicState hs_;
  SimOutput out_;

  double t_ = 0;
  double resident_ = 0;
  double transient_ = 0;
  double initial_used_ = 0;
  double allocated_ = 0;
  double reclaimed_ = 0;
  std::optional<ActiveCycle> cycle_;
  long next_cycle_id_ = 1;
  double last_cycle_end_ = 0;
  double window_alloc_ = 0;
  double window_start_ = 0;
  bool stalled_ = false;
  double stall_started_ = 0;
  int iter_ = 0;
  double iter_start_ = 0;
  double progress_ = 0;
  double next_latency_ = 0;
  double next_energy_ = 0;
  double pkg_uj_ = 0;
  double pp0_uj_ = 0;
};

}  // namespace

SimOutput simulate(const SimParams& params, const TickObserver& observer) {
  params.validate();
  return Simulation(params, observer).run();
}

}  // namespace ampgc::sim
