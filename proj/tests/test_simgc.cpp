#include <doctest.h>

#include <cmath>
#include <random>

#include "ampgc/bench.hpp"
#include "ampgc/error.hpp"
#include "ampgc/simgc.hpp"

using namespace ampgc;
using namespace ampgc::sim;

namespace {

HeuristicState cold() {
  HeuristicState hs;
  hs.cold_unit_cost_ms_per_mb = 10;
  return hs;
}

TriggerView view_of(const HeuristicState& hs, double free_mb, double work_mb, int capacity, double speed = 1.0) {
  TriggerView v;
  v.free_mb = free_mb;
  v.used_mb = 0;
  v.heap_mb = 0;  // disables the usage trigger
  v.next_work_mb = work_mb;
  v.capacity = capacity;
  v.speed = speed;
  v.hs = &hs;
  return v;
}

SimParams short_run(std::uint64_t seed = 1) {
  SimParams p;
  p.heap_mb = 128;
  p.run_seconds = 2;
  p.iterations = 4;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_SUITE("simgc") {

TEST_CASE("duration model") {
  auto hs = cold();
  const double one = predict_cycle_duration(2, hs, 50, 1.0);
  CHECK(one == doctest::Approx(250));
  CHECK(predict_cycle_duration(4, hs, 50, 1.0) == one / 2);
  CHECK(predict_cycle_duration(2, hs, 50, 0.7) / one == doctest::Approx(1 / 0.7).epsilon(1e-14));
  CHECK_THROWS_AS(predict_cycle_duration(0, hs, 50, 1.0), Error);

  SUBCASE("history replaces the cold constant") {
    hs.observe_cycle({2, 100, 40, 1.0});  // 5 ms per MB
    CHECK(hs.unit_cost() == doctest::Approx(5));
    hs.observe_cycle({1, 300, 40, 1.0});  // 7.5
    CHECK(hs.unit_cost() == doctest::Approx(0.3 * 7.5 + 0.7 * 5));
    hs.history_depth = 1;
    hs.observe_cycle({1, 400, 40, 1.0});
    CHECK(hs.history.size() == 1);
    CHECK(hs.unit_cost() == doctest::Approx(10));
  }
}

TEST_CASE("start trigger") {
  auto hs = cold();
  SUBCASE("idle allocation") {
    hs.observe_rate(0);
    auto v = view_of(hs, 100, 10, 4);
    v.ms_since_last_cycle = 1000;
    CHECK(start_trigger(v) == Trigger::None);
    v.ms_since_last_cycle = v.idle_trigger_s * 1000 + 1;
    CHECK(start_trigger(v) == Trigger::Idle);
  }
  SUBCASE("allocation rate rule") {
    hs.observe_rate(50);
    auto v = view_of(hs, 100, 300, 1);  // 3000 ms predicted
    REQUIRE(predict_cycle_duration(1, hs, 300, 1.0) == doctest::Approx(3000));
    CHECK(v.time_until_oom_ms() == doctest::Approx(2000));
    CHECK(start_trigger(v) == Trigger::AllocationRate);
    v.free_mb = 1000;
    CHECK(start_trigger(v) == Trigger::None);
  }
  SUBCASE("heap usage") {
    auto v = view_of(hs, 100, 1, 1);
    v.heap_mb = 400;
    v.used_mb = 300;
    CHECK(start_trigger(v) == Trigger::HeapUsage);
  }
}

TEST_CASE("worker choice") {
  auto hs = cold();
  hs.observe_rate(10);
  CHECK(choose_workers(view_of(hs, 10000, 10, 8)) == 1);
  CHECK(choose_workers(view_of(hs, 0.01, 10, 8)) == 8);

  SUBCASE("slower cores never get fewer workers") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 2000; ++i) {
      HeuristicState s = cold();
      s.observe_rate(1 + 500 * u(rng));
      const double free_mb = 1 + 300 * u(rng), work = 1 + 200 * u(rng), speed = 0.2 + u(rng);
      const int cap = 1 + static_cast<int>(rng() % 16);
      CHECK(choose_workers(view_of(s, free_mb, work, cap, speed / 2)) >=
            choose_workers(view_of(s, free_mb, work, cap, speed)));
    }
  }
}

TEST_CASE("placements map to simulator parameters") {
  const auto e = with_placement(SimParams{}, parse_config_name("8E"));
  CHECK(e.gc_core_speed == kEcoreSpeed);
  CHECK(e.gc_capacity() == 8);
  const auto p = with_placement(SimParams{}, parse_config_name("2P"));
  CHECK(p.gc_core_speed == 1.0);
  CHECK(p.gc_capacity() == 4);
}

TEST_CASE("determinism") {
  const auto a = simulate(short_run(9));
  const auto b = simulate(short_run(9));
  CHECK(a.stdout_lines == b.stdout_lines);
  CHECK(a.energy_trace == b.energy_trace);
  CHECK(a.energy_csv(kDefaultMaxRangeUj) == b.energy_csv(kDefaultMaxRangeUj));
  const auto c = simulate(short_run(10));
  CHECK(a.stdout_lines != c.stdout_lines);
}

TEST_CASE("target protocol") {
  const auto out = simulate(short_run());
  CHECK(out.iteration_exec_ms.size() == 4);
  CHECK(out.stdout_lines.front() == "ITER 1 BEGIN");
  CHECK(out.stdout_lines.back().rfind("RUNEND", 0) == 0);
  CHECK_FALSE(out.cycles.empty());
  CHECK(out.clean);
  // warm-up makes the first iteration the slowest
  CHECK(out.iteration_exec_ms.front() > out.iteration_exec_ms.back());
  for (std::size_t i = 1; i < out.cycles.size(); ++i) CHECK(out.cycles[i].id == out.cycles[i - 1].id + 1);
  for (const auto& c : out.cycles)
    CHECK((c.kind == CycleKind::Major) == (c.id % 4 == 0));
}

TEST_CASE("fixed workers: slower cores stretch the same cycle by 1/speed") {
  auto p = short_run();
  p.fixed_workers = 2;
  p.headroom = 1e-6;  // only the usage trigger fires, independent of speed
  p.gc_core_speed = 1.0;
  const auto fast = simulate(p);
  p.gc_core_speed = 0.7;
  const auto slow = simulate(p);
  REQUIRE_FALSE(fast.cycles.empty());
  REQUIRE_FALSE(slow.cycles.empty());
  CHECK(slow.cycles[0].start_ms == fast.cycles[0].start_ms);
  CHECK(slow.cycles[0].duration_ms() / fast.cycles[0].duration_ms() == doctest::Approx(1 / 0.7).epsilon(1e-12));
}

TEST_CASE("fixed workers: every cycle is slower at 0.7") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto p = short_run(seed);
    p.fixed_workers = 4;
    p.gc_core_speed = 1.0;
    const auto fast = simulate(p);
    p.gc_core_speed = 0.7;
    const auto slow = simulate(p);
    const auto n = std::min(fast.cycles.size(), slow.cycles.size());
    REQUIRE(n > 3);
    for (std::size_t i = 0; i < n; ++i) CHECK(slow.cycles[i].duration_ms() > fast.cycles[i].duration_ms());
  }
}

TEST_CASE("heap conservation on every tick") {
  auto p = short_run(2);
  p.heap_mb = 70;
  long ticks = 0;
  simulate(p, [&](const TickState& s) {
    ++ticks;
    CHECK(s.used_mb == doctest::Approx(s.initial_used_mb + s.allocated_mb - s.reclaimed_mb));
    CHECK(s.free_mb == doctest::Approx(s.heap_mb - s.used_mb));
    CHECK(s.free_mb >= -1e-9);
  });
  CHECK(ticks > 1000);
}

TEST_CASE("small heaps stall, large heaps run clean") {
  auto p = short_run();
  p.heap_mb = 42;
  CHECK_FALSE(simulate(p).clean);
  p.heap_mb = 512;
  CHECK(simulate(p).clean);

  SUBCASE("bisection finds a single crossover") {
    auto clean_at = [&](double heap) {
      auto q = short_run();
      q.heap_mb = heap;
      return simulate(q).clean;
    };
    double lo = 42, hi = 512;
    while (hi - lo > 0.5) {
      const double mid = (lo + hi) / 2;
      (clean_at(mid) ? hi : lo) = mid;
    }
    for (double h = hi; h < hi + 40; h += 4) CHECK(clean_at(h));
  }
  SUBCASE("footprint floor") {
    p.min_heap_mb = 600;
    const auto out = simulate(p);
    CHECK(out.out_of_memory);
    REQUIRE(out.stalls.size() == 1);
    CHECK(out.stalls[0].kind == StallKind::OutOfMemory);
  }
}

TEST_CASE("energy trace is monotone and favours fewer watts") {
  auto p = with_placement(short_run(), parse_config_name("8E"));
  const auto e = simulate(p);
  auto q = with_placement(short_run(), parse_config_name("4P"));
  const auto pc = simulate(q);
  auto pkg_total = [](const SimOutput& o) {
    std::vector<EnergySample> pkg;
    for (const auto& s : o.energy_trace)
      if (s.domain == EnergyDomain::Pkg) pkg.push_back(s);
    return total_energy(pkg, kDefaultMaxRangeUj).delta.joules;
  };
  CHECK(pkg_total(e) < pkg_total(pc));
  for (std::size_t i = 2; i < e.energy_trace.size(); ++i)
    CHECK(e.energy_trace[i].timestamp_ns >= e.energy_trace[i - 2].timestamp_ns);
}

TEST_CASE("parameter validation") {
  SimParams p;
  p.live_fraction = 1.5;
  CHECK_THROWS_AS(simulate(p), Error);
  p = SimParams{};
  p.tick_ms = 0;
  CHECK_THROWS_AS(simulate(p), Error);
}

}  // TEST_SUITE
