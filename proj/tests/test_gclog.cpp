#include <doctest.h>

#include <sstream>

#include "ampgc/error.hpp"
#include "ampgc/gclog.hpp"
#include "ampgc/simgc.hpp"

using namespace ampgc;

namespace {

GcCycleRecord cycle(long id, CycleKind k, double start, double end, double mark, double reloc, int workers) {
  return GcCycleRecord{id, k, start, end, mark, reloc, workers, 10};
}

}  // namespace

TEST_SUITE("gclog") {

TEST_CASE("grammar instances") {
  GcLogParser p;
  CHECK(p.feed("GCCYCLE id=1 kind=minor start=100 end=250 mark=90 reloc=40 workers=2 heap_after=37.5"));
  CHECK(p.feed("STALL kind=allocation t=512"));
  CHECK(p.feed("RUNEND wall=1000 heap=64"));
  CHECK_FALSE(p.feed("ITER 1 BEGIN"));
  CHECK_FALSE(p.feed(""));
  const auto log = p.finish();
  REQUIRE(log.cycles.size() == 1);
  const auto& c = log.cycles[0];
  CHECK(c.kind == CycleKind::Minor);
  CHECK(c.duration_ms() == 150);
  CHECK(c.workers == 2);
  CHECK(c.heap_used_after_mb == 37.5);
  REQUIRE(log.stalls.size() == 1);
  CHECK(log.stalls[0] == StallEvent{StallKind::AllocationStall, 512});
  CHECK(log.run_end == RunEnd{1000, 64});
  CHECK(log.skipped_lines == 2);
}

TEST_CASE("malformed tagged lines report their line number") {
  GcLogParser p;
  p.feed("# comment");
  try {
    p.feed("GCCYCLE id=1 kind=sideways start=0 end=1 mark=0 reloc=0 workers=1 heap_after=1");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  GcLogParser q;
  CHECK_THROWS_AS(q.feed("GCCYCLE id=1 kind=minor start=0"), Error);
  CHECK_THROWS_AS(q.feed("STALL kind=allocation t=abc"), Error);
  CHECK_THROWS_AS(q.feed("GCCYCLE id=1 kind=minor start=10 end=5 mark=0 reloc=0 workers=1 heap_after=1"), Error);
}

TEST_CASE("cycles come back ordered by start") {
  std::istringstream in(
      "GCCYCLE id=2 kind=major start=300 end=400 mark=50 reloc=20 workers=4 heap_after=10\n"
      "GCCYCLE id=1 kind=minor start=100 end=200 mark=50 reloc=20 workers=2 heap_after=10\n");
  const auto log = parse_log(in);
  REQUIRE(log.cycles.size() == 2);
  CHECK(log.cycles[0].id == 1);
  CHECK(log.cycles[1].id == 2);
}

TEST_CASE("emit(parse(L)) = L on simulator logs") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    sim::SimParams p;
    p.heap_mb = 96;
    p.run_seconds = 1;
    p.seed = seed;
    const auto out = sim::simulate(p);
    REQUIRE_FALSE(out.gc_log.empty());
    const auto log = parse_log(out.gc_log);
    std::vector<std::string> emitted;
    std::size_t ci = 0, si = 0;
    for (const auto& line : out.gc_log) {
      if (line.rfind("GCCYCLE", 0) == 0) emitted.push_back(format_cycle(log.cycles.at(ci++)));
      else if (line.rfind("STALL", 0) == 0) emitted.push_back(format_stall(log.stalls.at(si++)));
      else if (line.rfind("RUNEND", 0) == 0) emitted.push_back(format_run_end(*log.run_end));
    }
    CHECK(emitted == out.gc_log);
    CHECK(log.cycles == out.cycles);
  }
}

TEST_CASE("derived metrics") {
  SUBCASE("three minor and one major") {
    std::vector<GcCycleRecord> r{cycle(1, CycleKind::Minor, 0, 10, 5, 1, 1), cycle(2, CycleKind::Minor, 20, 30, 5, 1, 1),
                                 cycle(3, CycleKind::Minor, 40, 50, 5, 1, 1), cycle(4, CycleKind::Major, 60, 90, 20, 5, 1)};
    const auto m = derive_metrics(r, {}, 1000, 64);
    CHECK(m.num_cycles == 4);
    CHECK(m.num_minor == 3);
    CHECK(m.num_major == 1);
    CHECK(m.gc_time_ms == 43);
    CHECK(m.avg_cycle_ms == doctest::Approx(15.0));
  }
  SUBCASE("activity") {
    std::vector<GcCycleRecord> r{cycle(1, CycleKind::Major, 0, 2000, 1500, 500, 2)};
    CHECK(derive_metrics(r, {}, 10000, 64).gc_activity == doctest::Approx(0.2));
  }
  SUBCASE("worker averages") {
    std::vector<GcCycleRecord> r{cycle(1, CycleKind::Minor, 0, 1, 0, 0, 2), cycle(2, CycleKind::Minor, 2, 3, 0, 0, 2),
                                 cycle(3, CycleKind::Minor, 4, 5, 0, 0, 4)};
    const auto m = derive_metrics(r, {}, 100, 100);
    // brute force: sum / count, then heap / average
    double sum = 0;
    for (const auto& c : r) sum += c.workers;
    CHECK(*m.avg_workers == doctest::Approx(sum / r.size()));
    CHECK(*m.avg_workers == doctest::Approx(8.0 / 3.0));
    CHECK(*m.heap_per_worker_mb == doctest::Approx(37.5));
  }
  SUBCASE("no cycles") {
    const auto m = derive_metrics({}, {}, 100, 100);
    CHECK_FALSE(m.avg_workers.has_value());
    CHECK_FALSE(m.heap_per_worker_mb.has_value());
    CHECK(m.gc_activity == 0);
  }
  SUBCASE("overlap warning") {
    std::vector<GcCycleRecord> r{cycle(1, CycleKind::Major, 0, 100, 80, 40, 1)};
    CHECK(derive_metrics(r, {}, 100, 64).warning.has_value());
  }
  CHECK_THROWS_AS(derive_metrics({}, {}, 0, 1), Error);
}

TEST_CASE("clean runs") {
  CHECK(is_clean_run({}));
  std::vector<StallEvent> alloc{{StallKind::AllocationStall, 512}};
  std::vector<StallEvent> oom{{StallKind::OutOfMemory, 90}};
  CHECK_FALSE(is_clean_run(alloc));
  CHECK_FALSE(is_clean_run(oom));
}

}  // TEST_SUITE
