#include <doctest.h>

#include <cmath>
#include <random>

#include "ampgc/bench.hpp"
#include "ampgc/error.hpp"
#include "ampgc/simgc.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace ampgc;
using namespace ampgc::bench;

namespace {

// Replays canned stdout with a fixed exit status.
class ScriptedProcess final : public TargetProcess {
 public:
  ScriptedProcess(std::vector<std::string> lines, int status) : lines_(std::move(lines)), status_(status) {}
  long pid() const override { return 4242; }
  std::optional<std::string> next_line() override {
    if (i_ >= lines_.size()) return std::nullopt;
    return lines_[i_++];
  }
  int wait() override { return status_; }

 private:
  std::vector<std::string> lines_;
  std::size_t i_ = 0;
  int status_;
};

// Runs the simulator in-process, so tests need no child processes.
class InProcessLauncher final : public Launcher {
 public:
  std::unique_ptr<TargetProcess> launch(const std::vector<std::string>& argv) override {
    sim::SimParams p;
    p.run_seconds = 1;
    for (std::size_t i = 0; i + 1 < argv.size(); i += 2) {
      if (argv[i] == "--heap-mb") p.heap_mb = std::stod(argv[i + 1]);
      if (argv[i] == "--iterations") p.iterations = std::stoi(argv[i + 1]);
      if (argv[i] == "--seed") p.seed = std::stoull(argv[i + 1]);
    }
    last_argv = argv;
    const auto out = sim::simulate(p);
    return std::make_unique<ScriptedProcess>(out.stdout_lines, out.out_of_memory ? 1 : 0);
  }
  std::vector<std::string> last_argv;
};

class CannedLauncher final : public Launcher {
 public:
  CannedLauncher(std::vector<std::string> lines, int status) : lines_(std::move(lines)), status_(status) {}
  std::unique_ptr<TargetProcess> launch(const std::vector<std::string>&) override {
    return std::make_unique<ScriptedProcess>(lines_, status_);
  }

 private:
  std::vector<std::string> lines_;
  int status_;
};

RunPlan sim_plan(int invocations, int iterations) {
  RunPlan plan;
  plan.benchmark = "sim";
  plan.config = parse_config_name("8E");
  plan.target = {"--heap-mb", "{heap_mb}", "--iterations", "{iterations}", "--seed", "{seed}"};
  plan.invocations = invocations;
  plan.iterations = iterations;
  plan.measured_tail = std::min(5, iterations);
  plan.heap_mb = 128;
  return plan;
}

RunPlan cli_plan(int invocations, int iterations) {
  RunPlan plan = sim_plan(invocations, iterations);
  plan.target = {testing::cli_path(), "simulate",   "--heap-mb",      "{heap_mb}",      "--iterations",
                 "{iterations}",      "--seed",     "{seed}",         "--placement",    "{placement}",
                 "--energy-trace",    "{energy_trace}", "--run-seconds", "1"};
  return plan;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("steady-state detection") {
  const std::vector<double> flat{100, 100, 100, 100, 100};
  CHECK(detect_steady(flat, 5, 0.05) == std::optional<std::size_t>{4});

  std::vector<double> alt;
  for (int i = 0; i < 20; ++i) alt.push_back(i % 2 ? 50 : 100);
  CHECK_FALSE(detect_steady(alt, 5, 0.05).has_value());
  CHECK(oracle::steady_scan(alt, 5, 0.05) == std::nullopt);

  const std::vector<double> warm{200, 150, 110, 101, 100, 100, 100, 100};
  CHECK(detect_steady(warm, 5, 0.05) == oracle::steady_scan(warm, 5, 0.05));
  CHECK(detect_steady(warm, 5, 0.05).has_value());

  CHECK_FALSE(detect_steady(std::vector<double>{100, 100}, 5, 0.05).has_value());
  CHECK_THROWS_AS(detect_steady(flat, 1, 0.05), Error);

  std::mt19937_64 rng(1);
  std::lognormal_distribution<double> ln(4.6, 0.06);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(5 + rng() % 20);
    for (auto& x : s) x = ln(rng);
    CHECK(detect_steady(s, 5, 0.05) == oracle::steady_scan(s, 5, 0.05));
  }
}

TEST_CASE("target expansion") {
  RunPlan plan;
  plan.config = parse_config_name("6E");
  plan.heap_mb = 50.5;
  plan.seed = 10;
  plan.target = {"java", "-Xmx{heap_mb}m", "--p={placement}", "{iterations}", "{seed}", "{invocation}", "{energy_trace}"};
  const auto argv = expand_target(plan, 3, "/tmp/e.csv");
  CHECK(argv == std::vector<std::string>{"java", "-Xmx50.5m", "--p=6E", "20", "13", "3", "/tmp/e.csv"});
}

TEST_CASE("plan validation") {
  auto plan = sim_plan(1, 5);
  plan.measured_tail = 6;
  CHECK_THROWS_AS(plan.validate(), Error);
  plan = sim_plan(0, 5);
  CHECK_THROWS_AS(plan.validate(), Error);
  plan = sim_plan(1, 5);
  plan.target.clear();
  CHECK_THROWS_AS(plan.validate(), Error);
}

TEST_CASE("flushing") {
  CHECK(ThrashFlusher::buffer_bytes_for(i9_12900k_fixture()) >= 60u * 1024 * 1024);
  ThrashFlusher small(4096);
  small.flush();
  CHECK(small.method() == "buffer_thrash");

  InProcessLauncher launcher;
  MockFlusher flusher;
  Environment env;
  env.launcher = &launcher;
  env.flusher = &flusher;
  const auto topo = i9_12900k_fixture();
  run_experiment(sim_plan(2, 6), topo, env);
  CHECK(flusher.calls() == 2 * 5);

  MockFlusher off;
  env.flusher = &off;
  auto plan = sim_plan(2, 6);
  plan.flush_caches = false;
  const auto s = run_experiment(plan, topo, env);
  CHECK(off.calls() == 0);
  CHECK(s.flush_method == "none");
}

TEST_CASE("run series shape") {
  InProcessLauncher launcher;
  Environment env;
  env.launcher = &launcher;
  env.thread_backend = [] {
    return std::make_unique<MockThreadBackend>(simulated_jvm_threads(8), std::chrono::milliseconds(10));
  };
  const auto s = run_experiment(sim_plan(10, 20), i9_12900k_fixture(), env);
  REQUIRE(s.invocations.size() == 10);
  CHECK(s.measured_values("exec_ms").size() == 10 * 5);
  CHECK(s.all_clean());
  CHECK(s.pin_records.size() == 10 * 13);
  for (const auto& inv : s.invocations) {
    CHECK(inv.iterations.size() == 20);
    CHECK(inv.iterations.front().index == 1);
    CHECK(inv.measured(5).front().index == 16);
  }
  CHECK(launcher.last_argv[5] == "10");  // seed + invocation
  const auto& it = s.invocations[0].iterations.back();
  for (const auto& m : metric_names(s.plan)) CHECK_NOTHROW(metric_value(it, m));
  CHECK(metric_value(it, "exec_ms").has_value());
  CHECK(metric_value(it, "gc_cycles").has_value());
  CHECK_FALSE(metric_value(it, "energy_pkg_j").has_value());
  CHECK_THROWS_AS(metric_value(it, "bogus"), Error);
}

TEST_CASE("identical seeds give identical series") {
  InProcessLauncher launcher;
  Environment env;
  env.launcher = &launcher;
  const auto a = run_experiment(sim_plan(3, 6), i9_12900k_fixture(), env);
  const auto b = run_experiment(sim_plan(3, 6), i9_12900k_fixture(), env);
  CHECK(series_json(a) == series_json(b));
}

TEST_CASE("failures are attributed to their invocation") {
  Environment env;
  const auto topo = i9_12900k_fixture();

  SUBCASE("out of memory") {
    InProcessLauncher launcher;
    env.launcher = &launcher;
    auto plan = sim_plan(1, 5);
    plan.heap_mb = 30;
    const auto s = run_experiment(plan, topo, env);
    REQUIRE(s.invocations.size() == 1);
    CHECK(s.invocations[0].failed);
    CHECK_FALSE(s.invocations[0].clean);
    CHECK_FALSE(is_clean_run(s.invocations[0].stalls));
    CHECK_FALSE(s.all_clean());
  }
  SUBCASE("malformed protocol") {
    CannedLauncher launcher({"ITER 1 BEGIN", "GCCYCLE id=x", "ITER 1 END exec_ms=5"}, 0);
    env.launcher = &launcher;
    const auto s = run_experiment(sim_plan(1, 1), topo, env);
    CHECK(s.invocations[0].failed);
  }
  SUBCASE("short run") {
    CannedLauncher launcher({"ITER 1 BEGIN", "ITER 1 END exec_ms=5"}, 0);
    env.launcher = &launcher;
    const auto s = run_experiment(sim_plan(1, 3), topo, env);
    CHECK(s.invocations[0].failed);
    CHECK(s.measured_values("exec_ms").empty());
  }
  SUBCASE("permission denied while pinning") {
    InProcessLauncher launcher;
    env.launcher = &launcher;
    env.thread_backend = [] {
      auto b = std::make_unique<MockThreadBackend>(simulated_jvm_threads(4), std::chrono::milliseconds(10));
      b->deny_permission(true);
      return b;
    };
    try {
      run_experiment(sim_plan(1, 2), topo, env);
      FAIL("expected a permission error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kPermission);
    }
  }
}

TEST_CASE("collector assigns live energy per iteration") {
  InvocationCollector c(0, {EnergyDomain::Pkg}, 1000);
  std::uint64_t counter = 900;
  std::int64_t t = 0;
  auto probe = [&] {
    std::map<EnergyDomain, EnergySample> m;
    m[EnergyDomain::Pkg] = EnergySample{EnergyDomain::Pkg, t, counter};
    return m;
  };
  CHECK_FALSE(c.feed("ITER 1 BEGIN", probe));
  counter = 100;  // wrapped
  t = 1'000'000;
  CHECK(c.feed("ITER 1 END exec_ms=1", probe));
  const auto r = c.finish(0, 5, 0.05, 64);
  REQUIRE(r.iterations.size() == 1);
  CHECK(r.iterations[0].energy_j.at(EnergyDomain::Pkg) == doctest::Approx(200e-6));
  CHECK(r.clean);
}

TEST_CASE("trace energy from the real CLI target") {
  testing::TempDir tmp;
  PosixLauncher launcher;
  Environment env;
  env.launcher = &launcher;
  env.energy_source = EnergySource::Trace;
  env.scratch_dir = tmp.path();
  const auto s = run_experiment(cli_plan(2, 6), i9_12900k_fixture(), env);
  REQUIRE(s.invocations.size() == 2);
  CHECK(s.all_clean());
  const auto e = s.measured_values("energy_pkg_j");
  CHECK(e.size() == 10);
  for (double v : e) CHECK(v > 0);
  for (const auto& w : s.warnings) CHECK_MESSAGE(w.find("energy trace") == std::string::npos, w);
}

TEST_CASE("launch failures") {
  PosixLauncher launcher;
  try {
    launcher.launch({"/nonexistent/program"});
    FAIL("expected a target error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTarget);
  }
  auto p = launcher.launch({"/bin/sh", "-c", "echo hi; exit 3"});
  CHECK(p->next_line() == std::optional<std::string>{"hi"});
  CHECK_FALSE(p->next_line().has_value());
  CHECK(p->wait() == 3);
}

TEST_CASE("persistence round-trips") {
  InProcessLauncher launcher;
  Environment env;
  env.launcher = &launcher;
  env.thread_backend = [] {
    return std::make_unique<MockThreadBackend>(simulated_jvm_threads(8), std::chrono::milliseconds(10));
  };
  const auto s = run_experiment(sim_plan(2, 6), i9_12900k_fixture(), env);
  testing::TempDir tmp;
  save_series(s, tmp.path());
  CHECK(testing::fs::exists(tmp / "series.json"));
  CHECK(testing::fs::exists(tmp / "invocation_0.json"));
  CHECK(testing::fs::exists(tmp / "measured.csv"));
  const auto back = load_series(tmp.path());
  CHECK(series_json(back) == series_json(s));
  CHECK(back.measured_values("exec_ms") == s.measured_values("exec_ms"));
  CHECK(series_json(load_series(tmp / "series.json")) == series_json(s));
  CHECK_THROWS_AS(load_series(tmp / "missing"), Error);
  CHECK_THROWS_AS(series_from_json("{\"meta\": {}}"), Error);
}

TEST_CASE("heap search") {
  SUBCASE("threshold at 50 MB") {
    const auto r = heap_search([](double heap, int) { return heap >= 50; });
    CHECK(r.grid_index == 12);
    CHECK(r.heap_mb == doctest::Approx(16 * std::pow(1.1, 12)));
    CHECK(r.heap_mb == doctest::Approx(50.21).epsilon(1e-3));
    CHECK(heap_grid_point(16, 1.1, 11) < 50);
  }
  SUBCASE("clean at base") {
    const auto r = heap_search([](double, int) { return true; });
    CHECK(r.heap_mb == 16);
    CHECK(r.probes.size() == 5);
  }
  SUBCASE("one unclean run abandons the size") {
    const auto r = heap_search([](double heap, int run) { return heap > 20 || run < 3; });
    CHECK(r.heap_mb > 20);
  }
  SUBCASE("never clean") {
    try {
      heap_search([](double, int) { return false; }, 16, 1.1, 5, 1024);
      FAIL("expected exhaustion");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNoHeap);
    }
  }
  SUBCASE("against the simulator") {
    sim::SimParams base;
    base.alloc_rate_mb_s = 60;
    base.resident_mb = 8;
    base.min_heap_mb = 50;
    base.run_seconds = 1;
    const auto r = heap_search([&](double heap, int run) {
      auto p = base;
      p.heap_mb = heap;
      p.seed = 1 + run;
      return sim::simulate(p).clean;
    });
    CHECK(r.heap_mb == doctest::Approx(16 * std::pow(1.1, 12)));
  }
}

}  // TEST_SUITE
