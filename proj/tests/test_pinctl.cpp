#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <thread>

#include <unistd.h>

#include "ampgc/error.hpp"
#include "ampgc/pinctl.hpp"

using namespace ampgc;
using namespace std::chrono_literals;

namespace {

AffinityPlan plan_8e() { return build_affinity_plan(parse_config_name("8E"), i9_12900k_fixture()); }

}  // namespace

TEST_SUITE("pinctl") {

TEST_CASE("default rules classify HotSpot thread names") {
  const auto rules = default_role_rules();
  CHECK(classify_thread("ZWorkerYoung#3", rules) == ThreadRole::GcWorker);
  CHECK(classify_thread("ZDriverMajor", rules) == ThreadRole::GcWorker);
  CHECK(classify_thread("main", rules) == ThreadRole::Unclassified);
  CHECK(classify_thread("VM Thread", rules) == ThreadRole::VmService);
  CHECK(classify_thread("C2 CompilerThread0", rules) == ThreadRole::JitCompiler);
  CHECK(classify_thread("anything", std::vector<RoleRule>{}) == ThreadRole::Unclassified);
}

TEST_CASE("highest priority wins whatever the rule order") {
  std::vector<RoleRule> rules{
      {"ZWorker*", ThreadRole::GcWorker, 10},
      {"ZWorkerOld*", ThreadRole::VmService, 20},
      {"*Old*", ThreadRole::JitCompiler, 5},
  };
  std::sort(rules.begin(), rules.end(), [](const RoleRule& a, const RoleRule& b) { return a.pattern < b.pattern; });
  do {
    CHECK(classify_thread("ZWorkerOld#0", rules) == ThreadRole::VmService);
  } while (std::next_permutation(rules.begin(), rules.end(),
                                 [](const RoleRule& a, const RoleRule& b) { return a.pattern < b.pattern; }));

  SUBCASE("equal priorities keep list order") {
    std::vector<RoleRule> tie{{"Z*", ThreadRole::GcWorker, 1}, {"*Old*", ThreadRole::VmService, 1}};
    CHECK(classify_thread("ZWorkerOld#0", tie) == ThreadRole::GcWorker);
    std::swap(tie[0], tie[1]);
    CHECK(classify_thread("ZWorkerOld#0", tie) == ThreadRole::VmService);
  }
}

TEST_CASE("glob patterns") {
  std::vector<RoleRule> rules{{"GC Thread#[0-3]", ThreadRole::GcWorker, 1}, {"C? *", ThreadRole::JitCompiler, 1}};
  CHECK(classify_thread("GC Thread#2", rules) == ThreadRole::GcWorker);
  CHECK(classify_thread("GC Thread#7", rules) == ThreadRole::Unclassified);
  CHECK(classify_thread("C1 CompilerThread0", rules) == ThreadRole::JitCompiler);
}

TEST_CASE("rule text parses") {
  const auto r = parse_role_rule("ZWorker*:gc_worker:100");
  CHECK(r.pattern == "ZWorker*");
  CHECK(r.role == ThreadRole::GcWorker);
  CHECK(r.priority == 100);
  CHECK_THROWS_AS(parse_role_rule("ZWorker*"), Error);
  CHECK_THROWS_AS(parse_role_rule("ZWorker*:gc_worker:high"), Error);
  CHECK_THROWS_AS(parse_role_rule("ZWorker*:janitor:1"), Error);
}

TEST_CASE("mock replay pins each thread with its role's CPUs") {
  MockThreadBackend backend({{1, "main", 0}, {2, "ZWorkerYoung#0", 0}, {3, "VM Thread", 0}}, 10ms);
  const auto plan = plan_8e();
  PinWatcher w(backend, 42, plan, default_role_rules());
  const auto recs = w.poll_once();
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].role == ThreadRole::Unclassified);
  CHECK(recs[1].role == ThreadRole::GcWorker);
  CHECK(recs[2].role == ThreadRole::VmService);
  for (const auto& r : recs) CHECK(r.cpus == plan.cpus_for(r.role));
  CHECK(backend.calls().size() == 3);
}

TEST_CASE("threads are pinned once") {
  MockThreadBackend backend({{1, "main", 0}, {2, "ZWorkerYoung#0", 1}}, 10ms);
  PinWatcher w(backend, 42, plan_8e(), default_role_rules());
  CHECK(w.poll_once().size() == 1);
  CHECK(w.poll_once().size() == 1);
  CHECK(w.poll_once().empty());
  CHECK(w.drain().size() == 2);
  CHECK(w.drain().empty());
  CHECK(backend.calls().size() == 2);
}

TEST_CASE("unpinned window is the time since the previous poll") {
  MockThreadBackend backend({{1, "main", 0}, {2, "ZWorkerYoung#0", 3}}, 10ms);
  PinWatcher w(backend, 42, plan_8e(), default_role_rules());
  const auto first = w.poll_once();
  w.poll_once();
  w.poll_once();
  const auto late = w.poll_once();
  REQUIRE(first.size() == 1);
  REQUIRE(late.size() == 1);
  CHECK(late[0].timestamp_ns == 30'000'000);
  CHECK(late[0].unpinned_window_ns == 10'000'000);
}

TEST_CASE("thread exiting before its pin yields no record") {
  MockThreadBackend backend({{1, "main", 0}, {2, "ZWorkerYoung#0", 0, true}}, 10ms);
  PinWatcher w(backend, 42, plan_8e(), default_role_rules());
  const auto recs = w.poll_once();
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].tid == 1);
}

TEST_CASE("a plan lacking a reachable role is rejected") {
  MockThreadBackend backend({}, 10ms);
  AffinityPlan partial({{ThreadRole::GcWorker, {16}}, {ThreadRole::Unclassified, {0}}});
  CHECK_THROWS_AS(PinWatcher(backend, 1, partial, default_role_rules()), Error);
  AffinityPlan empty_set({{ThreadRole::GcWorker, {}}, {ThreadRole::Unclassified, {0}}});
  CHECK_THROWS_AS(PinWatcher(backend, 1, empty_set, {{"Z*", ThreadRole::GcWorker, 1}}), Error);
}

TEST_CASE("permission denial surfaces as a permission error") {
  MockThreadBackend backend({{1, "main", 0}}, 10ms);
  backend.deny_permission(true);
  PinWatcher w(backend, 42, plan_8e(), default_role_rules());
  try {
    w.poll_once();
    FAIL("expected a permission error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kPermission);
  }
}

TEST_CASE("background watcher reports failures") {
  MockThreadBackend backend({{1, "main", 0}}, 1ms);
  backend.deny_permission(true);
  PinWatcher w(backend, 42, plan_8e(), default_role_rules(), 1ms);
  w.start();
  for (int i = 0; i < 500 && !w.failure(); ++i) std::this_thread::sleep_for(1ms);
  w.release();
  REQUIRE(w.failure().has_value());
  CHECK(w.failure()->kind() == ErrorKind::kPermission);
}

TEST_CASE("release semantics") {
  SUBCASE("after exit") {
    MockThreadBackend backend({{1, "main", 0}}, 1ms, 1);
    PinWatcher w(backend, 42, plan_8e(), default_role_rules());
    CHECK(w.poll_once().size() == 1);
    CHECK(w.poll_once().empty());
    CHECK(w.process_gone());
    CHECK_NOTHROW(w.release());
  }
  SUBCASE("mid-run stops new records, twice is harmless") {
    MockThreadBackend backend({{1, "main", 0}, {2, "ZWorkerYoung#0", 1}}, 1ms);
    PinWatcher w(backend, 42, plan_8e(), default_role_rules());
    CHECK(w.poll_once().size() == 1);
    w.release();
    CHECK(w.poll_once().empty());
    w.release();
    CHECK(backend.calls().size() == 1);
  }
  SUBCASE("background thread joins") {
    MockThreadBackend backend(simulated_jvm_threads(4), 1ms);
    PinWatcher w(backend, 42, plan_8e(), default_role_rules(), 1ms);
    w.start();
    for (int i = 0; i < 500 && backend.calls().size() < 9; ++i) std::this_thread::sleep_for(1ms);
    w.release();
    w.release();
    CHECK(w.drain().size() == 9);
  }
}

TEST_CASE("os backend lists the threads of this process") {
  // the calling thread is always present in the real /proc
  OsThreadBackend os;
  const auto threads = os.list_threads(::getpid());
  REQUIRE(threads.has_value());
  CHECK_FALSE(threads->empty());
  CHECK_FALSE(os.list_threads(999'999'999).has_value());
}

}  // TEST_SUITE
