#include <doctest.h>

#include <algorithm>

#include "ampgc/error.hpp"
#include "ampgc/topology.hpp"
#include "helpers.hpp"

using namespace ampgc;

namespace {

CoreTopology small_hybrid(int pcores, int ecores) {
  std::vector<Core> cores;
  int cpu = 0;
  for (int i = 0; i < pcores; ++i, cpu += 2) cores.push_back(Core{i, CoreType::P, {cpu, cpu + 1}, std::nullopt, 1280});
  for (int i = 0; i < ecores; ++i) cores.push_back(Core{pcores + i, CoreType::E, {cpu++}, i / 4, 2048});
  return CoreTopology(cores, 8192);
}

void write(const testing::fs::path& p, const std::string& text) {
  testing::fs::create_directories(p.parent_path());
  testing::spit(p, text + "\n");
}

}  // namespace

TEST_SUITE("topology") {

TEST_CASE("placement names parse with the default mutator reservation") {
  CHECK(parse_config_name("4E") == HardwareConfig{4, CoreType::E, 4});
  CHECK(parse_config_name("2P") == HardwareConfig{2, CoreType::P, 4});
  CHECK(render(parse_config_name("8E")) == "8E");
  CHECK_THROWS_AS(parse_config_name("0E"), Error);
  CHECK_THROWS_AS(parse_config_name("4X"), Error);
  CHECK_THROWS_AS(parse_config_name(""), Error);

  const auto c = parse_comparison_name("8E/2P");
  CHECK(c.numerator == parse_config_name("8E"));
  CHECK(c.denominator == parse_config_name("2P"));
  CHECK(render(c) == "8E/2P");
}

TEST_CASE("hardware thread counts on the modeled part") {
  const auto topo = i9_12900k_fixture();
  CHECK(hwt_count(parse_config_name("4P"), topo) == 8);
  CHECK(hwt_count(parse_config_name("8E"), topo) == 8);
  CHECK(hwt_count(parse_config_name("2P"), topo) == 4);
  CHECK(hwt_count(parse_config_name("4E"), topo) == 4);
  CHECK(hwt_count(parse_config_name("6E"), topo) == 6);
}

TEST_CASE("hwt ratios follow the placement table") {
  const auto topo = i9_12900k_fixture();
  auto cfg = [](const char* s) { return parse_config_name(s); };
  CHECK(hwt_ratio(cfg("2P"), cfg("4P"), topo) == Ratio{1, 2});
  CHECK(hwt_ratio(cfg("8E"), cfg("4P"), topo) == Ratio{1, 1});
  CHECK(hwt_ratio(cfg("6E"), cfg("4P"), topo) == Ratio{3, 4});

  auto order = [&](const char* s) { return render(table_order_ratio(parse_comparison_name(s), topo)); };
  CHECK(order("2P/4P") == "1:2");
  CHECK(order("4E/4P") == "2:1");
  CHECK(order("6E/4P") == "4:3");
  CHECK(order("8E/4P") == "1:1");
  CHECK(order("6E/2P") == "2:3");
  CHECK(order("8E/2P") == "1:2");
}

TEST_CASE("affinity plans keep GC and mutators apart") {
  const auto topo = i9_12900k_fixture();

  SUBCASE("8E") {
    const auto plan = build_affinity_plan(parse_config_name("8E"), topo);
    CHECK(plan.cpus_for(ThreadRole::GcWorker) == CpuSet{16, 17, 18, 19, 20, 21, 22, 23});
    CHECK(plan.cpus_for(ThreadRole::Mutator) == CpuSet{0, 1, 2, 3, 4, 5, 6, 7});
  }
  SUBCASE("2P") {
    const auto plan = build_affinity_plan(parse_config_name("2P"), topo);
    const auto& gc = plan.cpus_for(ThreadRole::GcWorker);
    CHECK(gc.size() == 4);
    CHECK(plan.cpus_for(ThreadRole::Mutator).size() == 8);
    for (int cpu : gc) CHECK(plan.cpus_for(ThreadRole::Mutator).count(cpu) == 0);
  }
  SUBCASE("every role has a set and only GC differs") {
    for (const char* name : {"2P", "4P", "4E", "6E", "8E"}) {
      const auto plan = build_affinity_plan(parse_config_name(name), topo);
      for (ThreadRole r : kAllRoles) {
        REQUIRE(plan.has(r));
        if (r != ThreadRole::GcWorker) CHECK(plan.cpus_for(r) == plan.cpus_for(ThreadRole::Mutator));
      }
    }
  }
  SUBCASE("e-cores fill one module before the next") {
    const auto plan = build_affinity_plan(parse_config_name("4E"), topo);
    CHECK(plan.cpus_for(ThreadRole::GcWorker) == CpuSet{16, 17, 18, 19});
  }
}

TEST_CASE("capacity checks") {
  const auto topo = small_hybrid(4, 4);
  CHECK_NOTHROW(build_affinity_plan(parse_config_name("4E"), topo));
  CHECK_NOTHROW(build_affinity_plan(parse_config_name("4E"), topo));
  CHECK_THROWS_AS(build_affinity_plan(parse_config_name("6E"), topo), Error);
  // every p-core already hosts mutators
  CHECK_THROWS_AS(build_affinity_plan(parse_config_name("2P"), topo), Error);
}

TEST_CASE("modeled part facts") {
  const auto topo = i9_12900k_fixture();
  CHECK(topo.logical_cpu_count() == 24);
  CHECK(topo.cores().size() == 16);
  CHECK(topo.l3_kb() == 30 * 1024);
  CHECK(topo.cores_of(CoreType::P).size() == 8);
  CHECK(topo.cores_of(CoreType::E).size() == 8);
  // one shared module L2 per four e-cores
  CHECK(gc_l2_kb(parse_config_name("4E"), topo) == 2048);
  CHECK(gc_l2_kb(parse_config_name("6E"), topo) == 4096);
  CHECK(gc_l2_kb(parse_config_name("2P"), topo) == 2560);
}

TEST_CASE("invalid topologies are rejected") {
  CHECK_THROWS_AS(CoreTopology({Core{0, CoreType::E, {0}, std::nullopt, 2048}}, 1024), Error);
  CHECK_THROWS_AS(CoreTopology({Core{0, CoreType::P, {0, 1}, std::nullopt, 1280},
                                Core{1, CoreType::P, {1, 2}, std::nullopt, 1280}},
                               1024),
                  Error);
}

TEST_CASE("fixture text round-trips") {
  const auto topo = i9_12900k_fixture();
  CHECK(parse_topology_fixture(format_topology_fixture(topo)) == topo);
  CHECK_THROWS_AS(parse_topology_fixture("cpu.0.core = x\n"), Error);
  CHECK_THROWS_AS(parse_topology_fixture("nonsense\n"), Error);
}

TEST_CASE("cpu lists") {
  CHECK(parse_cpu_list("0-3,8,10-11") == std::vector<int>{0, 1, 2, 3, 8, 10, 11});
  CHECK(parse_cpu_list("5") == std::vector<int>{5});
  CHECK_THROWS(parse_cpu_list("3-1"));
}

TEST_CASE("detection from a fake sysfs tree") {
  testing::TempDir tmp;
  const auto root = tmp.path();
  const auto cpu = root / "system" / "cpu";

  SUBCASE("homogeneous 4-core machine") {
    write(cpu / "online", "0-3");
    for (int i = 0; i < 4; ++i) {
      const auto d = cpu / ("cpu" + std::to_string(i));
      write(d / "topology" / "thread_siblings_list", std::to_string(i));
      write(d / "cache" / "index2" / "level", "2");
      write(d / "cache" / "index2" / "type", "Unified");
      write(d / "cache" / "index2" / "size", "512K");
      write(d / "cache" / "index3" / "level", "3");
      write(d / "cache" / "index3" / "type", "Unified");
      write(d / "cache" / "index3" / "size", "8M");
    }
    const auto topo = detect_topology(root);
    CHECK(topo.cores().size() == 4);
    for (const auto& c : topo.cores()) {
      CHECK(c.type == CoreType::P);
      CHECK_FALSE(c.module.has_value());
    }
    CHECK(topo.l3_kb() == 8192);
  }

  SUBCASE("hybrid part with SMT p-cores and a module") {
    write(cpu / "online", "0-5");
    write(root / "cpu_core" / "cpus", "0-1");
    write(root / "cpu_atom" / "cpus", "2-5");
    for (int i = 0; i < 6; ++i) {
      const auto d = cpu / ("cpu" + std::to_string(i));
      write(d / "topology" / "thread_siblings_list", i < 2 ? "0-1" : std::to_string(i));
      write(d / "cache" / "index2" / "level", "2");
      write(d / "cache" / "index2" / "size", i < 2 ? "1280K" : "2048K");
      write(d / "cache" / "index2" / "shared_cpu_list", i < 2 ? "0-1" : "2-5");
      write(d / "power" / "energy_perf_bias", "6");
    }
    const auto topo = detect_topology(root);
    REQUIRE(topo.cores().size() == 5);
    CHECK(topo.cores()[0].type == CoreType::P);
    CHECK(topo.cores()[0].hw_threads == std::vector<int>{0, 1});
    CHECK(topo.cores_of(CoreType::E).size() == 4);
    for (const Core* c : topo.cores_of(CoreType::E)) CHECK(c->module == 0);
    CHECK(topo.epb() == 6);
  }

  SUBCASE("missing tree") {
    CHECK_THROWS_AS(detect_topology(root / "nope"), Error);
    try {
      detect_topology(root / "nope");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kUnavailable);
    }
  }
}

}  // TEST_SUITE
