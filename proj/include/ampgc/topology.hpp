#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ampgc {

enum class CoreType { P, E };

char to_char(CoreType t);

/// Role of a thread inside the target process. Every thread gets exactly one.
enum class ThreadRole { GcWorker, Mutator, VmService, JitCompiler, Unclassified };

inline constexpr std::array<ThreadRole, 5> kAllRoles = {
    ThreadRole::GcWorker, ThreadRole::Mutator, ThreadRole::VmService, ThreadRole::JitCompiler,
    ThreadRole::Unclassified};

std::string_view to_string(ThreadRole role);
ThreadRole parse_thread_role(std::string_view text);

using CpuSet = std::set<int>;

struct Core {
  int id = 0;
  CoreType type = CoreType::P;
  std::vector<int> hw_threads;  // logical CPU ids
  std::optional<int> module;    // e-core module (L2 sharing group); set iff type == E
  int l2_kb = 0;                // for e-cores: the L2 of the whole module

  bool operator==(const Core&) const = default;
};

class CoreTopology {
 public:
  CoreTopology() = default;
  /// Validates invariants; throws Error(kConfig) on violation.
  CoreTopology(std::vector<Core> cores, int l3_kb, std::optional<int> epb = std::nullopt);

  const std::vector<Core>& cores() const { return cores_; }
  int l3_kb() const { return l3_kb_; }
  std::optional<int> epb() const { return epb_; }

  int logical_cpu_count() const;
  std::vector<const Core*> cores_of(CoreType t) const;
  bool has_cpu(int cpu) const;

  bool operator==(const CoreTopology&) const = default;

 private:
  std::vector<Core> cores_;
  int l3_kb_ = 0;
  std::optional<int> epb_;
};

/// GC placement: how many cores of which type run the collector, plus the
/// p-cores reserved for everything else.
struct HardwareConfig {
  int gc_core_count = 1;
  CoreType gc_core_type = CoreType::P;
  int mutator_pcore_count = 4;

  bool operator==(const HardwareConfig&) const = default;
};

/// "<count><P|E>", e.g. "8E".
std::string render(const HardwareConfig& config);
HardwareConfig parse_config_name(std::string_view name, int mutator_pcore_count = 4);

/// "<candidate>/<baseline>", e.g. "8E/2P". The config after the slash is the
/// normalization baseline.
struct ComparisonName {
  HardwareConfig numerator;
  HardwareConfig denominator;

  bool operator==(const ComparisonName&) const = default;
};

std::string render(const ComparisonName& name);
ComparisonName parse_comparison_name(std::string_view text, int mutator_pcore_count = 4);

struct Ratio {
  long first = 0;
  long second = 0;

  bool operator==(const Ratio&) const = default;
};

std::string render(const Ratio& r);

/// Hardware threads available to GC under `config` on `topo`.
int hwt_count(const HardwareConfig& config, const CoreTopology& topo);

/// hwt_count(a) : hwt_count(b), reduced by their gcd.
Ratio hwt_ratio(const HardwareConfig& a, const HardwareConfig& b, const CoreTopology& topo);

/// The HWT ratio as laid out in the placement table: the p-core config comes
/// first; when both sides are p-core configs the candidate comes first.
Ratio table_order_ratio(const ComparisonName& name, const CoreTopology& topo);

/// Total L2 reachable by the GC cores. Shared module L2 counts once.
int gc_l2_kb(const HardwareConfig& config, const CoreTopology& topo);

class AffinityPlan {
 public:
  AffinityPlan() = default;
  explicit AffinityPlan(std::map<ThreadRole, CpuSet> role_to_cpus);

  /// Throws Error(kConfig) if the role has no CPU set.
  const CpuSet& cpus_for(ThreadRole role) const;
  bool has(ThreadRole role) const;
  const std::map<ThreadRole, CpuSet>& roles() const { return role_to_cpus_; }

  bool operator==(const AffinityPlan&) const = default;

 private:
  std::map<ThreadRole, CpuSet> role_to_cpus_;
};

/// Selects GC cores and mutator p-cores and maps every role onto them.
/// E-cores are taken module by module, lowest module id first.
AffinityPlan build_affinity_plan(const HardwareConfig& config, const CoreTopology& topo);

/// The modeled Alder Lake desktop part: 8 p-cores (2 HWT each, 1.25 MB L2),
/// 8 e-cores in two 4-core modules (2 MB L2 per module), 30 MB L3.
CoreTopology i9_12900k_fixture();

/// Key/value fixture format (`cpu.<id>.core`, `core.<id>.type`, ...).
CoreTopology parse_topology_fixture(std::string_view text);
std::string format_topology_fixture(const CoreTopology& topo);
CoreTopology load_topology_fixture(const std::filesystem::path& path);

/// Reads `<root>/system/cpu/cpuN/...` plus the hybrid PMU cpu lists
/// (`<root>/cpu_core/cpus`, `<root>/cpu_atom/cpus`). Root defaults to
/// /sys/devices. Throws Error(kUnavailable) if the tree is unreadable.
CoreTopology detect_topology(const std::filesystem::path& sysfs_root = "/sys/devices");

/// Parses Linux cpu-list syntax ("0-3,8,10-11").
std::vector<int> parse_cpu_list(std::string_view text);

}  // namespace ampgc
