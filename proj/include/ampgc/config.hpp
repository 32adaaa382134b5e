#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ampgc/bench.hpp"
#include "ampgc/pinctl.hpp"
#include "ampgc/topology.hpp"

namespace ampgc {

/// Experiment configuration read from a flat `key = value` file with
/// dotted keys. Defaults follow the measurement protocol: 10 invocations,
/// a tail of 5, CV 0.05, heap search from 16 MB in 10% steps, alpha 0.05.
struct ExperimentConfig {
  std::string topology_source = "detect";  // detect | i9-12900k | <fixture path>
  std::vector<ComparisonName> comparisons;
  bench::RunPlan plan;
  std::vector<RoleRule> rules = default_role_rules();
  std::string pin_backend = "os";         // os | mock
  std::string rapl_backend = "powercap";  // powercap | msr | trace | none
  std::string flush_backend = "thrash";   // thrash | mock
  double alpha = 0.05;
  std::filesystem::path output_dir = "results";
  double heap_base_mb = 16;
  double heap_growth = 1.10;
  int heap_required_clean = 5;
  double heap_cap_mb = bench::kHeapCapMb;

  /// Throws Error(kConfig) on unknown keys, bad values or violated invariants.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Applies AMPGC_BACKEND: `os`, `mock` or `fixture`.
  void apply_backend_override(std::string_view backend);

  void validate() const;
  /// Checks that every placement named by the plan and the comparisons can
  /// be built on `topo`.
  void check_realizable(const CoreTopology& topo) const;
};

/// Whitespace-separated words; double quotes group words containing spaces.
std::vector<std::string> split_command(std::string_view text);

}  // namespace ampgc
