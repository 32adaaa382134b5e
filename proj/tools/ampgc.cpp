// ampgc: GC placement experiments on asymmetric multicore CPUs.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ampgc/bench.hpp"
#include "ampgc/config.hpp"
#include "ampgc/error.hpp"
#include "ampgc/rapl.hpp"
#include "ampgc/report.hpp"
#include "ampgc/simgc.hpp"
#include "ampgc/stats.hpp"
#include "ampgc/topology.hpp"

namespace fs = std::filesystem;
using namespace ampgc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPermission = 3;
constexpr int kExitTarget = 4;
constexpr int kExitNoHeap = 5;

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kPermission: return kExitPermission;
    case ErrorKind::kTarget: return kExitTarget;
    case ErrorKind::kNoHeap: return kExitNoHeap;
    default: return kExitConfig;
  }
}

CoreTopology topology_from(const std::string& source) {
  if (source == "detect") return detect_topology();
  if (source == "i9-12900k") return i9_12900k_fixture();
  return load_topology_fixture(source);
}

ExperimentConfig load_config(const std::string& path) {
  auto cfg = ExperimentConfig::load(path);
  if (const char* b = std::getenv("AMPGC_BACKEND"); b != nullptr && *b != '\0') cfg.apply_backend_override(b);
  return cfg;
}

// Backends live here so the Environment can point at them.
struct Backends {
  bench::PosixLauncher launcher;
  std::unique_ptr<EnergyBackend> energy;
  std::unique_ptr<bench::CacheFlusher> flusher;
  fs::path scratch;
  bench::Environment env;

  Backends(const ExperimentConfig& cfg, const CoreTopology& topo) {
    env.launcher = &launcher;
    env.rules = cfg.rules;
    if (cfg.pin_backend == "os") {
      env.thread_backend = [] { return std::make_unique<OsThreadBackend>(); };
    } else {
      const int workers = hwt_count(cfg.plan.config, topo);
      env.thread_backend = [workers] {
        return std::make_unique<MockThreadBackend>(simulated_jvm_threads(workers), std::chrono::milliseconds(10));
      };
    }
    if (cfg.rapl_backend == "powercap" || cfg.rapl_backend == "msr") {
      if (cfg.rapl_backend == "powercap") energy = std::make_unique<PowercapBackend>();
      else energy = std::make_unique<MsrBackend>();
      if (!energy->available(cfg.plan.domains.front()))
        throw Error(ErrorKind::kPermission,
                    fmt::format("RAPL {} counters are not readable; check that the intel_rapl driver is loaded and "
                                "the energy files are readable (or set rapl.backend = none)",
                                cfg.rapl_backend));
      env.energy_source = bench::EnergySource::Live;
      env.energy = energy.get();
    } else if (cfg.rapl_backend == "trace") {
      env.energy_source = bench::EnergySource::Trace;
      scratch = fs::temp_directory_path() / fmt::format("ampgc-{}", ::getpid());
      env.scratch_dir = scratch;
    }
    if (cfg.flush_backend == "thrash") flusher = std::make_unique<bench::ThrashFlusher>(bench::ThrashFlusher::buffer_bytes_for(topo));
    else flusher = std::make_unique<bench::MockFlusher>();
    env.flusher = flusher.get();
  }

  ~Backends() {
    if (!scratch.empty()) {
      std::error_code ec;
      fs::remove_all(scratch, ec);
    }
  }
};

void print_topology(const CoreTopology& topo) {
  int p = 0, e = 0;
  for (const auto& c : topo.cores()) (c.type == CoreType::P ? p : e)++;
  fmt::print("# {} p-cores, {} e-cores, {} logical cpus, L3 {} KB\n", p, e, topo.logical_cpu_count(), topo.l3_kb());
  fmt::print("{}", format_topology_fixture(topo));
}

// -- simulate ---------------------------------------------------------------

struct SimFlags {
  sim::SimParams p;
  std::string placement = "4P";
  std::string energy_trace;
  std::optional<double> speed;
  std::optional<int> workers;
};

void add_sim_flags(CLI::App* cmd, SimFlags& f) {
  cmd->add_option("--heap-mb", f.p.heap_mb, "Heap size in MB")->required();
  cmd->add_option("--seed", f.p.seed, "PRNG seed");
  cmd->add_option("--iterations", f.p.iterations, "Iterations announced with ITER markers");
  cmd->add_option("--placement", f.placement, "GC placement, e.g. 8E or 4P");
  cmd->add_option("--energy-trace", f.energy_trace, "Write the RAPL fixture trace to this file");
  cmd->add_option("--min-heap-mb", f.p.min_heap_mb, "Footprint floor; smaller heaps fail at start");
  cmd->add_option("--alloc-rate", f.p.alloc_rate_mb_s, "Mean allocation rate in MB/s");
  cmd->add_option("--burst-factor", f.p.burst_factor, "Rate multiplier on burst ticks");
  cmd->add_option("--burst-prob", f.p.burst_prob, "Per-tick burst probability");
  cmd->add_option("--live-fraction", f.p.live_fraction, "Share of transient data surviving a cycle");
  cmd->add_option("--resident-mb", f.p.resident_mb, "Long-lived live data in MB");
  cmd->add_option("--run-seconds", f.p.run_seconds, "Mutator work over all iterations, in seconds");
  cmd->add_option("--tick-ms", f.p.tick_ms, "Simulation tick");
  cmd->add_option("--speed", f.speed, "GC core speed relative to a p-core (overrides the placement)");
  cmd->add_option("--workers", f.workers, "Fixed GC worker count (disables adaptation)");
  cmd->add_option("--unit-cost", f.p.unit_cost_ms_per_mb, "True GC cost in ms per MB for one worker");
  cmd->add_option("--headroom", f.p.headroom, "Trigger headroom factor");
  cmd->add_option("--phase-penalty-ms", f.p.phase_penalty_ms, "Latency spike at each phase change");
}

int cmd_simulate(SimFlags& f) {
  auto p = sim::with_placement(f.p, parse_config_name(f.placement));
  if (f.speed) p.gc_core_speed = *f.speed;
  if (f.workers) p.fixed_workers = *f.workers;
  const auto out = sim::simulate(p);
  std::string text;
  for (const auto& l : out.stdout_lines) {
    text += l;
    text += '\n';
  }
  std::fwrite(text.data(), 1, text.size(), stdout);
  std::fflush(stdout);
  if (!f.energy_trace.empty()) {
    std::ofstream t(f.energy_trace, std::ios::binary | std::ios::trunc);
    if (!t) throw Error(ErrorKind::kConfig, fmt::format("cannot write energy trace '{}'", f.energy_trace));
    t << out.energy_csv(p.energy_max_range_uj);
  }
  return out.out_of_memory ? 1 : kExitOk;
}

// -- run / heapsize ---------------------------------------------------------

int cmd_run(const std::string& config_path, const std::string& placement, const std::string& out_dir) {
  auto cfg = load_config(config_path);
  if (!placement.empty()) cfg.plan.config = parse_config_name(placement, cfg.plan.config.mutator_pcore_count);
  const auto topo = topology_from(cfg.topology_source);
  cfg.check_realizable(topo);
  Backends b(cfg, topo);
  const auto series = bench::run_experiment(cfg.plan, topo, b.env);
  const fs::path dir = out_dir.empty() ? cfg.output_dir / cfg.plan.benchmark / render(cfg.plan.config) : fs::path(out_dir);
  bench::save_series(series, dir);
  int failed = 0;
  for (const auto& inv : series.invocations) failed += inv.failed ? 1 : 0;
  for (const auto& w : series.warnings) spdlog::warn("{}", w);
  fmt::print("series: {}\n", dir.string());
  fmt::print("invocations: {} ({} failed), clean: {}\n", series.invocations.size(), failed,
             series.all_clean() ? "yes" : "no");
  for (const auto& m : {"exec_ms", "energy_pkg_j"}) {
    const auto v = series.measured_values(m);
    if (v.size() >= 2) fmt::print("{}: mean {} rsd {:.2f}%\n", m, stats::mean(v), stats::rsd(v));
  }
  return failed > 0 ? kExitTarget : kExitOk;
}

int cmd_heapsize(const std::string& config_path, const std::string& placement) {
  auto cfg = load_config(config_path);
  if (!placement.empty()) cfg.plan.config = parse_config_name(placement, cfg.plan.config.mutator_pcore_count);
  const auto topo = topology_from(cfg.topology_source);
  cfg.check_realizable(topo);
  Backends b(cfg, topo);
  auto probe = [&](double heap, int run) {
    auto plan = cfg.plan;
    plan.heap_mb = heap;
    plan.invocations = 1;
    plan.flush_caches = false;
    plan.seed = cfg.plan.seed + static_cast<std::uint64_t>(run);
    const auto s = bench::run_experiment(plan, topo, b.env);
    spdlog::debug("heap {} run {}: {}", heap, run, s.all_clean() ? "clean" : "unclean");
    return s.all_clean();
  };
  const auto r = bench::heap_search(probe, cfg.heap_base_mb, cfg.heap_growth, cfg.heap_required_clean, cfg.heap_cap_mb);
  fmt::print("minimal_heap_mb={}\n", r.heap_mb);
  fmt::print("grid_index={}\n", r.grid_index);
  fmt::print("{} needs {:.2f} MB ({} probe runs)\n", render(cfg.plan.config), r.heap_mb, r.probes.size());
  return kExitOk;
}

// -- analysis ---------------------------------------------------------------

int cmd_compare(const std::string& a, const std::string& b, const std::string& metric, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw Error(ErrorKind::kConfig, "alpha must lie in (0, 1)");
  const auto sa = bench::load_series(a);
  const auto sb = bench::load_series(b);
  const auto va = sa.measured_values(metric);
  const auto vb = sb.measured_values(metric);
  if (va.size() < 2 || vb.size() < 2)
    throw Error(ErrorKind::kConfig, fmt::format("need at least two measured values of '{}' on each side", metric));
  const auto r = stats::compare(va, vb, alpha);
  const auto name = render(ComparisonName{sa.plan.config, sb.plan.config});
  fmt::print("{:<10} {:<8} {:<10} {:<24} {}\n", "Comparison", "Method", "P-value", "Confidence interval",
             "Improvement");
  const auto ci = fmt::format("({:.4g}, {:.4g})", r.ci_low, r.ci_high);
  fmt::print("{:<10} {:<8} {:<10.6g} {:<24} {}\n", name, stats::to_string(r.test.method), r.test.p_value, ci,
             stats::render_improvement(r.improvement, r.half_width));
  if (r.test.warning) spdlog::warn("{}", *r.test.warning);
  fmt::print("significant at alpha={}: {}\n", alpha, r.significant ? "yes" : "no");
  return kExitOk;
}

int cmd_corr(const std::string& dir, const std::string& csv_out) {
  const auto series = report::load_series_dir(dir);
  std::vector<std::pair<std::string, std::vector<double>>> inputs;
  for (const auto& [name, metric] : report::correlation_metrics()) inputs.emplace_back(name, std::vector<double>{});
  for (const auto& s : series) {
    for (const auto& inv : s.invocations) {
      if (inv.failed) continue;
      std::vector<double> row;
      for (const auto& [name, metric] : report::correlation_metrics()) {
        std::vector<double> v;
        for (const auto& it : inv.measured(s.plan.measured_tail))
          if (auto x = bench::metric_value(it, metric)) v.push_back(*x);
        if (v.empty()) break;
        row.push_back(stats::mean(v));
      }
      if (row.size() != inputs.size()) continue;
      for (std::size_t i = 0; i < row.size(); ++i) inputs[i].second.push_back(row[i]);
    }
  }
  const auto m = report::correlation_matrix(inputs);
  fmt::print("{:<20}", "");
  for (const auto& n : m.names) fmt::print(" {:>8.8}", n);
  fmt::print("\n");
  auto mark = [](stats::CorrelationClass c) {
    return c == stats::CorrelationClass::High ? "**" : c == stats::CorrelationClass::Moderate ? "* " : "  ";
  };
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    fmt::print("{:<20}", m.names[i]);
    for (std::size_t j = 0; j < m.names.size(); ++j) fmt::print(" {:>6.2f}{}", m.r[i][j], mark(m.cls[i][j]));
    fmt::print("\n");
  }
  fmt::print("** high [0.8, 1]   * moderate [0.6, 0.8)\n");
  if (!m.excluded.empty()) {
    std::string ex;
    for (const auto& e : m.excluded) ex += " " + e;
    fmt::print("constant, excluded:{}\n", ex);
  }
  if (!csv_out.empty()) {
    std::ofstream f(csv_out, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::kConfig, fmt::format("cannot write '{}'", csv_out));
    f << report::to_csv(report::correlation_csv_table(m));
  }
  return kExitOk;
}

int cmd_report(const std::string& dir, const std::string& out, double alpha) {
  const auto series = report::load_series_dir(dir);
  const auto written = report::write_report(series, out, alpha);
  for (const auto& w : written) fmt::print("{}\n", (fs::path(out) / (w + ".csv")).string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ampgc"));
  spdlog::set_pattern("ampgc: %l: %v");

  CLI::App app{"GC placement experiments on asymmetric multicore CPUs"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string fixture;
  auto* topo = app.add_subcommand("topo", "Print the detected or fixture topology");
  topo->add_option("--fixture", fixture, "Topology fixture file, or i9-12900k");

  std::string config, placement, out, a, b, metric = "energy_pkg_j", series_dir, csv_out;
  double alpha = 0.05;

  auto* run = app.add_subcommand("run", "Run an experiment and persist the series");
  run->add_option("--config", config, "Experiment config file")->required();
  run->add_option("--placement", placement, "GC placement, e.g. 8E");
  run->add_option("--out", out, "Output directory (default <output.dir>/<benchmark>/<placement>)");

  auto* heap = app.add_subcommand("heapsize", "Search the smallest stall-free heap");
  heap->add_option("--config", config, "Experiment config file")->required();
  heap->add_option("--placement", placement, "GC placement, e.g. 8E");

  auto* cmp = app.add_subcommand("compare", "Compare two series (candidate --a against baseline --b)");
  cmp->add_option("--a", a, "Candidate series directory")->required();
  cmp->add_option("--b", b, "Baseline series directory")->required();
  cmp->add_option("--metric", metric, "Metric name");
  cmp->add_option("--alpha", alpha, "Significance level");

  auto* corr = app.add_subcommand("corr", "Pearson correlation matrix over saved series");
  corr->add_option("--series", series_dir, "Directory holding series")->required();
  corr->add_option("--csv", csv_out, "Also write the matrix as CSV");

  SimFlags sim_flags;
  auto* simulate = app.add_subcommand("simulate", "Run the GC simulator as a benchmark target");
  add_sim_flags(simulate, sim_flags);

  auto* rep = app.add_subcommand("report", "Write all tables as CSV and JSON");
  rep->add_option("--series", series_dir, "Directory holding series")->required();
  rep->add_option("--out", out, "Output directory")->required();
  rep->add_option("--alpha", alpha, "Significance level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*topo) {
      print_topology(fixture.empty() ? detect_topology() : topology_from(fixture));
      return kExitOk;
    }
    if (*run) return cmd_run(config, placement, out);
    if (*heap) return cmd_heapsize(config, placement);
    if (*cmp) return cmd_compare(a, b, metric, alpha);
    if (*corr) return cmd_corr(series_dir, csv_out);
    if (*simulate) return cmd_simulate(sim_flags);
    if (*rep) return cmd_report(series_dir, out, alpha);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return kExitConfig;
}
