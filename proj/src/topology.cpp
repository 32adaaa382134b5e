#include "ampgc/topology.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/core.h>

#include "ampgc/error.hpp"
#include "text_util.hpp"

namespace fs = std::filesystem;

namespace ampgc {

namespace {

constexpr int kModuleCapacity = 4;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }

}  // namespace

char to_char(CoreType t) { return t == CoreType::P ? 'P' : 'E'; }

std::string_view to_string(ThreadRole role) {
  switch (role) {
    case ThreadRole::GcWorker: return "gc_worker";
    case ThreadRole::Mutator: return "mutator";
    case ThreadRole::VmService: return "vm_service";
    case ThreadRole::JitCompiler: return "jit_compiler";
    case ThreadRole::Unclassified: return "unclassified";
  }
  return "unclassified";
}

ThreadRole parse_thread_role(std::string_view text) {
  for (ThreadRole r : kAllRoles) {
    if (to_string(r) == text) return r;
  }
  config_error(fmt::format("unknown thread role '{}'", text));
}

// ---------------------------------------------------------------------------
// CoreTopology

CoreTopology::CoreTopology(std::vector<Core> cores, int l3_kb, std::optional<int> epb)
    : cores_(std::move(cores)), l3_kb_(l3_kb), epb_(epb) {
  if (epb_ && (*epb_ < 0 || *epb_ > 15)) config_error(fmt::format("EPB {} outside [0,15]", *epb_));
  std::set<int> seen_cpus;
  std::set<int> seen_cores;
  std::map<int, int> module_sizes;
  for (const Core& c : cores_) {
    if (c.id < 0) config_error("negative core id");
    if (!seen_cores.insert(c.id).second) config_error(fmt::format("duplicate core id {}", c.id));
    const auto n = c.hw_threads.size();
    if (c.type == CoreType::E) {
      if (n != 1) config_error(fmt::format("e-core {} must have exactly 1 hardware thread", c.id));
      if (!c.module) config_error(fmt::format("e-core {} has no module", c.id));
      if (++module_sizes[*c.module] > kModuleCapacity)
        config_error(fmt::format("module {} groups more than {} cores", *c.module, kModuleCapacity));
    } else {
      if (n < 1 || n > 2) config_error(fmt::format("p-core {} must have 1 or 2 hardware threads", c.id));
      if (c.module) config_error(fmt::format("p-core {} cannot belong to a module", c.id));
    }
    for (int cpu : c.hw_threads) {
      if (cpu < 0) config_error("negative cpu id");
      if (!seen_cpus.insert(cpu).second) config_error(fmt::format("cpu {} listed twice", cpu));
    }
  }
}

int CoreTopology::logical_cpu_count() const {
  int n = 0;
  for (const Core& c : cores_) n += static_cast<int>(c.hw_threads.size());
  return n;
}

std::vector<const Core*> CoreTopology::cores_of(CoreType t) const {
  std::vector<const Core*> out;
  for (const Core& c : cores_)
    if (c.type == t) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const Core* a, const Core* b) { return a->id < b->id; });
  return out;
}

bool CoreTopology::has_cpu(int cpu) const {
  return std::any_of(cores_.begin(), cores_.end(), [cpu](const Core& c) {
    return std::find(c.hw_threads.begin(), c.hw_threads.end(), cpu) != c.hw_threads.end();
  });
}

// ---------------------------------------------------------------------------
// Names

std::string render(const HardwareConfig& config) {
  return fmt::format("{}{}", config.gc_core_count, to_char(config.gc_core_type));
}

HardwareConfig parse_config_name(std::string_view name, int mutator_pcore_count) {
  std::string_view s = detail::trim(name);
  if (s.size() < 2) config_error(fmt::format("malformed placement name '{}'", name));
  const char type_char = s.back();
  CoreType type;
  if (type_char == 'P' || type_char == 'p') {
    type = CoreType::P;
  } else if (type_char == 'E' || type_char == 'e') {
    type = CoreType::E;
  } else {
    config_error(fmt::format("malformed placement name '{}': expected trailing P or E", name));
  }
  std::string_view digits = s.substr(0, s.size() - 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
    config_error(fmt::format("malformed placement name '{}'", name));
  int count = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
  if (ec != std::errc{} || ptr != digits.data() + digits.size())
    config_error(fmt::format("malformed placement name '{}'", name));
  if (count == 0) config_error(fmt::format("placement '{}' has zero core count", name));
  if (mutator_pcore_count < 1) config_error("mutator p-core count must be >= 1");
  return HardwareConfig{count, type, mutator_pcore_count};
}

std::string render(const ComparisonName& name) {
  return render(name.numerator) + "/" + render(name.denominator);
}

ComparisonName parse_comparison_name(std::string_view text, int mutator_pcore_count) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) config_error(fmt::format("comparison '{}' lacks '/'", text));
  return ComparisonName{parse_config_name(text.substr(0, slash), mutator_pcore_count),
                        parse_config_name(text.substr(slash + 1), mutator_pcore_count)};
}

std::string render(const Ratio& r) { return fmt::format("{}:{}", r.first, r.second); }

// ---------------------------------------------------------------------------
// Core selection

namespace {

struct Selection {
  std::vector<const Core*> gc;
  std::vector<const Core*> mutator;
};

// E-cores ordered module by module (lowest module id first, then core id),
// so partial selections fill whole modules before opening a new one.
std::vector<const Core*> ecores_fill_order(const CoreTopology& topo) {
  auto e = topo.cores_of(CoreType::E);
  std::stable_sort(e.begin(), e.end(), [](const Core* a, const Core* b) {
    return std::pair(*a->module, a->id) < std::pair(*b->module, b->id);
  });
  return e;
}

Selection select_cores(const HardwareConfig& config, const CoreTopology& topo) {
  if (config.gc_core_count < 1) config_error("GC core count must be >= 1");
  if (config.mutator_pcore_count < 1) config_error("mutator p-core count must be >= 1");
  const auto pcores = topo.cores_of(CoreType::P);
  Selection sel;
  if (static_cast<int>(pcores.size()) < config.mutator_pcore_count)
    config_error(fmt::format("topology has {} p-cores, {} needed for mutators", pcores.size(),
                             config.mutator_pcore_count));
  sel.mutator.assign(pcores.begin(), pcores.begin() + config.mutator_pcore_count);

  if (config.gc_core_type == CoreType::P) {
    const int available = static_cast<int>(pcores.size()) - config.mutator_pcore_count;
    if (available < config.gc_core_count)
      config_error(fmt::format("{} needs {} p-cores disjoint from the {} mutator p-cores; only {} left",
                               render(config), config.gc_core_count, config.mutator_pcore_count,
                               available));
    sel.gc.assign(pcores.begin() + config.mutator_pcore_count,
                  pcores.begin() + config.mutator_pcore_count + config.gc_core_count);
  } else {
    const auto ecores = ecores_fill_order(topo);
    if (static_cast<int>(ecores.size()) < config.gc_core_count)
      config_error(fmt::format("{} needs {} e-cores; topology has {}", render(config),
                               config.gc_core_count, ecores.size()));
    sel.gc.assign(ecores.begin(), ecores.begin() + config.gc_core_count);
  }
  return sel;
}

CpuSet cpus_of(const std::vector<const Core*>& cores) {
  CpuSet out;
  for (const Core* c : cores) out.insert(c->hw_threads.begin(), c->hw_threads.end());
  return out;
}

}  // namespace

int hwt_count(const HardwareConfig& config, const CoreTopology& topo) {
  return static_cast<int>(cpus_of(select_cores(config, topo).gc).size());
}

Ratio hwt_ratio(const HardwareConfig& a, const HardwareConfig& b, const CoreTopology& topo) {
  const long ha = hwt_count(a, topo);
  const long hb = hwt_count(b, topo);
  const long g = std::gcd(ha, hb);
  return Ratio{ha / g, hb / g};
}

Ratio table_order_ratio(const ComparisonName& name, const CoreTopology& topo) {
  const bool swap = name.numerator.gc_core_type == CoreType::E && name.denominator.gc_core_type == CoreType::P;
  return swap ? hwt_ratio(name.denominator, name.numerator, topo)
              : hwt_ratio(name.numerator, name.denominator, topo);
}

int gc_l2_kb(const HardwareConfig& config, const CoreTopology& topo) {
  const auto sel = select_cores(config, topo);
  int total = 0;
  std::set<int> modules;
  for (const Core* c : sel.gc) {
    if (c->module) {
      if (modules.insert(*c->module).second) total += c->l2_kb;
    } else {
      total += c->l2_kb;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// AffinityPlan

AffinityPlan::AffinityPlan(std::map<ThreadRole, CpuSet> role_to_cpus) : role_to_cpus_(std::move(role_to_cpus)) {}

const CpuSet& AffinityPlan::cpus_for(ThreadRole role) const {
  auto it = role_to_cpus_.find(role);
  if (it == role_to_cpus_.end() || it->second.empty())
    config_error(fmt::format("affinity plan has an empty CPU set for role {}", to_string(role)));
  return it->second;
}

bool AffinityPlan::has(ThreadRole role) const {
  auto it = role_to_cpus_.find(role);
  return it != role_to_cpus_.end() && !it->second.empty();
}

AffinityPlan build_affinity_plan(const HardwareConfig& config, const CoreTopology& topo) {
  const auto sel = select_cores(config, topo);
  const CpuSet gc = cpus_of(sel.gc);
  const CpuSet other = cpus_of(sel.mutator);
  for (int cpu : gc) {
    if (other.count(cpu)) config_error(fmt::format("GC and mutator CPU sets overlap on cpu {}", cpu));
  }
  std::map<ThreadRole, CpuSet> roles;
  for (ThreadRole r : kAllRoles) roles[r] = (r == ThreadRole::GcWorker) ? gc : other;
  return AffinityPlan(std::move(roles));
}

// ---------------------------------------------------------------------------
// Fixtures

CoreTopology i9_12900k_fixture() {
  std::vector<Core> cores;
  // p-cores: core i owns cpus 2i and 2i+1
  for (int i = 0; i < 8; ++i) cores.push_back(Core{i, CoreType::P, {2 * i, 2 * i + 1}, std::nullopt, 1280});
  // e-cores: cpus 16..23, modules of 4
  for (int i = 0; i < 8; ++i) cores.push_back(Core{8 + i, CoreType::E, {16 + i}, i / 4, 2048});
  return CoreTopology(std::move(cores), 30 * 1024, std::nullopt);
}

CoreTopology parse_topology_fixture(std::string_view text) {
  std::map<int, int> cpu_to_core;
  std::map<int, Core> cores;
  int l3_kb = 0;
  std::optional<int> epb;
  int lineno = 0;
  for (const auto& raw : detail::split_lines(text)) {
    ++lineno;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) config_error(fmt::format("topology fixture line {}: missing '='", lineno));
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto parts = detail::split(key, '.');
    auto as_int = [&](std::string_view v) {
      auto parsed = detail::parse_int(v);
      if (!parsed) config_error(fmt::format("topology fixture line {}: '{}' is not an integer", lineno, v));
      return *parsed;
    };
    if (parts.size() == 1 && parts[0] == "l3_kb") {
      l3_kb = as_int(value);
    } else if (parts.size() == 1 && parts[0] == "epb") {
      epb = as_int(value);
    } else if (parts.size() == 3 && parts[0] == "cpu" && parts[2] == "core") {
      cpu_to_core[as_int(parts[1])] = as_int(value);
    } else if (parts.size() == 3 && parts[0] == "core") {
      const int id = as_int(parts[1]);
      Core& c = cores[id];
      c.id = id;
      if (parts[2] == "type") {
        if (value == "P") c.type = CoreType::P;
        else if (value == "E") c.type = CoreType::E;
        else config_error(fmt::format("topology fixture line {}: core type must be P or E", lineno));
      } else if (parts[2] == "module") {
        c.module = as_int(value);
      } else if (parts[2] == "l2_kb") {
        c.l2_kb = as_int(value);
      } else {
        config_error(fmt::format("topology fixture line {}: unknown key '{}'", lineno, key));
      }
    } else {
      config_error(fmt::format("topology fixture line {}: unknown key '{}'", lineno, key));
    }
  }
  for (const auto& [cpu, core] : cpu_to_core) {
    auto it = cores.find(core);
    if (it == cores.end()) config_error(fmt::format("cpu {} refers to undeclared core {}", cpu, core));
    it->second.hw_threads.push_back(cpu);
  }
  std::vector<Core> out;
  for (auto& [id, c] : cores) out.push_back(std::move(c));
  return CoreTopology(std::move(out), l3_kb, epb);
}

std::string format_topology_fixture(const CoreTopology& topo) {
  std::string out;
  for (const Core& c : topo.cores()) {
    out += fmt::format("core.{}.type = {}\n", c.id, to_char(c.type));
    if (c.module) out += fmt::format("core.{}.module = {}\n", c.id, *c.module);
    out += fmt::format("core.{}.l2_kb = {}\n", c.id, c.l2_kb);
    for (int cpu : c.hw_threads) out += fmt::format("cpu.{}.core = {}\n", cpu, c.id);
  }
  out += fmt::format("l3_kb = {}\n", topo.l3_kb());
  if (topo.epb()) out += fmt::format("epb = {}\n", *topo.epb());
  return out;
}

CoreTopology load_topology_fixture(const fs::path& path) {
  auto text = detail::read_file(path);
  if (!text) config_error(fmt::format("cannot read topology fixture {}", path.string()));
  return parse_topology_fixture(*text);
}

// ---------------------------------------------------------------------------
// sysfs detection

std::vector<int> parse_cpu_list(std::string_view text) {
  std::vector<int> out;
  for (auto part : detail::split(detail::trim(text), ',')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    const auto dash = part.find('-');
    auto lo = detail::parse_int(part.substr(0, dash));
    auto hi = dash == std::string_view::npos ? lo : detail::parse_int(part.substr(dash + 1));
    if (!lo || !hi || *hi < *lo) throw Error(ErrorKind::kParse, fmt::format("bad cpu list '{}'", text));
    for (int i = *lo; i <= *hi; ++i) out.push_back(i);
  }
  return out;
}

namespace {

// "1280K", "2048K", "30M" -> KB
std::optional<int> parse_cache_size_kb(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  int mult = 1;
  char suffix = s.back();
  if (suffix == 'K' || suffix == 'k') {
    s.remove_suffix(1);
  } else if (suffix == 'M' || suffix == 'm') {
    mult = 1024;
    s.remove_suffix(1);
  } else if (suffix == 'G' || suffix == 'g') {
    mult = 1024 * 1024;
    s.remove_suffix(1);
  } else {
    // plain bytes
    auto bytes = detail::parse_int(s);
    if (!bytes) return std::nullopt;
    return *bytes / 1024;
  }
  auto v = detail::parse_int(s);
  if (!v) return std::nullopt;
  return *v * mult;
}

std::optional<std::string> read_first_line(const fs::path& p) {
  auto text = detail::read_file(p);
  if (!text) return std::nullopt;
  auto lines = detail::split_lines(*text);
  if (lines.empty()) return std::string{};
  return std::string(detail::trim(lines.front()));
}

// Finds the cache index directory describing the given level (unified/data).
std::optional<fs::path> cache_dir(const fs::path& cpu_dir, int level) {
  std::error_code ec;
  const fs::path cache = cpu_dir / "cache";
  if (!fs::is_directory(cache, ec)) return std::nullopt;
  for (const auto& entry : fs::directory_iterator(cache, ec)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("index", 0) != 0) continue;
    auto lvl = read_first_line(entry.path() / "level");
    auto type = read_first_line(entry.path() / "type");
    if (!lvl || detail::parse_int(*lvl) != level) continue;
    if (type && *type == "Instruction") continue;
    return entry.path();
  }
  return std::nullopt;
}

}  // namespace

CoreTopology detect_topology(const fs::path& sysfs_root) {
  const fs::path cpu_root = sysfs_root / "system" / "cpu";
  std::error_code ec;
  if (!fs::is_directory(cpu_root, ec))
    throw Error(ErrorKind::kUnavailable, fmt::format("cpu topology tree {} is unreadable", cpu_root.string()));

  std::vector<int> cpus;
  if (auto online = read_first_line(cpu_root / "online")) {
    cpus = parse_cpu_list(*online);
  } else {
    for (const auto& entry : fs::directory_iterator(cpu_root, ec)) {
      const auto name = entry.path().filename().string();
      if (name.size() > 3 && name.rfind("cpu", 0) == 0) {
        if (auto id = detail::parse_int(std::string_view(name).substr(3))) cpus.push_back(*id);
      }
    }
    std::sort(cpus.begin(), cpus.end());
  }
  if (cpus.empty()) throw Error(ErrorKind::kUnavailable, "no online cpus found");

  std::set<int> atom_cpus;
  if (auto atoms = read_first_line(sysfs_root / "cpu_atom" / "cpus")) {
    for (int c : parse_cpu_list(*atoms)) atom_cpus.insert(c);
  }

  // Group logical cpus into physical cores by their sibling list.
  std::map<std::vector<int>, std::vector<int>> siblings_to_cpus;
  std::vector<std::vector<int>> core_order;
  std::map<int, std::vector<int>> cpu_siblings;
  for (int cpu : cpus) {
    const fs::path dir = cpu_root / fmt::format("cpu{}", cpu);
    std::vector<int> sib{cpu};
    if (auto s = read_first_line(dir / "topology" / "thread_siblings_list")) {
      if (!s->empty()) sib = parse_cpu_list(*s);
    }
    cpu_siblings[cpu] = sib;
    if (!siblings_to_cpus.count(sib)) core_order.push_back(sib);
    siblings_to_cpus[sib].push_back(cpu);
  }

  std::vector<Core> cores;
  std::map<std::string, int> module_ids;
  int l3_kb = 0;
  std::optional<int> epb;
  int next_id = 0;
  for (const auto& sib : core_order) {
    const auto& members = siblings_to_cpus[sib];
    const int first = members.front();
    const fs::path dir = cpu_root / fmt::format("cpu{}", first);
    Core c;
    c.id = next_id++;
    c.hw_threads = members;
    c.type = atom_cpus.count(first) ? CoreType::E : CoreType::P;
    if (auto l2 = cache_dir(dir, 2)) {
      if (auto size = read_first_line(*l2 / "size")) c.l2_kb = parse_cache_size_kb(*size).value_or(0);
      if (c.type == CoreType::E) {
        auto shared = read_first_line(*l2 / "shared_cpu_list").value_or(std::to_string(first));
        auto [it, inserted] = module_ids.emplace(shared, static_cast<int>(module_ids.size()));
        c.module = it->second;
      }
    } else if (c.type == CoreType::E) {
      c.module = static_cast<int>(module_ids.size());
      module_ids.emplace(std::to_string(first), *c.module);
    }
    if (auto l3 = cache_dir(dir, 3)) {
      if (auto size = read_first_line(*l3 / "size")) l3_kb = std::max(l3_kb, parse_cache_size_kb(*size).value_or(0));
    }
    if (!epb) {
      if (auto e = read_first_line(dir / "power" / "energy_perf_bias")) epb = detail::parse_int(*e);
    }
    cores.push_back(std::move(c));
  }
  return CoreTopology(std::move(cores), l3_kb, epb);
}

}  // namespace ampgc
