#include "ampgc/config.hpp"

#include <fmt/core.h>

#include "ampgc/error.hpp"
#include "text_util.hpp"

namespace ampgc {

namespace {

[[noreturn]] void bad(std::size_t line, const std::string& msg) {
  throw Error(ErrorKind::kConfig, fmt::format("config line {}: {}", line, msg));
}

template <class T>
T number(std::size_t line, std::string_view key, std::string_view v) {
  std::optional<T> r;
  if constexpr (std::is_floating_point_v<T>) r = detail::parse_double(v);
  else r = detail::parse_int<T>(v);
  if (!r) bad(line, fmt::format("'{}' expects a number, got '{}'", key, v));
  return *r;
}

bool boolean(std::size_t line, std::string_view key, std::string_view v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  bad(line, fmt::format("'{}' expects true or false, got '{}'", key, v));
}

std::vector<std::string_view> list(std::string_view v, char sep) {
  std::vector<std::string_view> out;
  for (auto part : detail::split(v, sep)) {
    part = detail::trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

std::vector<std::string> split_command(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  bool have = false;
  for (char c : text) {
    if (c == '"') {
      quoted = !quoted;
      have = true;
    } else if (!quoted && (c == ' ' || c == '\t')) {
      if (have) out.push_back(std::move(cur));
      cur.clear();
      have = false;
    } else {
      cur += c;
      have = true;
    }
  }
  if (quoted) throw Error(ErrorKind::kConfig, "unbalanced quote in command");
  if (have) out.push_back(std::move(cur));
  return out;
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  std::size_t lineno = 0;
  std::optional<int> mutators;
  std::optional<std::string> placement;
  std::vector<std::string> comparison_names;
  bool rules_replaced = false;
  for (auto raw : detail::split_lines(text)) {
    ++lineno;
    const auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) bad(lineno, "expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto v = detail::trim(line.substr(eq + 1));
    auto& p = c.plan;
    if (key == "topology.source") c.topology_source = v;
    else if (key == "comparisons")
      for (auto s : list(v, ',')) comparison_names.emplace_back(s);
    else if (key == "run.benchmark") p.benchmark = v;
    else if (key == "run.target") p.target = split_command(v);
    else if (key == "run.placement") placement = std::string(v);
    else if (key == "run.mutator_pcores") mutators = number<int>(lineno, key, v);
    else if (key == "run.invocations") p.invocations = number<int>(lineno, key, v);
    else if (key == "run.iterations") p.iterations = number<int>(lineno, key, v);
    else if (key == "run.measured_tail") p.measured_tail = number<int>(lineno, key, v);
    else if (key == "run.cv_threshold") p.cv_threshold = number<double>(lineno, key, v);
    else if (key == "run.cv_window") p.cv_window = number<int>(lineno, key, v);
    else if (key == "run.heap_mb") p.heap_mb = number<double>(lineno, key, v);
    else if (key == "run.flush_caches") p.flush_caches = boolean(lineno, key, v);
    else if (key == "run.seed") p.seed = number<std::uint64_t>(lineno, key, v);
    else if (key == "run.domains") {
      p.domains.clear();
      for (auto d : list(v, ',')) p.domains.push_back(parse_energy_domain(d));
    } else if (key == "pin.backend") c.pin_backend = v;
    else if (key == "pin.rules") {
      // replaces the defaults; rules are separated by ';' since patterns may contain spaces
      if (!rules_replaced) c.rules.clear();
      rules_replaced = true;
      for (auto r : list(v, ';')) c.rules.push_back(parse_role_rule(r));
    } else if (key == "pin.rule") {
      c.rules.push_back(parse_role_rule(v));
    } else if (key == "rapl.backend") c.rapl_backend = v;
    else if (key == "flush.backend") c.flush_backend = v;
    else if (key == "alpha") c.alpha = number<double>(lineno, key, v);
    else if (key == "output.dir") c.output_dir = std::string(v);
    else if (key == "heap.base_mb") c.heap_base_mb = number<double>(lineno, key, v);
    else if (key == "heap.growth") c.heap_growth = number<double>(lineno, key, v);
    else if (key == "heap.required_clean") c.heap_required_clean = number<int>(lineno, key, v);
    else if (key == "heap.cap_mb") c.heap_cap_mb = number<double>(lineno, key, v);
    else bad(lineno, fmt::format("unknown key '{}'", key));
  }
  const int m = mutators.value_or(4);
  c.plan.config.mutator_pcore_count = m;
  if (placement) c.plan.config = parse_config_name(*placement, m);
  for (const auto& n : comparison_names) c.comparisons.push_back(parse_comparison_name(n, m));
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  if (!text) throw Error(ErrorKind::kConfig, fmt::format("cannot read config '{}'", path.string()));
  return parse(*text);
}

void ExperimentConfig::apply_backend_override(std::string_view backend) {
  if (backend == "os") {
    pin_backend = "os";
    if (rapl_backend == "trace" || rapl_backend == "none") rapl_backend = "powercap";
    flush_backend = "thrash";
  } else if (backend == "mock") {
    pin_backend = "mock";
    if (rapl_backend == "powercap" || rapl_backend == "msr") rapl_backend = "none";
    flush_backend = "mock";
    if (topology_source == "detect") topology_source = "i9-12900k";
  } else if (backend == "fixture") {
    pin_backend = "mock";
    rapl_backend = "trace";
    flush_backend = "mock";
    if (topology_source == "detect") topology_source = "i9-12900k";
  } else {
    throw Error(ErrorKind::kConfig, fmt::format("AMPGC_BACKEND must be os, mock or fixture, not '{}'", backend));
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
  if (!(alpha > 0 && alpha < 1)) fail("alpha must lie in (0, 1)");
  if (pin_backend != "os" && pin_backend != "mock") fail("pin.backend must be os or mock");
  if (rapl_backend != "powercap" && rapl_backend != "msr" && rapl_backend != "trace" && rapl_backend != "none")
    fail("rapl.backend must be powercap, msr, trace or none");
  if (flush_backend != "thrash" && flush_backend != "mock") fail("flush.backend must be thrash or mock");
  if (!(heap_base_mb > 0)) fail("heap.base_mb must be positive");
  if (!(heap_growth > 1)) fail("heap.growth must exceed 1");
  if (heap_required_clean < 1) fail("heap.required_clean must be >= 1");
  if (!(heap_cap_mb >= heap_base_mb)) fail("heap.cap_mb must be at least heap.base_mb");
  if (plan.invocations < 1) fail("run.invocations must be >= 1");
  if (plan.iterations < 1) fail("run.iterations must be >= 1");
  if (plan.measured_tail < 1 || plan.measured_tail > plan.iterations)
    fail("run.measured_tail must lie in [1, run.iterations]");
  if (!(plan.cv_threshold > 0)) fail("run.cv_threshold must be positive");
  if (plan.cv_window < 2) fail("run.cv_window must be >= 2");
  if (!(plan.heap_mb > 0)) fail("run.heap_mb must be positive");
}

void ExperimentConfig::check_realizable(const CoreTopology& topo) const {
  std::vector<HardwareConfig> configs{plan.config};
  for (const auto& c : comparisons) {
    configs.push_back(c.numerator);
    configs.push_back(c.denominator);
  }
  for (const auto& hc : configs) {
    try {
      build_affinity_plan(hc, topo);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, fmt::format("placement {} is not realizable: {}", render(hc), e.what()));
    }
  }
}

}  // namespace ampgc
