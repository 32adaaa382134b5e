#include "ampgc/rapl.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <thread>

#include <fmt/core.h>

#include "ampgc/error.hpp"
#include "text_util.hpp"

namespace fs = std::filesystem;

namespace ampgc {

std::string_view to_string(EnergyDomain d) {
  switch (d) {
    case EnergyDomain::Pkg: return "pkg";
    case EnergyDomain::Pp0: return "pp0";
    case EnergyDomain::Pp1: return "pp1";
    case EnergyDomain::Dram: return "dram";
  }
  return "pkg";
}

EnergyDomain parse_energy_domain(std::string_view text) {
  for (auto d : {EnergyDomain::Pkg, EnergyDomain::Pp0, EnergyDomain::Pp1, EnergyDomain::Dram})
    if (to_string(d) == text) return d;
  throw Error(ErrorKind::kParse, fmt::format("unknown energy domain '{}'", text));
}

EnergyDelta delta(const EnergySample& first, const EnergySample& second, std::uint64_t max_range_uj) {
  if (first.domain != second.domain)
    throw Error(ErrorKind::kConfig, fmt::format("energy delta across domains {} and {}", to_string(first.domain),
                                                to_string(second.domain)));
  const std::int64_t duration = second.timestamp_ns - first.timestamp_ns;
  if (duration <= 0) throw Error(ErrorKind::kConfig, "energy delta needs a positive duration");
  if (max_range_uj == 0) throw Error(ErrorKind::kConfig, "energy counter range must be positive");
  if (first.counter_uj >= max_range_uj || second.counter_uj >= max_range_uj)
    throw Error(ErrorKind::kConfig, "energy counter exceeds its configured range");
  const std::uint64_t uj = second.counter_uj >= first.counter_uj
                               ? second.counter_uj - first.counter_uj
                               : second.counter_uj + (max_range_uj - first.counter_uj);
  EnergyDelta d{first.domain, static_cast<double>(uj) / 1e6, duration};
  if (d.watts() > kMaxPlausibleWatts)
    throw Error(ErrorKind::kConfig,
                fmt::format("energy delta implies {:.0f} W on {}: wrong counter range?", d.watts(),
                            to_string(first.domain)));
  return d;
}

EnergyTotal total_energy(std::span<const EnergySample> series, std::uint64_t max_range_uj, bool truncated) {
  if (series.size() < 2) throw Error(ErrorKind::kConfig, "energy total needs at least two samples");
  // Sum in integer microjoules so splitting a series is exactly additive.
  std::uint64_t uj = 0;
  for (std::size_t i = 1; i < series.size(); ++i) {
    const auto d = delta(series[i - 1], series[i], max_range_uj);
    uj += static_cast<std::uint64_t>(std::llround(d.joules * 1e6));
  }
  return EnergyTotal{
      EnergyDelta{series.front().domain, static_cast<double>(uj) / 1e6,
                  series.back().timestamp_ns - series.front().timestamp_ns},
      truncated};
}

namespace {

std::int64_t monotonic_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::optional<std::uint64_t> read_u64(const fs::path& p) {
  auto text = detail::read_file(p);
  if (!text) return std::nullopt;
  return detail::parse_int<std::uint64_t>(*text);
}

}  // namespace

// ---------------------------------------------------------------------------
// powercap

PowercapBackend::PowercapBackend(fs::path root, std::optional<std::uint64_t> max_range_override) {
  std::error_code ec;
  for (const auto& zone : fs::directory_iterator(root, ec)) {
    const auto name = zone.path().filename().string();
    if (name.rfind("intel-rapl:", 0) != 0) continue;
    auto label = detail::read_file(zone.path() / "name");
    if (!label) continue;
    const auto l = detail::trim(*label);
    std::optional<EnergyDomain> d;
    if (l.rfind("package", 0) == 0) d = EnergyDomain::Pkg;
    else if (l == "core") d = EnergyDomain::Pp0;
    else if (l == "uncore") d = EnergyDomain::Pp1;
    else if (l == "dram") d = EnergyDomain::Dram;
    if (!d || zones_.count(*d)) continue;  // first package only
    zones_[*d] = zone.path();
    ranges_[*d] = max_range_override.value_or(
        read_u64(zone.path() / "max_energy_range_uj").value_or(kDefaultMaxRangeUj));
  }
  // Subzones such as intel-rapl:0:0 also appear under the package directory.
  if (auto pkg = zones_.find(EnergyDomain::Pkg); pkg != zones_.end()) {
    for (const auto& zone : fs::directory_iterator(pkg->second, ec)) {
      const auto name = zone.path().filename().string();
      if (name.rfind("intel-rapl:", 0) != 0) continue;
      auto label = detail::read_file(zone.path() / "name");
      if (!label) continue;
      const auto l = detail::trim(*label);
      std::optional<EnergyDomain> d;
      if (l == "core") d = EnergyDomain::Pp0;
      else if (l == "uncore") d = EnergyDomain::Pp1;
      else if (l == "dram") d = EnergyDomain::Dram;
      if (!d || zones_.count(*d)) continue;
      zones_[*d] = zone.path();
      ranges_[*d] = max_range_override.value_or(
          read_u64(zone.path() / "max_energy_range_uj").value_or(kDefaultMaxRangeUj));
    }
  }
}

bool PowercapBackend::available(EnergyDomain domain) const { return zones_.count(domain) > 0; }

std::uint64_t PowercapBackend::max_range_uj(EnergyDomain domain) const {
  auto it = ranges_.find(domain);
  return it == ranges_.end() ? kDefaultMaxRangeUj : it->second;
}

EnergySample PowercapBackend::read_counter(EnergyDomain domain) {
  auto it = zones_.find(domain);
  if (it == zones_.end())
    throw Error(ErrorKind::kUnavailable, fmt::format("RAPL domain {} is not available", to_string(domain)));
  const fs::path file = it->second / "energy_uj";
  const int fd = ::open(file.c_str(), O_RDONLY);
  if (fd < 0) {
    if (errno == EACCES || errno == EPERM)
      throw Error(ErrorKind::kPermission,
                  fmt::format("cannot read {}: energy counters need root or a relaxed powercap mode", file.string()));
    throw Error(ErrorKind::kUnavailable, fmt::format("cannot open {}", file.string()));
  }
  char buf[64] = {};
  const ssize_t n = ::read(fd, buf, sizeof(buf) - 1);
  ::close(fd);
  const auto ts = monotonic_ns();
  auto value = n > 0 ? detail::parse_int<std::uint64_t>(std::string_view(buf, static_cast<std::size_t>(n)))
                     : std::nullopt;
  if (!value) throw Error(ErrorKind::kUnavailable, fmt::format("unreadable counter {}", file.string()));
  return EnergySample{domain, ts, *value};
}

// ---------------------------------------------------------------------------
// MSR

namespace {
constexpr std::uint32_t kMsrPowerUnit = 0x606;
constexpr std::uint32_t kMsrPkgEnergy = 0x611;
constexpr std::uint32_t kMsrPp0Energy = 0x639;
}  // namespace

MsrBackend::MsrBackend(int cpu, fs::path dev_root) : dev_(dev_root / std::to_string(cpu) / "msr") {
  const auto units = read_msr(kMsrPowerUnit);
  const auto esu = (units >> 8) & 0x1f;
  joules_per_unit_ = std::ldexp(1.0, -static_cast<int>(esu));
}

std::uint64_t MsrBackend::read_msr(std::uint32_t reg) const {
  const int fd = ::open(dev_.c_str(), O_RDONLY);
  if (fd < 0) {
    if (errno == EACCES || errno == EPERM)
      throw Error(ErrorKind::kPermission, fmt::format("cannot open {}: needs root and the msr module", dev_.string()));
    throw Error(ErrorKind::kUnavailable, fmt::format("cannot open {}", dev_.string()));
  }
  std::uint64_t value = 0;
  const ssize_t n = ::pread(fd, &value, sizeof(value), reg);
  ::close(fd);
  if (n != sizeof(value)) throw Error(ErrorKind::kUnavailable, fmt::format("MSR {:#x} is not readable", reg));
  return value;
}

bool MsrBackend::available(EnergyDomain domain) const {
  return domain == EnergyDomain::Pkg || domain == EnergyDomain::Pp0;
}

std::uint64_t MsrBackend::max_range_uj(EnergyDomain) const {
  return static_cast<std::uint64_t>(std::llround(std::ldexp(joules_per_unit_, 32) * 1e6));
}

EnergySample MsrBackend::read_counter(EnergyDomain domain) {
  if (!available(domain))
    throw Error(ErrorKind::kUnavailable, fmt::format("RAPL domain {} is not available", to_string(domain)));
  const auto raw = read_msr(domain == EnergyDomain::Pkg ? kMsrPkgEnergy : kMsrPp0Energy) & 0xffffffffULL;
  const auto ts = monotonic_ns();
  auto uj = static_cast<std::uint64_t>(std::floor(static_cast<double>(raw) * joules_per_unit_ * 1e6));
  return EnergySample{domain, ts, std::min(uj, max_range_uj(domain) - 1)};
}

// ---------------------------------------------------------------------------
// fixture

FixtureBackend::FixtureBackend(std::vector<EnergySample> samples, std::uint64_t max_range_uj)
    : max_range_(max_range_uj) {
  for (auto& s : samples) by_domain_[s.domain].push_back(s);
  for (auto& [d, v] : by_domain_)
    std::stable_sort(v.begin(), v.end(),
                     [](const EnergySample& a, const EnergySample& b) { return a.timestamp_ns < b.timestamp_ns; });
}

FixtureBackend FixtureBackend::parse(std::string_view csv) {
  std::vector<EnergySample> samples;
  std::uint64_t range = kDefaultMaxRangeUj;
  int lineno = 0;
  for (auto raw : detail::split_lines(csv)) {
    ++lineno;
    auto line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view key = "max_energy_range_uj=";
      auto body = detail::trim(line.substr(1));
      if (body.rfind(key, 0) == 0) {
        auto v = detail::parse_int<std::uint64_t>(body.substr(key.size()));
        if (!v || *v == 0) throw Error(ErrorKind::kParse, fmt::format("energy csv line {}: bad range", lineno));
        range = *v;
      }
      continue;
    }
    if (line == "timestamp_ns,domain,counter_uj") continue;
    auto f = detail::split(line, ',');
    if (f.size() != 3) throw Error(ErrorKind::kParse, fmt::format("energy csv line {}: expected 3 fields", lineno));
    auto ts = detail::parse_int<std::int64_t>(f[0]);
    auto c = detail::parse_int<std::uint64_t>(f[2]);
    if (!ts || !c) throw Error(ErrorKind::kParse, fmt::format("energy csv line {}: bad number", lineno));
    EnergyDomain d;
    try {
      d = parse_energy_domain(detail::trim(f[1]));
    } catch (const Error&) {
      throw Error(ErrorKind::kParse, fmt::format("energy csv line {}: unknown domain '{}'", lineno, f[1]));
    }
    samples.push_back(EnergySample{d, *ts, *c});
  }
  return FixtureBackend(std::move(samples), range);
}

FixtureBackend FixtureBackend::load(const fs::path& path) {
  auto text = detail::read_file(path);
  if (!text) throw Error(ErrorKind::kConfig, fmt::format("cannot read energy fixture {}", path.string()));
  return parse(*text);
}

bool FixtureBackend::available(EnergyDomain domain) const {
  auto it = by_domain_.find(domain);
  return it != by_domain_.end() && !it->second.empty();
}

std::uint64_t FixtureBackend::max_range_uj(EnergyDomain) const { return max_range_; }

EnergySample FixtureBackend::read_counter(EnergyDomain domain) {
  if (!available(domain))
    throw Error(ErrorKind::kUnavailable, fmt::format("RAPL domain {} is not available", to_string(domain)));
  auto& idx = cursor_[domain];
  const auto& v = by_domain_.at(domain);
  if (idx >= v.size()) throw Error(ErrorKind::kState, "energy fixture exhausted");
  return v[idx++];
}

std::optional<EnergySample> FixtureBackend::sample_at(EnergyDomain domain, std::int64_t t_ns) const {
  auto it = by_domain_.find(domain);
  if (it == by_domain_.end()) return std::nullopt;
  const auto& v = it->second;
  auto ub = std::upper_bound(v.begin(), v.end(), t_ns,
                             [](std::int64_t t, const EnergySample& s) { return t < s.timestamp_ns; });
  if (ub == v.begin()) return std::nullopt;
  return *std::prev(ub);
}

std::vector<EnergySample> FixtureBackend::window(EnergyDomain domain, std::int64_t from_ns, std::int64_t to_ns) const {
  std::vector<EnergySample> out;
  auto it = by_domain_.find(domain);
  if (it == by_domain_.end()) return out;
  for (const auto& s : it->second)
    if (s.timestamp_ns >= from_ns && s.timestamp_ns <= to_ns) out.push_back(s);
  return out;
}

std::vector<EnergySample> FixtureBackend::samples(EnergyDomain domain) const {
  auto it = by_domain_.find(domain);
  return it == by_domain_.end() ? std::vector<EnergySample>{} : it->second;
}

std::string format_energy_csv(std::span<const EnergySample> samples, std::uint64_t max_range_uj) {
  std::string out = fmt::format("# max_energy_range_uj={}\ntimestamp_ns,domain,counter_uj\n", max_range_uj);
  for (const auto& s : samples) out += fmt::format("{},{},{}\n", s.timestamp_ns, to_string(s.domain), s.counter_uj);
  return out;
}

SampledSeries sample_series(EnergyBackend& backend, EnergyDomain domain, std::chrono::milliseconds period,
                            const std::function<bool()>& stop) {
  if (period.count() < 1) throw Error(ErrorKind::kConfig, "RAPL sampling period must be >= 1 ms");
  SampledSeries out;
  while (true) {
    try {
      out.samples.push_back(backend.read_counter(domain));
    } catch (const Error& e) {
      if (out.samples.empty()) throw;
      out.truncated = true;
      return out;
    }
    if (stop()) return out;
    std::this_thread::sleep_for(period);
  }
}

}  // namespace ampgc
