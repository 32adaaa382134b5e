#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ampgc {

enum class EnergyDomain { Pkg, Pp0, Pp1, Dram };

std::string_view to_string(EnergyDomain d);
EnergyDomain parse_energy_domain(std::string_view text);

/// Raw counter reading. The counter wraps at the domain's max range.
struct EnergySample {
  EnergyDomain domain = EnergyDomain::Pkg;
  std::int64_t timestamp_ns = 0;
  std::uint64_t counter_uj = 0;

  bool operator==(const EnergySample&) const = default;
};

struct EnergyDelta {
  EnergyDomain domain = EnergyDomain::Pkg;
  double joules = 0.0;
  std::int64_t duration_ns = 0;

  double watts() const { return joules / (static_cast<double>(duration_ns) * 1e-9); }
};

/// Largest power a delta may imply before it is treated as a wrap-range
/// misconfiguration.
inline constexpr double kMaxPlausibleWatts = 2000.0;

/// Common powercap max_energy_range_uj on client parts (2^38 * 61 uJ / 64).
inline constexpr std::uint64_t kDefaultMaxRangeUj = 262143328850ULL;

/// Wrap-corrected energy between two samples of one domain.
/// Throws Error(kConfig) on mismatched domains, non-increasing timestamps,
/// or a delta implying more than kMaxPlausibleWatts.
EnergyDelta delta(const EnergySample& first, const EnergySample& second, std::uint64_t max_range_uj);

struct EnergyTotal {
  EnergyDelta delta;
  /// Sampling ended early because the backend failed.
  bool truncated = false;
};

/// Sum of pairwise wrap-corrected deltas. Requires >= 2 samples.
EnergyTotal total_energy(std::span<const EnergySample> series, std::uint64_t max_range_uj, bool truncated = false);

class EnergyBackend {
 public:
  virtual ~EnergyBackend() = default;
  /// Throws Error(kUnavailable) for unsupported domains, Error(kPermission)
  /// when the counter is not readable.
  virtual EnergySample read_counter(EnergyDomain domain) = 0;
  virtual std::uint64_t max_range_uj(EnergyDomain domain) const = 0;
  virtual bool available(EnergyDomain domain) const = 0;
};

/// `<root>/intel-rapl:0/energy_uj` style tree; PP0 is the `core` subzone.
class PowercapBackend final : public EnergyBackend {
 public:
  explicit PowercapBackend(std::filesystem::path root = "/sys/class/powercap",
                           std::optional<std::uint64_t> max_range_override = std::nullopt);

  EnergySample read_counter(EnergyDomain domain) override;
  std::uint64_t max_range_uj(EnergyDomain domain) const override;
  bool available(EnergyDomain domain) const override;

 private:
  std::map<EnergyDomain, std::filesystem::path> zones_;
  std::map<EnergyDomain, std::uint64_t> ranges_;
};

/// Raw MSR reads through /dev/cpu/<n>/msr. Needs the msr driver and root.
class MsrBackend final : public EnergyBackend {
 public:
  explicit MsrBackend(int cpu = 0, std::filesystem::path dev_root = "/dev/cpu");

  EnergySample read_counter(EnergyDomain domain) override;
  std::uint64_t max_range_uj(EnergyDomain domain) const override;
  bool available(EnergyDomain domain) const override;

 private:
  std::uint64_t read_msr(std::uint32_t reg) const;

  std::filesystem::path dev_;
  double joules_per_unit_ = 0.0;
};

/// Replays a `timestamp_ns,domain,counter_uj` CSV. A leading
/// `# max_energy_range_uj=<n>` comment sets the wrap range.
class FixtureBackend final : public EnergyBackend {
 public:
  explicit FixtureBackend(std::vector<EnergySample> samples, std::uint64_t max_range_uj = kDefaultMaxRangeUj);

  static FixtureBackend parse(std::string_view csv);
  static FixtureBackend load(const std::filesystem::path& path);

  /// Next scripted sample for the domain; Error(kState) when exhausted.
  EnergySample read_counter(EnergyDomain domain) override;
  std::uint64_t max_range_uj(EnergyDomain domain) const override;
  bool available(EnergyDomain domain) const override;

  /// Latest sample at or before `t_ns` (virtual time replay).
  std::optional<EnergySample> sample_at(EnergyDomain domain, std::int64_t t_ns) const;
  /// All samples of a domain within [from_ns, to_ns].
  std::vector<EnergySample> window(EnergyDomain domain, std::int64_t from_ns, std::int64_t to_ns) const;
  std::vector<EnergySample> samples(EnergyDomain domain) const;

 private:
  std::map<EnergyDomain, std::vector<EnergySample>> by_domain_;
  std::map<EnergyDomain, std::size_t> cursor_;
  std::uint64_t max_range_;
};

std::string format_energy_csv(std::span<const EnergySample> samples, std::uint64_t max_range_uj);

/// Reads `domain` every `period` until `stop()` returns true, then returns
/// the collected series. A backend failure ends the series early and sets
/// `truncated`.
struct SampledSeries {
  std::vector<EnergySample> samples;
  bool truncated = false;
};

SampledSeries sample_series(EnergyBackend& backend, EnergyDomain domain, std::chrono::milliseconds period,
                            const std::function<bool()>& stop);

}  // namespace ampgc
