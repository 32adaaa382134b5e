#pragma once

#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ampgc {

enum class CycleKind { Minor, Major };
enum class StallKind { AllocationStall, RelocationStall, OutOfMemory };

struct GcCycleRecord {
  long id = 0;
  CycleKind kind = CycleKind::Minor;
  double start_ms = 0;
  double end_ms = 0;
  double mark_ms = 0;
  double relocate_ms = 0;
  int workers = 1;
  double heap_used_after_mb = 0;

  double duration_ms() const { return end_ms - start_ms; }
  bool operator==(const GcCycleRecord&) const = default;
};

struct StallEvent {
  StallKind kind = StallKind::AllocationStall;
  double timestamp_ms = 0;

  bool operator==(const StallEvent&) const = default;
};

struct RunEnd {
  double wall_ms = 0;
  double heap_mb = 0;

  bool operator==(const RunEnd&) const = default;
};

struct ParsedLog {
  std::vector<GcCycleRecord> cycles;  // ordered by start time
  std::vector<StallEvent> stalls;
  std::optional<RunEnd> run_end;
  std::size_t skipped_lines = 0;
};

/// Line-oriented GC log grammar:
///   GCCYCLE id=<int> kind=<minor|major> start=<ms> end=<ms> mark=<ms> reloc=<ms> workers=<int> heap_after=<mb>
///   STALL kind=<allocation|relocation|oom> t=<ms>
///   RUNEND wall=<ms> heap=<mb>
/// Lines with other leading tags are skipped and counted.
class GcLogParser {
 public:
  /// Returns false if the line carried no GC tag. Throws Error(kParse) with
  /// the line number when a tagged line is malformed.
  bool feed(std::string_view line);
  /// Sorts cycles by start time and hands the result over.
  ParsedLog finish();

 private:
  ParsedLog log_;
  std::size_t lineno_ = 0;
};

ParsedLog parse_log(std::istream& in);
ParsedLog parse_log(std::span<const std::string> lines);

/// Returns true if `line` starts with one of the GC tags.
bool is_gc_log_line(std::string_view line);

std::string format_cycle(const GcCycleRecord& r);
std::string format_stall(const StallEvent& s);
std::string format_run_end(const RunEnd& e);

struct RunMetrics {
  int num_cycles = 0;
  int num_minor = 0;
  int num_major = 0;
  double mark_ms = 0;
  double relocate_ms = 0;
  double gc_time_ms = 0;
  double gc_activity = 0;
  double wall_ms = 0;
  double heap_mb = 0;
  std::optional<double> avg_workers;         // absent with zero cycles
  std::optional<double> heap_per_worker_mb;  // absent with zero cycles
  std::optional<double> avg_cycle_ms;        // absent with zero cycles
  /// Set when overlapping cycles push gc_activity above 1.
  std::optional<std::string> warning;

  bool operator==(const RunMetrics&) const = default;
};

/// GC time is the wall-clock sum of mark and relocate phases.
RunMetrics derive_metrics(std::span<const GcCycleRecord> records, std::span<const StallEvent> stalls,
                          double wall_ms, double heap_mb);

bool is_clean_run(std::span<const StallEvent> stalls);

}  // namespace ampgc
