#include "ampgc/gclog.hpp"

#include <algorithm>
#include <map>

#include <fmt/core.h>

#include "ampgc/error.hpp"
#include "text_util.hpp"

namespace ampgc {

namespace {

constexpr std::string_view kCycleTag = "GCCYCLE";
constexpr std::string_view kStallTag = "STALL";
constexpr std::string_view kRunEndTag = "RUNEND";

class Fields {
 public:
  Fields(std::span<const std::string_view> toks, std::size_t lineno) : lineno_(lineno) {
    for (std::size_t i = 1; i < toks.size(); ++i) {
      const auto eq = toks[i].find('=');
      if (eq == std::string_view::npos || eq == 0) fail(fmt::format("token '{}' is not key=value", toks[i]));
      if (!kv_.emplace(toks[i].substr(0, eq), toks[i].substr(eq + 1)).second)
        fail(fmt::format("duplicate key '{}'", toks[i].substr(0, eq)));
    }
  }

  std::string_view text(std::string_view key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) fail(fmt::format("missing key '{}'", key));
    used_++;
    return it->second;
  }

  double real(std::string_view key) const {
    auto v = detail::parse_double(text(key));
    if (!v) fail(fmt::format("key '{}' is not a number", key));
    return *v;
  }

  long integer(std::string_view key) const {
    auto v = detail::parse_int<long>(text(key));
    if (!v) fail(fmt::format("key '{}' is not an integer", key));
    return *v;
  }

  void expect_all_used() const {
    if (used_ != kv_.size()) fail("unexpected extra keys");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::kParse, fmt::format("gc log line {}: {}", lineno_, msg));
  }

 private:
  std::map<std::string_view, std::string_view, std::less<>> kv_;
  std::size_t lineno_;
  mutable std::size_t used_ = 0;
};

}  // namespace

bool is_gc_log_line(std::string_view line) {
  const auto toks = detail::tokens(line);
  return !toks.empty() && (toks[0] == kCycleTag || toks[0] == kStallTag || toks[0] == kRunEndTag);
}

bool GcLogParser::feed(std::string_view line) {
  ++lineno_;
  const auto toks = detail::tokens(line);
  if (toks.empty() || (toks[0] != kCycleTag && toks[0] != kStallTag && toks[0] != kRunEndTag)) {
    ++log_.skipped_lines;
    return false;
  }
  Fields f(toks, lineno_);
  if (toks[0] == kCycleTag) {
    GcCycleRecord r;
    r.id = f.integer("id");
    const auto kind = f.text("kind");
    if (kind == "minor") r.kind = CycleKind::Minor;
    else if (kind == "major") r.kind = CycleKind::Major;
    else f.fail(fmt::format("unknown cycle kind '{}'", kind));
    r.start_ms = f.real("start");
    r.end_ms = f.real("end");
    r.mark_ms = f.real("mark");
    r.relocate_ms = f.real("reloc");
    r.workers = static_cast<int>(f.integer("workers"));
    r.heap_used_after_mb = f.real("heap_after");
    f.expect_all_used();
    if (r.end_ms < r.start_ms) f.fail("cycle ends before it starts");
    if (r.workers < 1) f.fail("cycle needs at least one worker");
    if (r.mark_ms < 0 || r.relocate_ms < 0) f.fail("negative phase time");
    // allow rounding slack of one part in 1e9 of the duration
    if (r.mark_ms + r.relocate_ms > r.duration_ms() * (1 + 1e-9) + 1e-9)
      f.fail("mark + relocate exceeds cycle duration");
    log_.cycles.push_back(r);
  } else if (toks[0] == kStallTag) {
    StallEvent s;
    const auto kind = f.text("kind");
    if (kind == "allocation") s.kind = StallKind::AllocationStall;
    else if (kind == "relocation") s.kind = StallKind::RelocationStall;
    else if (kind == "oom") s.kind = StallKind::OutOfMemory;
    else f.fail(fmt::format("unknown stall kind '{}'", kind));
    s.timestamp_ms = f.real("t");
    f.expect_all_used();
    log_.stalls.push_back(s);
  } else {
    RunEnd e;
    e.wall_ms = f.real("wall");
    e.heap_mb = f.real("heap");
    f.expect_all_used();
    log_.run_end = e;
  }
  return true;
}

ParsedLog GcLogParser::finish() {
  std::stable_sort(log_.cycles.begin(), log_.cycles.end(),
                   [](const GcCycleRecord& a, const GcCycleRecord& b) { return a.start_ms < b.start_ms; });
  ParsedLog out = std::move(log_);
  log_ = ParsedLog{};
  lineno_ = 0;
  return out;
}

ParsedLog parse_log(std::istream& in) {
  GcLogParser p;
  std::string line;
  while (std::getline(in, line)) p.feed(line);
  return p.finish();
}

ParsedLog parse_log(std::span<const std::string> lines) {
  GcLogParser p;
  for (const auto& l : lines) p.feed(l);
  return p.finish();
}

std::string format_cycle(const GcCycleRecord& r) {
  return fmt::format("GCCYCLE id={} kind={} start={} end={} mark={} reloc={} workers={} heap_after={}", r.id,
                     r.kind == CycleKind::Minor ? "minor" : "major", r.start_ms, r.end_ms, r.mark_ms, r.relocate_ms,
                     r.workers, r.heap_used_after_mb);
}

std::string format_stall(const StallEvent& s) {
  std::string_view kind = s.kind == StallKind::AllocationStall   ? "allocation"
                          : s.kind == StallKind::RelocationStall ? "relocation"
                                                                 : "oom";
  return fmt::format("STALL kind={} t={}", kind, s.timestamp_ms);
}

std::string format_run_end(const RunEnd& e) { return fmt::format("RUNEND wall={} heap={}", e.wall_ms, e.heap_mb); }

RunMetrics derive_metrics(std::span<const GcCycleRecord> records, std::span<const StallEvent> /*stalls*/,
                          double wall_ms, double heap_mb) {
  if (!(wall_ms > 0)) throw Error(ErrorKind::kConfig, "derive_metrics needs a positive wall time");
  RunMetrics m;
  m.wall_ms = wall_ms;
  m.heap_mb = heap_mb;
  long worker_sum = 0;
  double duration_sum = 0;
  for (const auto& r : records) {
    ++m.num_cycles;
    (r.kind == CycleKind::Minor ? m.num_minor : m.num_major)++;
    m.mark_ms += r.mark_ms;
    m.relocate_ms += r.relocate_ms;
    worker_sum += r.workers;
    duration_sum += r.duration_ms();
  }
  m.gc_time_ms = m.mark_ms + m.relocate_ms;
  m.gc_activity = m.gc_time_ms / wall_ms;
  if (m.num_cycles > 0) {
    m.avg_workers = static_cast<double>(worker_sum) / m.num_cycles;
    m.heap_per_worker_mb = heap_mb / *m.avg_workers;
    m.avg_cycle_ms = duration_sum / m.num_cycles;
  }
  if (m.gc_activity > 1.0)
    m.warning = fmt::format("gc_activity {:.3f} exceeds 1: overlapping cycles summed in wall-clock time", m.gc_activity);
  return m;
}

bool is_clean_run(std::span<const StallEvent> stalls) { return stalls.empty(); }

}  // namespace ampgc
