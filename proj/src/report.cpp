#include "ampgc/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/core.h>
#include <json.hpp>

#include "ampgc/error.hpp"
#include "text_util.hpp"

namespace ampgc::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::kConfig, "report: " + msg); }

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void append_record(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += csv_cell(cells[i]);
  }
  out += '\n';
}

std::string label(const bench::RunSeries& s) { return s.plan.benchmark + ":" + render(s.plan.config); }

}  // namespace

std::string num(double v) { return fmt::format("{}", v); }

std::string to_csv(const Table& t) {
  std::string out;
  append_record(out, t.header);
  for (const auto& r : t.rows) append_record(out, r);
  return out;
}

Table from_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      rec.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      rec.push_back(std::move(cell));
      cell.clear();
      records.push_back(std::move(rec));
      rec.clear();
      any = false;
    } else {
      cell += c;
      any = true;
    }
  }
  if (quoted) throw Error(ErrorKind::kParse, "unterminated quoted CSV cell");
  if (any || !cell.empty()) {
    rec.push_back(std::move(cell));
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error(ErrorKind::kParse, "CSV without a header");
  Table t;
  t.header = std::move(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != t.header.size())
      throw Error(ErrorKind::kParse, fmt::format("CSV record {} has {} cells, header has {}", i + 1,
                                                 records[i].size(), t.header.size()));
    t.rows.push_back(std::move(records[i]));
  }
  return t;
}

std::string to_json(const Table& t) {
  json j{{"meta", t.meta}, {"header", t.header}, {"rows", t.rows}};
  return j.dump(2) + "\n";
}

Table from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    Table t;
    t.meta = j.at("meta").get<std::map<std::string, std::string>>();
    t.header = j.at("header").get<std::vector<std::string>>();
    t.rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, fmt::format("malformed table document: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// Normalized comparisons

double clamp_bucket(double ratio) { return std::min(kBucketHigh, std::max(kBucketLow, ratio)); }

RatioCell normalize(std::string_view benchmark, std::string_view metric, std::span<const double> numerator,
                    std::span<const double> denominator) {
  if (numerator.empty() || denominator.empty()) bad(fmt::format("no values of '{}' for {}", metric, benchmark));
  const double den = stats::mean(denominator);
  if (den == 0.0) bad(fmt::format("zero baseline mean of '{}' for {}", metric, benchmark));
  RatioCell c;
  c.benchmark = benchmark;
  c.metric = metric;
  c.ratio = stats::mean(numerator) / den;
  c.bucket = clamp_bucket(c.ratio);
  return c;
}

NormalizedTable normalize(const ComparisonName& comparison, std::string_view metric,
                          std::span<const bench::RunSeries> numerators,
                          std::span<const bench::RunSeries> denominators) {
  NormalizedTable t;
  t.comparison = comparison;
  t.metric = metric;
  std::vector<double> ratios;
  for (const auto& n : numerators) {
    if (n.plan.config != comparison.numerator) continue;
    for (const auto& d : denominators) {
      if (d.plan.config != comparison.denominator || d.plan.benchmark != n.plan.benchmark) continue;
      t.cells.push_back(normalize(n.plan.benchmark, metric, n.measured_values(metric), d.measured_values(metric)));
      ratios.push_back(t.cells.back().ratio);
      break;
    }
  }
  if (ratios.empty()) bad(fmt::format("no benchmark has both sides of {}", render(comparison)));
  t.geomean = stats::geomean(ratios);
  return t;
}

std::string render_reduction(double geomean) {
  const double pct = std::round(std::abs(1.0 - geomean) * 1000.0) / 10.0;
  const std::string word = geomean <= 1.0 ? "reduction" : "increase";
  if (pct == std::floor(pct)) return fmt::format("≈{:.0f}% {}", pct, word);
  return fmt::format("≈{:.1f}% {}", pct, word);
}

Table normalized_csv_table(std::span<const NormalizedTable> tables) {
  Table t;
  t.header = {"comparison", "benchmark", "metric", "ratio", "bucket"};
  t.meta["bucket_range"] = fmt::format("[{};{}]", kBucketLow, kBucketHigh);
  t.meta["ratio"] = "mean(candidate)/mean(baseline)";
  for (const auto& nt : tables) {
    const auto name = render(nt.comparison);
    for (const auto& c : nt.cells) t.rows.push_back({name, c.benchmark, c.metric, num(c.ratio), num(c.bucket)});
    t.rows.push_back({name, "geomean", nt.metric, num(nt.geomean), num(clamp_bucket(nt.geomean))});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Maximum reduction

int MaxReductionTable::wins(std::string_view comparison) const {
  for (const auto& [c, n] : totals)
    if (c == comparison) return n;
  return 0;
}

MaxReductionTable max_reduction_table(std::span<const BenchmarkRatios> rows) {
  if (rows.empty()) bad("max reduction table needs at least one benchmark");
  MaxReductionTable t;
  std::vector<double> best;
  auto total_of = [&t](const std::string& c) -> int& {
    for (auto& [name, n] : t.totals)
      if (name == c) return n;
    t.totals.emplace_back(c, 0);
    return t.totals.back().second;
  };
  for (const auto& r : rows) {
    if (r.by_comparison.empty()) bad(fmt::format("benchmark {} has no comparisons", r.benchmark));
    MaxReductionRow row;
    row.benchmark = r.benchmark;
    row.best_ratio = r.by_comparison.front().second;
    for (const auto& [c, v] : r.by_comparison) {
      total_of(c);
      row.best_ratio = std::min(row.best_ratio, v);
    }
    for (const auto& [c, v] : r.by_comparison) {
      if (v == row.best_ratio) {
        row.winners.push_back(c);
        ++total_of(c);
      }
    }
    best.push_back(row.best_ratio);
    t.rows.push_back(std::move(row));
  }
  t.geomean = stats::geomean(best);
  return t;
}

std::vector<BenchmarkRatios> ratios_from_csv(std::string_view text) {
  const auto t = from_csv(text);
  if (t.header != std::vector<std::string>{"benchmark", "comparison", "ratio"})
    throw Error(ErrorKind::kParse, "ratio CSV header must be benchmark,comparison,ratio");
  std::vector<BenchmarkRatios> out;
  for (const auto& r : t.rows) {
    const auto v = detail::parse_double(r[2]);
    if (!v || !(*v > 0)) throw Error(ErrorKind::kParse, fmt::format("bad ratio '{}'", r[2]));
    auto it = std::find_if(out.begin(), out.end(), [&](const BenchmarkRatios& b) { return b.benchmark == r[0]; });
    if (it == out.end()) {
      out.push_back({r[0], {}});
      it = std::prev(out.end());
    }
    it->by_comparison.emplace_back(r[1], *v);
  }
  return out;
}

Table max_reduction_csv_table(const MaxReductionTable& t) {
  Table out;
  out.header = {"benchmark", "comparison", "best_ratio"};
  for (const auto& r : t.rows)
    for (const auto& w : r.winners) out.rows.push_back({r.benchmark, w, num(r.best_ratio)});
  out.meta["geomean"] = num(t.geomean);
  out.meta["reduction"] = render_reduction(t.geomean);
  out.meta["ties"] = "all winners kept";
  for (const auto& [c, n] : t.totals) out.meta["total " + c] = std::to_string(n);
  return out;
}

Table max_reduction_totals_table(const MaxReductionTable& t) {
  Table out;
  out.header = {"comparison", "wins"};
  for (const auto& [c, n] : t.totals) out.rows.push_back({c, std::to_string(n)});
  out.meta["benchmarks"] = std::to_string(t.rows.size());
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

CorrelationMatrix correlation_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& metrics) {
  CorrelationMatrix m;
  if (metrics.empty()) return m;
  const auto n = metrics.front().second.size();
  for (const auto& [name, v] : metrics) {
    if (v.size() != n) bad(fmt::format("metric '{}' has {} values, expected {}", name, v.size(), n));
  }
  if (n < 2) bad("correlation needs at least two observations");
  std::vector<const std::vector<double>*> kept;
  for (const auto& [name, v] : metrics) {
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) {
      m.excluded.push_back(name);
    } else {
      m.names.push_back(name);
      kept.push_back(&v);
    }
  }
  const auto k = kept.size();
  m.r.assign(k, std::vector<double>(k, 1.0));
  m.cls.assign(k, std::vector<stats::CorrelationClass>(k, stats::CorrelationClass::High));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double r = *stats::pearson(*kept[i], *kept[j]);
      m.r[i][j] = m.r[j][i] = r;
      m.cls[i][j] = m.cls[j][i] = stats::classify_corr(r);
    }
  }
  return m;
}

Table correlation_csv_table(const CorrelationMatrix& m) {
  Table t;
  t.header = {"metric_a", "metric_b", "r", "class"};
  for (std::size_t i = 0; i < m.names.size(); ++i)
    for (std::size_t j = 0; j < m.names.size(); ++j)
      t.rows.push_back({m.names[i], m.names[j], num(m.r[i][j]), stats::to_string(m.cls[i][j])});
  t.meta["bands"] = "high [0.8, 1]; moderate [0.6, 0.8)";
  std::string ex;
  for (const auto& e : m.excluded) ex += (ex.empty() ? "" : ";") + e;
  t.meta["excluded_constant"] = ex;
  return t;
}

// ---------------------------------------------------------------------------
// RSD

RsdRow rsd_row(std::string_view benchmark, std::string_view config, std::span<const double> values) {
  if (values.size() < 2) bad(fmt::format("RSD of {}/{} needs at least two values", benchmark, config));
  RsdRow r;
  r.benchmark = benchmark;
  r.config = config;
  r.rsd = stats::rsd(values);
  r.flagged = r.rsd > stats::kRsdFlagPercent;
  return r;
}

std::vector<RsdRow> rsd_table(std::span<const bench::RunSeries> series, std::string_view metric) {
  std::vector<RsdRow> rows;
  for (const auto& s : series) {
    std::vector<double> per_invocation;
    for (const auto& inv : s.invocations) {
      if (inv.failed) continue;
      std::vector<double> v;
      for (const auto& it : inv.measured(s.plan.measured_tail))
        if (auto x = bench::metric_value(it, metric)) v.push_back(*x);
      if (!v.empty()) per_invocation.push_back(stats::mean(v));
    }
    if (per_invocation.size() >= 2) rows.push_back(rsd_row(s.plan.benchmark, render(s.plan.config), per_invocation));
  }
  return rows;
}

Table rsd_csv_table(std::span<const RsdRow> rows) {
  Table t;
  t.header = {"benchmark", "config", "rsd", "flagged"};
  for (const auto& r : rows) t.rows.push_back({r.benchmark, r.config, num(r.rsd), r.flagged ? "true" : "false"});
  t.meta["flag_above_percent"] = num(stats::kRsdFlagPercent);
  return t;
}

// ---------------------------------------------------------------------------
// Latency

LatencySummary latency_summary(std::string_view config, std::span<const double> samples) {
  if (samples.empty()) bad(fmt::format("no latency samples for {}", config));
  LatencySummary s;
  s.config = config;
  s.box = stats::boxplot(samples);
  s.p999 = stats::percentile(samples, 99.9);
  return s;
}

Table latency_csv_table(std::span<const LatencySummary> rows) {
  Table t;
  t.header = {"config", "q1", "q3", "mean", "iqr", "p999", "outliers"};
  for (const auto& r : rows) {
    std::string out;
    for (double o : r.box.outliers) out += (out.empty() ? "" : ";") + num(o);
    t.rows.push_back({r.config, num(r.box.q1), num(r.box.q3), num(r.box.mean), num(r.box.iqr), num(r.p999), out});
  }
  t.meta["normalized"] = "false";
  t.meta["fences"] = "1.5 x IQR";
  t.meta["percentile_method"] = "linear interpolation between closest ranks";
  return t;
}

// ---------------------------------------------------------------------------
// Resource ratios

ResourceRatios resource_ratios(const PlacementSummary& config, const PlacementSummary& baseline) {
  if (!(baseline.heap_mb > 0) || !(baseline.avg_workers > 0) || !(baseline.avg_cycle_ms > 0))
    bad(fmt::format("baseline {} has a zero resource value", baseline.config));
  return ResourceRatios{config.config, baseline.config, config.heap_mb / baseline.heap_mb,
                        config.avg_workers / baseline.avg_workers, config.avg_cycle_ms / baseline.avg_cycle_ms};
}

PlacementSummary summarize_placement(const bench::RunSeries& series) {
  auto mean_of = [&](std::string_view m) {
    const auto v = series.measured_values(m);
    return v.empty() ? 0.0 : stats::mean(v);
  };
  return PlacementSummary{label(series), mean_of("heap_mb"), mean_of("avg_workers"), mean_of("avg_cycle_ms")};
}

Table resource_csv_table(std::span<const ResourceRatios> rows) {
  Table t;
  t.header = {"config", "baseline", "heap_ratio", "workers_ratio", "cycle_time_ratio"};
  for (const auto& r : rows)
    t.rows.push_back({r.config, r.baseline, num(r.heap_ratio), num(r.workers_ratio), num(r.cycle_time_ratio)});
  return t;
}

// ---------------------------------------------------------------------------
// Significance

Table comparison_csv_table(std::span<const ComparisonRow> rows) {
  Table t;
  t.header = {"comparison", "metric", "method", "p_value", "ci_low", "ci_high", "improvement", "significant"};
  for (const auto& r : rows) {
    const auto& c = r.result;
    t.rows.push_back({r.comparison, r.metric, stats::to_string(c.test.method), num(c.test.p_value), num(c.ci_low),
                      num(c.ci_high), stats::render_improvement(c.improvement, c.half_width),
                      c.significant ? "true" : "false"});
  }
  if (!rows.empty()) {
    t.meta["alpha"] = num(rows.front().result.alpha);
    t.meta["trim"] = num(rows.front().result.trim);
  }
  t.meta["scale"] = "1 - x/mean(baseline)";
  t.meta["test_selection"] = "Grubbs outlier in either sample selects Yuen, else Welch";
  return t;
}

// ---------------------------------------------------------------------------
// Whole-directory report

std::vector<ComparisonName> default_comparisons() {
  std::vector<ComparisonName> out;
  for (const char* c : {"2P/4P", "4E/4P", "6E/4P", "8E/4P", "6E/2P", "8E/2P"}) out.push_back(parse_comparison_name(c));
  return out;
}

std::vector<std::pair<std::string, std::string>> correlation_metrics() {
  return {{"Energy", "energy_pkg_j"},
          {"Exec. (t)", "exec_ms"},
          {"#GC", "gc_cycles"},
          {"#Minor", "gc_minor"},
          {"#Major", "gc_major"},
          {"Mark (t)", "mark_ms"},
          {"Relocate (t)", "relocate_ms"},
          {"GC time", "gc_time_ms"},
          {"Heap per GC worker", "heap_per_worker_mb"},
          {"Heap", "heap_mb"},
          {"GC workers", "avg_workers"},
          {"GC activity", "gc_activity"}};
}

std::vector<bench::RunSeries> load_series_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) bad(fmt::format("'{}' is not a directory", dir.string()));
  std::vector<fs::path> found;
  if (fs::exists(dir / "series.json")) found.push_back(dir);
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "series.json")) found.push_back(e.path());
  std::sort(found.begin(), found.end());
  std::vector<bench::RunSeries> out;
  for (const auto& p : found) out.push_back(bench::load_series(p));
  return out;
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::kConfig, fmt::format("cannot write '{}'", p.string()));
  f << text;
}

// Per-benchmark normalization of both samples, pooled across benchmarks.
std::optional<ComparisonRow> pooled_comparison(const ComparisonName& cmp, std::string_view metric,
                                               std::span<const bench::RunSeries> series, double alpha) {
  std::vector<double> cand, base;
  for (const auto& n : series) {
    if (n.plan.config != cmp.numerator) continue;
    for (const auto& d : series) {
      if (d.plan.config != cmp.denominator || d.plan.benchmark != n.plan.benchmark) continue;
      const auto nv = n.measured_values(metric);
      const auto dv = d.measured_values(metric);
      if (nv.empty() || dv.empty()) break;
      const double m = stats::mean(dv);
      for (double x : nv) cand.push_back(x / m);
      for (double x : dv) base.push_back(x / m);
      break;
    }
  }
  if (cand.size() < 2 || base.size() < 2) return std::nullopt;
  return ComparisonRow{render(cmp), std::string(metric), stats::compare(cand, base, alpha)};
}

}  // namespace

std::vector<std::string> write_report(std::span<const bench::RunSeries> series, const fs::path& out, double alpha) {
  if (series.empty()) bad("no series to report on");
  fs::create_directories(out);
  std::vector<std::string> written;
  auto emit = [&](const std::string& stem, Table t) {
    t.meta["generator"] = "ampgc report";
    write_text(out / (stem + ".csv"), to_csv(t));
    write_text(out / (stem + ".json"), to_json(t));
    written.push_back(stem);
  };

  const std::string energy = "energy_pkg_j";
  std::vector<NormalizedTable> normalized;
  std::vector<ComparisonRow> significance;
  std::map<std::string, BenchmarkRatios> energy_ratios;
  std::vector<std::string> bench_order;
  for (const auto& cmp : default_comparisons()) {
    for (const std::string& metric : {energy, std::string("exec_ms")}) {
      try {
        normalized.push_back(normalize(cmp, metric, series, series));
      } catch (const Error&) {
        continue;  // comparison not covered by these series
      }
      if (metric == energy) {
        for (const auto& c : normalized.back().cells) {
          auto [it, fresh] = energy_ratios.try_emplace(c.benchmark, BenchmarkRatios{c.benchmark, {}});
          if (fresh) bench_order.push_back(c.benchmark);
          it->second.by_comparison.emplace_back(render(cmp), c.ratio);
        }
      }
      if (auto row = pooled_comparison(cmp, metric, series, alpha)) significance.push_back(std::move(*row));
    }
  }
  if (!normalized.empty()) emit("normalized", normalized_csv_table(normalized));
  if (!significance.empty()) emit("significance", comparison_csv_table(significance));
  if (!energy_ratios.empty()) {
    std::vector<BenchmarkRatios> rows;
    for (const auto& b : bench_order) rows.push_back(energy_ratios.at(b));
    const auto mr = max_reduction_table(rows);
    emit("max_reduction", max_reduction_csv_table(mr));
    emit("max_reduction_totals", max_reduction_totals_table(mr));
  }

  // one observation per invocation: mean over its measured iterations
  std::vector<std::pair<std::string, std::vector<double>>> corr_inputs;
  for (const auto& [name, metric] : correlation_metrics()) corr_inputs.emplace_back(name, std::vector<double>{});
  for (const auto& s : series) {
    for (const auto& inv : s.invocations) {
      if (inv.failed) continue;
      std::vector<double> row;
      for (const auto& [name, metric] : correlation_metrics()) {
        std::vector<double> v;
        for (const auto& it : inv.measured(s.plan.measured_tail))
          if (auto x = bench::metric_value(it, metric)) v.push_back(*x);
        if (v.empty()) break;
        row.push_back(stats::mean(v));
      }
      if (row.size() != corr_inputs.size()) continue;
      for (std::size_t i = 0; i < row.size(); ++i) corr_inputs[i].second.push_back(row[i]);
    }
  }
  if (corr_inputs.front().second.size() >= 2) emit("correlation", correlation_csv_table(correlation_matrix(corr_inputs)));

  const auto rsd_rows = rsd_table(series, energy);
  emit("rsd", rsd_csv_table(rsd_rows));

  std::vector<LatencySummary> lat;
  for (const auto& s : series) {
    std::vector<double> samples;
    for (const auto& inv : s.invocations) {
      if (inv.failed) continue;
      for (const auto& it : inv.measured(s.plan.measured_tail))
        samples.insert(samples.end(), it.latency_samples.begin(), it.latency_samples.end());
    }
    if (!samples.empty()) lat.push_back(latency_summary(label(s), samples));
  }
  if (!lat.empty()) emit("latency", latency_csv_table(lat));

  std::vector<ResourceRatios> res;
  const auto baseline_cfg = parse_config_name("4P");
  for (const auto& b : series) {
    if (b.plan.config != baseline_cfg) continue;
    const auto base = summarize_placement(b);
    if (!(base.heap_mb > 0 && base.avg_workers > 0 && base.avg_cycle_ms > 0)) continue;
    for (const auto& s : series) {
      if (s.plan.benchmark != b.plan.benchmark || s.plan.config == baseline_cfg) continue;
      res.push_back(resource_ratios(summarize_placement(s), base));
    }
  }
  if (!res.empty()) emit("resources", resource_csv_table(res));
  return written;
}

}  // namespace ampgc::report
