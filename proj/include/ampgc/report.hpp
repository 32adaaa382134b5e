#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ampgc/bench.hpp"
#include "ampgc/stats.hpp"
#include "ampgc/topology.hpp"

namespace ampgc::report {

/// A rectangular table of text cells plus metadata. All numbers are
/// rendered before they reach a table, so CSV and JSON carry the same text.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::map<std::string, std::string> meta;

  bool operator==(const Table&) const = default;
};

std::string to_csv(const Table& t);
/// Parses RFC 4180 style CSV; the first record is the header. Metadata is
/// not carried by CSV.
Table from_csv(std::string_view text);
std::string to_json(const Table& t);
Table from_json(std::string_view text);

/// Shortest text that parses back to the same double.
std::string num(double v);

// ---------------------------------------------------------------------------
// Normalized comparisons

inline constexpr double kBucketLow = 0.5;
inline constexpr double kBucketHigh = 2.0;

double clamp_bucket(double ratio);

struct RatioCell {
  std::string benchmark;
  std::string metric;
  double ratio = 1;
  double bucket = 1;
};

struct NormalizedTable {
  ComparisonName comparison;
  std::string metric;
  std::vector<RatioCell> cells;
  double geomean = 1;
};

/// mean(numerator) / mean(denominator). Throws Error(kConfig) when the
/// denominator mean is zero or either sample is empty.
RatioCell normalize(std::string_view benchmark, std::string_view metric, std::span<const double> numerator,
                    std::span<const double> denominator);

/// One cell per benchmark present in both sets, matched by benchmark name.
NormalizedTable normalize(const ComparisonName& comparison, std::string_view metric,
                          std::span<const bench::RunSeries> numerators, std::span<const bench::RunSeries> denominators);

/// "≈2% reduction" for a geomean of 0.98; "≈5.5% reduction" for 0.945.
std::string render_reduction(double geomean);

/// comparison,benchmark,metric,ratio,bucket. A trailing row with benchmark
/// "geomean" carries each table's footer.
Table normalized_csv_table(std::span<const NormalizedTable> tables);

// ---------------------------------------------------------------------------
// Maximum reduction

struct BenchmarkRatios {
  std::string benchmark;
  std::vector<std::pair<std::string, double>> by_comparison;  // rendered comparison name, ratio
};

struct MaxReductionRow {
  std::string benchmark;
  double best_ratio = 1;
  std::vector<std::string> winners;
};

struct MaxReductionTable {
  std::vector<MaxReductionRow> rows;
  std::vector<std::pair<std::string, int>> totals;  // in first-seen comparison order
  double geomean = 1;

  int wins(std::string_view comparison) const;
};

MaxReductionTable max_reduction_table(std::span<const BenchmarkRatios> rows);
/// Reads `benchmark,comparison,ratio` rows, keeping first-seen order.
std::vector<BenchmarkRatios> ratios_from_csv(std::string_view text);

/// benchmark,comparison,best_ratio with one row per winner; totals and the
/// geomean go to the metadata.
Table max_reduction_csv_table(const MaxReductionTable& t);
/// comparison,wins
Table max_reduction_totals_table(const MaxReductionTable& t);

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> r;
  std::vector<std::vector<stats::CorrelationClass>> cls;
  std::vector<std::string> excluded;  // constant metrics
};

CorrelationMatrix correlation_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& metrics);
/// metric_a,metric_b,r,class for every ordered pair.
Table correlation_csv_table(const CorrelationMatrix& m);

// ---------------------------------------------------------------------------
// RSD

struct RsdRow {
  std::string benchmark;
  std::string config;
  double rsd = 0;
  bool flagged = false;
};

RsdRow rsd_row(std::string_view benchmark, std::string_view config, std::span<const double> values);
/// Per series: RSD of the per-invocation means of `metric`.
std::vector<RsdRow> rsd_table(std::span<const bench::RunSeries> series, std::string_view metric);
Table rsd_csv_table(std::span<const RsdRow> rows);

// ---------------------------------------------------------------------------
// Latency

struct LatencySummary {
  std::string config;
  stats::BoxplotStats box;
  double p999 = 0;
};

LatencySummary latency_summary(std::string_view config, std::span<const double> samples);
/// config,q1,q3,mean,iqr,p999,outliers with outliers joined by ';'.
Table latency_csv_table(std::span<const LatencySummary> rows);

// ---------------------------------------------------------------------------
// Memory / workers / cycle time against a baseline placement

struct PlacementSummary {
  std::string config;
  double heap_mb = 0;
  double avg_workers = 0;
  double avg_cycle_ms = 0;
};

struct ResourceRatios {
  std::string config;
  std::string baseline;
  double heap_ratio = 1;
  double workers_ratio = 1;
  double cycle_time_ratio = 1;
};

ResourceRatios resource_ratios(const PlacementSummary& config, const PlacementSummary& baseline);
/// Means over the measured iterations of one series.
PlacementSummary summarize_placement(const bench::RunSeries& series);
Table resource_csv_table(std::span<const ResourceRatios> rows);

// ---------------------------------------------------------------------------
// Significance table

struct ComparisonRow {
  std::string comparison;
  std::string metric;
  stats::ComparisonResult result;
};

/// comparison,metric,method,p_value,ci_low,ci_high,improvement,significant
Table comparison_csv_table(std::span<const ComparisonRow> rows);

// ---------------------------------------------------------------------------
// Whole-directory report

/// The six comparisons evaluated by default.
std::vector<ComparisonName> default_comparisons();

/// Loads every series below `dir` (each subdirectory holding a series.json).
std::vector<bench::RunSeries> load_series_dir(const std::filesystem::path& dir);

/// Writes every table as CSV and JSON into `out`. Returns the written stems.
std::vector<std::string> write_report(std::span<const bench::RunSeries> series, const std::filesystem::path& out,
                                      double alpha = 0.05);

/// Names used for correlation inputs, in report order, mapped to series metrics.
std::vector<std::pair<std::string, std::string>> correlation_metrics();

}  // namespace ampgc::report
