#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ampgc::stats {

using Sample = std::span<const double>;

double mean(Sample a);
/// Unbiased (n-1) variance.
double sample_variance(Sample a);
double sample_stddev(Sample a);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// Upper tail P(T > t), computed without cancellation for large t.
double student_t_sf(double t, double df);
/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double df);
/// Inverse of student_t_sf: the t with upper-tail probability q.
double student_t_isf(double q, double df);

enum class TestMethod { Welch, Yuen };

const char* to_string(TestMethod m);

struct TestResult {
  double statistic = 0;
  double df = 1;
  double p_value = 1;
  TestMethod method = TestMethod::Welch;
  double estimate = 0;   // difference of (trimmed) means, a - b
  double std_error = 0;  // of the estimate
  std::optional<std::string> warning;
};

/// Two-sided Welch t-test of mean(a) - mean(b).
TestResult welch_t(Sample a, Sample b);

/// Two-sided Yuen trimmed-means test; `trim` is the proportion cut from each
/// tail. trim = 0 is Welch's test.
TestResult yuen_t(Sample a, Sample b, double trim = 0.2);

struct GrubbsResult {
  double statistic = 0;
  double critical = 0;
  std::optional<std::size_t> outlier;
};

/// Single-pass two-sided Grubbs test. Requires n >= 3.
GrubbsResult grubbs_test(Sample a, double alpha = 0.05);
inline std::optional<std::size_t> grubbs(Sample a, double alpha = 0.05) { return grubbs_test(a, alpha).outlier; }

struct ComparisonResult {
  TestResult test;
  double ci_low = 0;
  double ci_high = 0;
  double improvement = 0;
  double half_width = 0;
  bool significant = false;
  double alpha = 0.05;
  double trim = 0.2;
  bool outlier_in_candidate = false;
  bool outlier_in_baseline = false;
};

/// Compares a candidate against a baseline on the relative-improvement
/// scale 1 - x/mean(baseline). Either sample holding a Grubbs outlier
/// switches the test from Welch to Yuen.
ComparisonResult compare(Sample candidate, Sample baseline, double alpha = 0.05, double trim = 0.2);

/// Midpoint and half-width of a confidence interval.
struct Improvement {
  double value = 0;
  double half_width = 0;
};
Improvement improvement_from_ci(double ci_low, double ci_high);
/// "0.030±0.010": 4 decimals with trailing zeros dropped down to 3.
std::string render_improvement(double value, double half_width);

/// Pearson r; nullopt when either input is constant.
std::optional<double> pearson(Sample x, Sample y);

enum class CorrelationClass { High, Moderate, Low };
const char* to_string(CorrelationClass c);
/// |r| in [0.8, 1] High, [0.6, 0.8) Moderate, else Low.
CorrelationClass classify_corr(double r);

double geomean(Sample ratios);

/// Relative standard deviation in percent.
double rsd(Sample a);
inline constexpr double kRsdFlagPercent = 5.0;

/// Linear interpolation between closest ranks, p in [0, 100].
double percentile(Sample a, double p);

struct BoxplotStats {
  double q1 = 0;
  double q3 = 0;
  double mean = 0;
  double iqr = 0;
  double fence_low = 0;
  double fence_high = 0;
  double whisker_low = 0;
  double whisker_high = 0;
  std::vector<double> outliers;
};

BoxplotStats boxplot(Sample a);

}  // namespace ampgc::stats
