#include "ampgc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/core.h>

#include "ampgc/error.hpp"

namespace ampgc::stats {

namespace {

[[noreturn]] void bad_input(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }

void require_finite(Sample a) {
  for (double v : a)
    if (!std::isfinite(v)) bad_input("sample contains a non-finite value");
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

struct Moments {
  double mean;
  double var;
  double n;
};

Moments moments(Sample a) {
  return Moments{mean(a), sample_variance(a), static_cast<double>(a.size())};
}

// Shared tail of Welch and Yuen: estimate, squared standard errors, dfs.
TestResult two_sample_t(double estimate, double da, double db, double dfa, double dfb, TestMethod method) {
  TestResult r;
  r.method = method;
  r.estimate = estimate;
  const double se2 = da + db;
  r.std_error = std::sqrt(se2);
  if (se2 == 0.0) {
    r.df = dfa + dfb;
    if (estimate == 0.0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = estimate > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.warning = "both samples have zero variance but different centers";
    }
    return r;
  }
  r.statistic = estimate / r.std_error;
  r.df = se2 * se2 / (da * da / dfa + db * db / dfb);
  r.p_value = std::clamp(2.0 * student_t_sf(std::fabs(r.statistic), r.df), 0.0, 1.0);
  return r;
}

}  // namespace

double mean(Sample a) {
  if (a.empty()) bad_input("mean of an empty sample");
  return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
}

double sample_variance(Sample a) {
  if (a.size() < 2) bad_input("variance needs at least two values");
  const double m = mean(a);
  double ss = 0.0;
  for (double v : a) ss += (v - m) * (v - m);
  return ss / static_cast<double>(a.size() - 1);
}

double sample_stddev(Sample a) { return std::sqrt(sample_variance(a)); }

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) bad_input("incomplete beta needs positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, double df) {
  if (!(df > 0)) bad_input("Student-t needs positive degrees of freedom");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
  return t > 0 ? tail : 1.0 - tail;
}

double student_t_cdf(double t, double df) {
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  if (t > 0) return 1.0 - student_t_sf(t, df);
  return student_t_sf(-t, df);
}

double student_t_isf(double q, double df) {
  if (!(q > 0.0 && q < 1.0)) bad_input("tail probability must lie in (0, 1)");
  if (!(df > 0)) bad_input("Student-t needs positive degrees of freedom");
  if (q == 0.5) return 0.0;
  if (q > 0.5) return -student_t_isf(1.0 - q, df);
  double lo = 0.0;
  double hi = 1.0;
  while (student_t_sf(hi, df) > q) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) break;
  }
  for (int i = 0; i < 400 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_sf(mid, df) > q) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) bad_input("quantile probability must lie in (0, 1)");
  return p > 0.5 ? student_t_isf(1.0 - p, df) : -student_t_isf(p, df);
}

const char* to_string(TestMethod m) { return m == TestMethod::Welch ? "welch" : "yuen"; }

TestResult welch_t(Sample a, Sample b) {
  if (a.size() < 2 || b.size() < 2) bad_input("Welch's test needs at least two values per sample");
  require_finite(a);
  require_finite(b);
  const auto ma = moments(a);
  const auto mb = moments(b);
  return two_sample_t(ma.mean - mb.mean, ma.var / ma.n, mb.var / mb.n, ma.n - 1, mb.n - 1, TestMethod::Welch);
}

namespace {

struct Trimmed {
  double mean;
  double d;  // squared standard error contribution
  double h;  // effective size
};

Trimmed trimmed_stats(Sample a, double trim) {
  std::vector<double> s(a.begin(), a.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const auto g = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  if (n < 2 * g + 2) bad_input(fmt::format("trimming {} of {} values leaves fewer than two", 2 * g, n));
  const std::size_t h = n - 2 * g;
  const double tmean = std::accumulate(s.begin() + g, s.end() - g, 0.0) / static_cast<double>(h);
  for (std::size_t i = 0; i < g; ++i) {
    s[i] = s[g];
    s[n - 1 - i] = s[n - 1 - g];
  }
  const double wvar = sample_variance(s);
  const double d = static_cast<double>(n - 1) * wvar / (static_cast<double>(h) * static_cast<double>(h - 1));
  return Trimmed{tmean, d, static_cast<double>(h)};
}

}  // namespace

TestResult yuen_t(Sample a, Sample b, double trim) {
  if (!(trim >= 0.0 && trim <= 0.25)) bad_input("trim proportion must lie in [0, 0.25]");
  if (a.size() < 2 || b.size() < 2) bad_input("Yuen's test needs at least two values per sample");
  require_finite(a);
  require_finite(b);
  const auto ta = trimmed_stats(a, trim);
  const auto tb = trimmed_stats(b, trim);
  return two_sample_t(ta.mean - tb.mean, ta.d, tb.d, ta.h - 1, tb.h - 1, TestMethod::Yuen);
}

GrubbsResult grubbs_test(Sample a, double alpha) {
  if (a.size() < 3) bad_input("Grubbs' test needs at least three values");
  if (!(alpha > 0 && alpha < 1)) bad_input("alpha must lie in (0, 1)");
  require_finite(a);
  const double n = static_cast<double>(a.size());
  const double m = mean(a);
  const double s = sample_stddev(a);
  GrubbsResult r;
  const double t = student_t_isf(alpha / (2.0 * n), n - 2.0);
  r.critical = (n - 1.0) / std::sqrt(n) * std::sqrt(t * t / (n - 2.0 + t * t));
  if (s == 0.0) return r;
  std::size_t idx = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dev = std::fabs(a[i] - m);
    if (dev > best) {
      best = dev;
      idx = i;
    }
  }
  r.statistic = best / s;
  if (r.statistic > r.critical) r.outlier = idx;
  return r;
}

ComparisonResult compare(Sample candidate, Sample baseline, double alpha, double trim) {
  if (!(alpha > 0 && alpha < 1)) bad_input("alpha must lie in (0, 1)");
  const double base = mean(baseline);
  if (base == 0.0) bad_input("baseline mean is zero; relative improvement undefined");
  std::vector<double> a;
  std::vector<double> b;
  for (double v : candidate) a.push_back(1.0 - v / base);
  for (double v : baseline) b.push_back(1.0 - v / base);

  ComparisonResult r;
  r.alpha = alpha;
  r.trim = trim;
  if (a.size() >= 3) r.outlier_in_candidate = grubbs(a, alpha).has_value();
  if (b.size() >= 3) r.outlier_in_baseline = grubbs(b, alpha).has_value();
  r.test = (r.outlier_in_candidate || r.outlier_in_baseline) ? yuen_t(a, b, trim) : welch_t(a, b);

  const double q = r.test.std_error > 0 ? student_t_isf(alpha / 2.0, r.test.df) : 0.0;
  r.ci_low = r.test.estimate - q * r.test.std_error;
  r.ci_high = r.test.estimate + q * r.test.std_error;
  const auto imp = improvement_from_ci(r.ci_low, r.ci_high);
  r.improvement = imp.value;
  r.half_width = imp.half_width;
  r.significant = r.test.p_value < alpha;
  return r;
}

Improvement improvement_from_ci(double ci_low, double ci_high) {
  if (ci_high < ci_low) bad_input("confidence interval bounds are reversed");
  return Improvement{(ci_low + ci_high) / 2.0, (ci_high - ci_low) / 2.0};
}

namespace {

std::string render_decimal(double v) {
  std::string s = fmt::format("{:.4f}", v);
  // keep at least three decimals
  while (s.size() > 1 && s.back() == '0' && s.size() - s.find('.') > 4) s.pop_back();
  if (s == "-0.000") s = "0.000";
  return s;
}

}  // namespace

std::string render_improvement(double value, double half_width) {
  return render_decimal(value) + "±" + render_decimal(half_width);
}

std::optional<double> pearson(Sample x, Sample y) {
  if (x.size() != y.size()) bad_input("pearson inputs differ in length");
  if (x.size() < 2) bad_input("pearson needs at least two points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

const char* to_string(CorrelationClass c) {
  switch (c) {
    case CorrelationClass::High: return "high";
    case CorrelationClass::Moderate: return "moderate";
    case CorrelationClass::Low: return "low";
  }
  return "low";
}

CorrelationClass classify_corr(double r) {
  const double a = std::fabs(r);
  if (a >= 0.8) return CorrelationClass::High;
  if (a >= 0.6) return CorrelationClass::Moderate;
  return CorrelationClass::Low;
}

double geomean(Sample ratios) {
  if (ratios.empty()) bad_input("geomean of an empty list");
  double log_sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0)) bad_input(fmt::format("geomean needs positive ratios, got {}", r));
    log_sum += std::log(r);
  }
  return std::exp(log_sum / static_cast<double>(ratios.size()));
}

double rsd(Sample a) {
  const double m = mean(a);
  if (m == 0.0) bad_input("RSD undefined for zero mean");
  return 100.0 * sample_stddev(a) / m;
}

double percentile(Sample a, double p) {
  if (a.empty()) bad_input("percentile of an empty sample");
  if (!(p >= 0.0 && p <= 100.0)) bad_input("percentile must lie in [0, 100]");
  std::vector<double> s(a.begin(), a.end());
  std::sort(s.begin(), s.end());
  const double h = (static_cast<double>(s.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

BoxplotStats boxplot(Sample a) {
  BoxplotStats b;
  b.q1 = percentile(a, 25.0);
  b.q3 = percentile(a, 75.0);
  b.mean = mean(a);
  b.iqr = b.q3 - b.q1;
  b.fence_low = b.q1 - 1.5 * b.iqr;
  b.fence_high = b.q3 + 1.5 * b.iqr;
  b.whisker_low = std::numeric_limits<double>::infinity();
  b.whisker_high = -std::numeric_limits<double>::infinity();
  for (double v : a) {
    if (v < b.fence_low || v > b.fence_high) {
      b.outliers.push_back(v);
    } else {
      b.whisker_low = std::min(b.whisker_low, v);
      b.whisker_high = std::max(b.whisker_high, v);
    }
  }
  return b;
}

}  // namespace ampgc::stats
