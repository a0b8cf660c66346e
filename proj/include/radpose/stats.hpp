#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace radpose::stats {

/// Inverse of the standard normal CDF. Rational approximation refined by one
/// Halley step against std::erfc; absolute error well below 1e-12 on (0, 1).
double normal_quantile(double p);

/// A labelled set of scalar errors (mm or degrees).
struct ErrorSample {
  std::vector<double> values;
  std::map<std::string, std::string> labels;  // eta, size, anatomy, ...
};

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator
  double median = 0.0;
  double q05 = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double q95 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Quantile by linear interpolation between order statistics, h = (n - 1) p.
double quantile_sorted(std::span<const double> sorted, double p);

Summary summarize(std::span<const double> values);

struct QQPoint {
  double theoretical;
  double empirical;
};

struct QQResult {
  std::vector<QQPoint> points;  // ascending in theoretical quantile
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  /// Fraction of all points with |z| <= k whose residual from the fitted
  /// line is at most kBandTolerance * slope, for k = 1 and k = 1.5.
  double within_1sigma = 0.0;
  double within_15sigma = 0.0;
};

/// Residual tolerance of the Q-Q fit band, in units of the fitted sigma.
constexpr double kBandTolerance = 0.15;

/// Normal Q-Q analysis with plotting positions (i - 0.5) / n.
QQResult qq_normal(std::span<const double> values);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;  // 0 by convention when y has zero variance
};

LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

/// Sample standard deviation (n - 1).
double stddev(std::span<const double> values);

void write_summary_header(std::ostream& os, const std::vector<std::string>& label_keys);
void write_summary_row(std::ostream& os, const std::vector<std::string>& label_keys,
                       const ErrorSample& sample, const std::string& metric);
void write_qq_csv(std::ostream& os, const QQResult& qq);

/// Formats a double for CSV output; round-trips exactly.
std::string format_number(double v);

}  // namespace radpose::stats
