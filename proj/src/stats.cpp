#include "radpose/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "radpose/error.hpp"

namespace radpose::stats {

namespace {

// Acklam's coefficients.
constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                        1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                        6.680131188771972e+01,  -1.328068155288572e+01};
constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                        -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                        3.754408661907416e+00};

double acklam(double p) {
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  double x = acklam(p);
  // One Halley step on Phi(x) - p.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::TooFewSamples, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double stddev(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::TooFewSamples, "need at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

Summary summarize(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::TooFewSamples, "summarize needs n >= 2");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  Summary s;
  s.n = sorted.size();
  // Sum in sorted order so the result does not depend on input order.
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  s.median = quantile_sorted(sorted, 0.5);
  s.q05 = quantile_sorted(sorted, 0.05);
  s.q25 = quantile_sorted(sorted, 0.25);
  s.q75 = quantile_sorted(sorted, 0.75);
  s.q95 = quantile_sorted(sorted, 0.95);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::DegenerateX, "x and y differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorCode::DegenerateX, "need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw Error(ErrorCode::DegenerateX, "x values are all identical");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (syy <= 0.0) {
    f.slope = 0.0;
    f.r2 = 0.0;
    return f;
  }
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += r * r;
  }
  f.r2 = 1.0 - ss_res / syy;
  return f;
}

QQResult qq_normal(std::span<const double> values) {
  if (values.size() < 20) throw Error(ErrorCode::TooFewSamples, "qq_normal needs n >= 20");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  QQResult qq;
  qq.points.reserve(sorted.size());
  std::vector<double> z(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    z[i] = normal_quantile((static_cast<double>(i) + 0.5) / n);
    qq.points.push_back({z[i], sorted[i]});
  }
  const LinearFit fit = linear_fit(z, sorted);
  qq.slope = fit.slope;
  qq.intercept = fit.intercept;
  qq.r2 = fit.r2;
  const double tol = kBandTolerance * std::abs(qq.slope);
  std::size_t in1 = 0, in15 = 0;
  for (const auto& pt : qq.points) {
    const double residual = std::abs(pt.empirical - (qq.intercept + qq.slope * pt.theoretical));
    if (residual > tol) continue;
    if (std::abs(pt.theoretical) <= 1.0) ++in1;
    if (std::abs(pt.theoretical) <= 1.5) ++in15;
  }
  qq.within_1sigma = static_cast<double>(in1) / n;
  qq.within_15sigma = static_cast<double>(in15) / n;
  return qq;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error(ErrorCode::TooFewSamples, "spearman needs two equal-length samples, n >= 2");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string format_number(double v) { return fmt::format("{:.17g}", v); }

void write_summary_header(std::ostream& os, const std::vector<std::string>& label_keys) {
  for (const auto& k : label_keys) os << k << ',';
  os << "metric,n,mean,std,median,q05,q25,q75,q95,min,max\n";
}

void write_summary_row(std::ostream& os, const std::vector<std::string>& label_keys,
                       const ErrorSample& sample, const std::string& metric) {
  const Summary s = summarize(sample.values);
  for (const auto& k : label_keys) {
    auto it = sample.labels.find(k);
    os << (it == sample.labels.end() ? "" : it->second) << ',';
  }
  os << metric << ',' << s.n;
  for (double v : {s.mean, s.std, s.median, s.q05, s.q25, s.q75, s.q95, s.min, s.max})
    os << ',' << format_number(v);
  os << '\n';
}

void write_qq_csv(std::ostream& os, const QQResult& qq) {
  os << "theoretical,empirical,fitted\n";
  for (const auto& p : qq.points)
    os << format_number(p.theoretical) << ',' << format_number(p.empirical) << ','
       << format_number(qq.intercept + qq.slope * p.theoretical) << '\n';
}

}  // namespace radpose::stats
