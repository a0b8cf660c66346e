#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "radpose/error.hpp"
#include "radpose/random.hpp"
#include "radpose/stats.hpp"

namespace radpose::stats {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

TEST(NormalQuantile, InvertsErfcBasedCdf) {
  for (double p : {1e-12, 1e-6, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-9}) {
    const double z = normal_quantile(p);
    EXPECT_NEAR(normal_cdf(z), p, 1e-13 + 1e-12 * p) << p;
  }
  EXPECT_DOUBLE_EQ(normal_quantile(0.5), 0.0);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(0.8413447460685429), 1.0, 1e-12);
}

TEST(NormalQuantile, IsAntisymmetric) {
  for (double p = 0.01; p < 0.5; p += 0.01) EXPECT_NEAR(normal_quantile(p), -normal_quantile(1 - p), 1e-12);
}

TEST(Quantile, InterpolatesOrderStatistics) {
  const std::vector<double> v{1, 2, 4, 8, 16};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.0), 1);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 1.0), 16);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 4);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 2);      // h = 1
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.375), 3);     // h = 1.5
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.9), 12.8);    // h = 3.6
}

TEST(Summarize, HandComputedValues) {
  const std::vector<double> v{4, 1, 3, 2};
  const Summary s = summarize(v);
  EXPECT_EQ(s.n, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.max, 4);
  EXPECT_DOUBLE_EQ(s.q25, 1.75);
  EXPECT_THROW(summarize(std::vector<double>{}), Error);
}

TEST(LinearFit, RecoversExactLine) {
  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i);
    y.push_back(3.0 - 0.5 * i);
  }
  const auto f = linear_fit(x, y);
  EXPECT_NEAR(f.slope, -0.5, 1e-14);
  EXPECT_NEAR(f.intercept, 3.0, 1e-13);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
}

TEST(LinearFit, HandComputedNoisyCase) {
  // x = 0..3, y = 1, 3, 2, 5: Sxx = 5, Sxy = 5.5, slope 1.1, intercept 1.1.
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 2, 5};
  const auto f = linear_fit(x, y);
  EXPECT_NEAR(f.slope, 1.1, 1e-14);
  EXPECT_NEAR(f.intercept, 1.1, 1e-13);
  // SSres = 2.7, SStot = 8.75
  EXPECT_NEAR(f.r2, 1.0 - 2.7 / 8.75, 1e-13);
}

TEST(LinearFit, ConstantYHasZeroR2) {
  const std::vector<double> x{0, 1, 2}, y{4, 4, 4};
  const auto f = linear_fit(x, y);
  EXPECT_DOUBLE_EQ(f.slope, 0.0);
  EXPECT_DOUBLE_EQ(f.r2, 0.0);
}

TEST(Spearman, PerfectAndReversedAndTies) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{10, 20, 25, 100, 1000}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  // Ranks with ties: y -> 1.5, 1.5, 3, 4, 5; Pearson of ranks by hand.
  const double r = spearman(x, std::vector<double>{1, 1, 2, 3, 4});
  const double rx[] = {1, 2, 3, 4, 5}, ry[] = {1.5, 1.5, 3, 4, 5};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - 3) * (ry[i] - 3);
    sxx += (rx[i] - 3) * (rx[i] - 3);
    syy += (ry[i] - 3) * (ry[i] - 3);
  }
  EXPECT_NEAR(r, sxy / std::sqrt(sxx * syy), 1e-14);
}

TEST(QQ, GaussianSampleLiesOnLineWithSigmaSlope) {
  Rng rng(9);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(rng.normal(1.0, 2.5));
  const auto qq = qq_normal(v);
  EXPECT_NEAR(qq.slope, 2.5, 0.05);
  EXPECT_NEAR(qq.intercept, 1.0, 0.1);
  EXPECT_GT(qq.r2, 0.998);
  EXPECT_NEAR(qq.within_1sigma, 0.6827, 0.02);
  EXPECT_NEAR(qq.within_15sigma, 0.8664, 0.02);
  EXPECT_TRUE(std::is_sorted(qq.points.begin(), qq.points.end(),
                             [](auto a, auto b) { return a.theoretical < b.theoretical; }));
}

TEST(QQ, HeavyTailedSampleFallsOutsideBand) {
  Rng rng(10);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(rng.normal() / std::max(0.05, rng.uniform()));
  const auto qq = qq_normal(v);
  EXPECT_LT(qq.within_15sigma, 0.5);
}

TEST(QQ, RequiresTwentySamples) {
  EXPECT_THROW(qq_normal(std::vector<double>(19, 1.0)), Error);
}

TEST(FormatNumber, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 123.0}) EXPECT_EQ(std::stod(format_number(v)), v);
  EXPECT_EQ(format_number(2.0), "2");
}

TEST(SummaryCsv, WritesLabelsAndMetric) {
  ErrorSample s;
  s.values = {1, 2, 3};
  s.labels = {{"eta", "2"}};
  std::ostringstream os;
  write_summary_header(os, {"eta"});
  write_summary_row(os, {"eta"}, s, "position_mm");
  const std::string out = os.str();
  EXPECT_NE(out.find("eta,"), std::string::npos);
  EXPECT_NE(out.find("\n2,position_mm,3,"), std::string::npos) << out;
}

}  // namespace
}  // namespace radpose::stats
