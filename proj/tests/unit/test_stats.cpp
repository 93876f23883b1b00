#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "twophase/stats.hpp"

using namespace twophase;

TEST_CASE("pairwise sum matches long double accumulation") {
  std::vector<double> v;
  long double reference = 0.0L;
  double x = 0.1;
  for (int i = 0; i < 10001; ++i) {
    v.push_back(x);
    reference += x;
    x = std::fmod(x * 1.000001 + 1e-7, 1.0);
  }
  REQUIRE(std::abs(pairwise_sum(v) - static_cast<double>(reference)) < 1e-9);
  REQUIRE(std::abs(sorted_pairwise_sum(v) - static_cast<double>(reference)) < 1e-9);
}

TEST_CASE("sorted pairwise sum beats naive accumulation on masses") {
  // Masses spanning many magnitudes that sum to exactly 1.
  std::vector<double> v;
  double remaining = 1.0;
  for (int i = 0; i < 400; ++i) {
    const double m = remaining / 3.0;
    v.push_back(m);
    remaining -= m;
  }
  v.push_back(remaining);
  REQUIRE(std::abs(sorted_pairwise_sum(v) - 1.0) < 1e-14);
}

TEST_CASE("normal quantile inverts the normal cdf") {
  for (double p : {1e-9, 1e-4, 0.025, 0.2, 0.5, 0.8, 0.975, 1.0 - 1e-4}) {
    REQUIRE(std::abs(normal_cdf(normal_quantile(p)) - p) < 1e-12);
  }
  REQUIRE(std::abs(normal_quantile(0.975) - 1.959963984540054) < 1e-9);
  REQUIRE(normal_quantile(0.5) == 0.0);
  REQUIRE_THROWS_AS(normal_quantile(0.0), std::domain_error);
}

TEST_CASE("ks band reproduces the familiar 1% constant") {
  REQUIRE(std::abs(ks_band(5000, 0.01) * std::sqrt(5000.0) - 1.6276) < 1e-3);
  // DKW at alpha = 0.01, R = 1e5
  REQUIRE(std::abs(ks_band(100000, 0.01) - 0.0051475) < 1e-5);
}

TEST_CASE("ks distance on a hand-checked sample") {
  // Empirical CDF of {0.25, 0.75} against Uniform(0,1).
  auto uniform_cdf = [](double x) { return std::min(1.0, std::max(0.0, x)); };
  const double d = ks_distance({0.25, 0.75}, uniform_cdf);
  REQUIRE(std::abs(d - 0.25) < 1e-15);
}

TEST_CASE("sample stats on a known set") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = SampleStats::from(v);
  REQUIRE(s.mean == 2.5);
  REQUIRE(std::abs(s.variance - 5.0 / 3.0) < 1e-15);
  REQUIRE(std::abs(s.se_mean - std::sqrt(5.0 / 3.0 / 4.0)) < 1e-15);
}

TEST_CASE("correlation is exact on linear data and zero on orthogonal data") {
  std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 6, 8, 10}, c{1, -1, 1, -1, 0};
  REQUIRE(std::abs(correlation(a, b) - 1.0) < 1e-14);
  REQUIRE(std::abs(correlation(a, c)) < 0.5);
}

TEST_CASE("empirical quantile interpolates") {
  const std::vector<double> v{0.0, 1.0, 2.0, 3.0};
  REQUIRE(empirical_quantile(v, 0.0) == 0.0);
  REQUIRE(empirical_quantile(v, 1.0) == 3.0);
  REQUIRE(std::abs(empirical_quantile(v, 0.5) - 1.5) < 1e-15);
}

TEST_CASE("adaptive quadrature integrates a gaussian moment") {
  // E|Z|^3 for a standard normal is 2 sqrt(2/pi).
  auto f = [](double x) { return std::abs(x * x * x) * normal_pdf(x); };
  const double v = integrate(f, -14.0, 14.0, 1e-13);
  REQUIRE(std::abs(v - 2.0 * std::sqrt(2.0 / M_PI)) < 1e-9);
}
