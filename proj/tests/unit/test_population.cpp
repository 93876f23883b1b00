#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "twophase/population.hpp"
#include "twophase/stats.hpp"

using namespace twophase;

namespace {

ModelSpec bernoulli_pair_model(double q) {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 2;
  s.y = {Family::bernoulli(q)};
  m.strata.push_back(s);
  return m;
}

}  // namespace

TEST_CASE("point-mass model realizes a constant population") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 5;
  s.sizes = ClusterSizeLaw::cycle({1, 2, 3});
  s.y = {Family::point_mass(2.5)};
  m.strata.push_back(s);
  const auto pop = realize_population(m, Seed{1, 0});
  for (int i = 0; i < pop.clusters_in(0); ++i) {
    const auto& c = pop.cluster(0, i);
    for (int j = 0; j < c.size(); ++j) REQUIRE(c.y(j, 0) == 2.5);
    REQUIRE(c.total(0) == 2.5 * c.size());
  }
}

TEST_CASE("realization is a pure function of (model, seed)") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 20;
  s.sizes = ClusterSizeLaw::uniform(1, 4);
  s.y = {Family::normal(0.0, 1.0)};
  s.x = {Family::gamma(2.0, 1.0)};
  m.strata.push_back(s);
  const auto a = realize_population(m, Seed{99, 3});
  const auto b = realize_population(m, Seed{99, 3});
  REQUIRE(a.total_units() == b.total_units());
  for (int i = 0; i < a.clusters_in(0); ++i) {
    REQUIRE(a.cluster(0, i).size() == b.cluster(0, i).size());
    REQUIRE(a.cluster(0, i).y == b.cluster(0, i).y);
    REQUIRE(a.cluster(0, i).x == b.cluster(0, i).x);
  }
  const auto c = realize_population(m, Seed{99, 4});
  bool any_differ = false;
  for (int i = 0; i < std::min(a.clusters_in(0), c.clusters_in(0)); ++i)
    any_differ = any_differ || a.cluster(0, i).y(0, 0) != c.cluster(0, i).y(0, 0);
  REQUIRE(any_differ);
}

TEST_CASE("two-unit bernoulli population hits the (1,0) outcome at rate 1/4") {
  const ModelSpec m = bernoulli_pair_model(0.5);
  const int r = 1000000;
  int hits = 0;
  for (int rep = 0; rep < r; ++rep) {
    const auto pop = realize_population(m, Seed{2024, static_cast<std::uint64_t>(rep)});
    if (pop.cluster(0, 0).y(0, 0) == 1.0 && pop.cluster(0, 1).y(0, 0) == 0.0) ++hits;
  }
  const double freq = hits / static_cast<double>(r);
  REQUIRE(std::abs(freq - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / r));
}

TEST_CASE("stratum weights sum to one and totals match unit sums") {
  const auto pop = test_helpers::clustered({{{1.0, 2.0}, {3.0}}, {{4.0, 5.0, 6.0}}});
  double w = 0.0;
  for (int h = 0; h < pop.strata_count(); ++h) w += pop.stratum_weight(h);
  REQUIRE(std::abs(w - 1.0) <= 1e-12);
  REQUIRE(pop.cluster(0, 0).total(0) == 3.0);
  REQUIRE(pop.cluster(1, 0).total(0) == 15.0);
  REQUIRE(pop.total_clusters() == 3);
  REQUIRE(pop.total_units() == 6.0);
}

TEST_CASE("model moments: bernoulli, normal, gamma, pareto, affine") {
  REQUIRE(Family::bernoulli(0.5).mean() == 0.5);
  REQUIRE(Family::bernoulli(0.5).variance() == 0.25);
  REQUIRE(Family::normal(1.0, 4.0).mean() == 1.0);
  REQUIRE(Family::normal(1.0, 4.0).variance() == 4.0);
  REQUIRE(Family::gamma(2.0, 3.0).mean() == 6.0);
  REQUIRE(Family::gamma(2.0, 3.0).variance() == 18.0);
  const Family centered = Family::bernoulli(0.5).with_affine(-0.5, 1.0);
  REQUIRE(centered.mean() == 0.0);
  REQUIRE(centered.variance() == 0.25);
  const Family par = Family::pareto(3.0, 1.0);
  REQUIRE(std::abs(par.mean() - 1.5) < 1e-15);
  REQUIRE_THROWS_AS(Family::pareto(1.5, 1.0).variance(), UnsupportedError);
}

TEST_CASE("two equal strata with means 0 and 2 average to 1") {
  ModelSpec m;
  for (double mu : {0.0, 2.0}) {
    StratumModel s;
    s.n_clusters = 10;
    s.y = {Family::normal(mu, 1.0)};
    m.strata.push_back(s);
  }
  const auto mom = model_moments(m);
  REQUIRE(std::abs(mom.mu_n(0) - 1.0) < 1e-15);
  REQUIRE(std::abs(mom.theta_n(0) - 1.0) < 1e-15);
}

TEST_CASE("hierarchy moments expose within and between components") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 4;
  s.sizes = ClusterSizeLaw::all_equal(3);
  s.hierarchy = TwoStageHierarchy{Family::normal(1.0, 0.5), Family::point_mass(0.25)};
  m.strata.push_back(s);
  const auto mom = model_moments(m);
  REQUIRE(mom.strata[0].mu(0) == 1.0);
  REQUIRE(mom.strata[0].gamma_between == 0.5);
  REQUIRE(mom.strata[0].sigma2_within == 0.25);
  REQUIRE(mom.strata[0].var(0) == 0.75);
  REQUIRE(mom.theta_n(0) == 1.0);
}

TEST_CASE("empirical moments converge to model moments") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 1;
  s.y = {Family::gamma(2.0, 1.5)};
  m.strata.push_back(s);
  const std::size_t r = 100000;
  std::vector<double> values(r);
  for (std::size_t rep = 0; rep < r; ++rep)
    values[rep] = realize_population(m, Seed{7, rep}).cluster(0, 0).y(0, 0);
  const auto st = SampleStats::from(values);
  REQUIRE(std::abs(st.mean - 3.0) < 4.0 * st.se_mean);
  REQUIRE(std::abs(st.variance - 4.5) < 4.0 * st.se_variance);
}

TEST_CASE("liapunov statistic: constants, plug-in arithmetic, closed forms") {
  // All cluster totals equal to 1.
  const auto ones = test_helpers::one_stage({{1.0, 1.0, 1.0}});
  REQUIRE(liapunov_m1(ones, 1.0) == 1.0);

  // Values {1, 2}: (1 + 8) / 2.
  const auto pair = test_helpers::one_stage({{1.0, 2.0}});
  REQUIRE(std::abs(liapunov_m1(pair, 1.0) - 4.5) < 1e-15);

  // Bernoulli(1/2) third absolute moment is 1/2.
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 3;
  s.y = {Family::bernoulli(0.5)};
  m.strata.push_back(s);
  REQUIRE(std::abs(liapunov_m1(m, 1.0) - 0.5) < 1e-12);

  // Point mass at c: |c|^(2+delta) exactly.
  ModelSpec pm;
  StratumModel s2;
  s2.n_clusters = 2;
  s2.y = {Family::point_mass(-1.5)};
  pm.strata.push_back(s2);
  REQUIRE(std::abs(liapunov_m1(pm, 0.5) - std::pow(1.5, 2.5)) < 1e-12);
}

TEST_CASE("liapunov model form via quadrature matches the normal closed form") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 1;
  s.y = {Family::normal(0.0, 4.0)};
  m.strata.push_back(s);
  // E|Y|^3 = sigma^3 * 2 sqrt(2/pi)
  REQUIRE(std::abs(liapunov_m1(m, 1.0) - 8.0 * 2.0 * std::sqrt(2.0 / M_PI)) < 1e-8);
}

TEST_CASE("hierarchy realization matches its configured moments") {
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 50;
  s.sizes = ClusterSizeLaw::all_equal(4);
  s.hierarchy = TwoStageHierarchy{Family::normal(2.0, 1.0), Family::gamma(2.0, 0.5)};
  m.strata.push_back(s);
  const std::size_t r = 4000;
  std::vector<double> unit_means(r), cluster_mean_vars(r);
  for (std::size_t rep = 0; rep < r; ++rep) {
    const auto pop = realize_population(m, Seed{77, rep});
    double total = 0.0;
    std::vector<double> cmeans;
    for (int i = 0; i < pop.clusters_in(0); ++i) {
      total += pop.cluster(0, i).total(0);
      cmeans.push_back(pop.cluster(0, i).mean()(0));
    }
    unit_means[rep] = total / pop.total_units();
    cluster_mean_vars[rep] = SampleStats::from(cmeans).variance;
  }
  const auto mu_stats = SampleStats::from(unit_means);
  REQUIRE(std::abs(mu_stats.mean - 2.0) < 4.0 * mu_stats.se_mean);
  // Var(cluster mean) = gamma + E sigma^2 / M = 1 + 1/4.
  const auto var_stats = SampleStats::from(cluster_mean_vars);
  REQUIRE(std::abs(var_stats.mean - 1.25) < 4.0 * var_stats.se_mean);
}

TEST_CASE("invalid models are rejected") {
  ModelSpec empty;
  REQUIRE_THROWS_AS(empty.validate(), ConfigError);

  ModelSpec neg;
  StratumModel s;
  s.n_clusters = 1;
  s.y = {Family::normal(0.0, -1.0)};
  neg.strata.push_back(s);
  REQUIRE_THROWS_AS(neg.validate(), ConfigError);

  ModelSpec no_clusters;
  StratumModel s2;
  s2.n_clusters = 0;
  s2.y = {Family::point_mass(1.0)};
  no_clusters.strata.push_back(s2);
  REQUIRE_THROWS_AS(no_clusters.validate(), ConfigError);

  ModelSpec both;
  StratumModel s3;
  s3.n_clusters = 1;
  s3.y = {Family::point_mass(1.0)};
  s3.hierarchy = TwoStageHierarchy{Family::normal(0, 1), Family::point_mass(1.0)};
  both.strata.push_back(s3);
  REQUIRE_THROWS_AS(both.validate(), ConfigError);
}

TEST_CASE("populations with nonpositive size variables are rejected") {
  std::vector<Stratum> strata(1);
  Cluster c;
  c.y.resize(1, 1);
  c.y(0, 0) = 1.0;
  c.x.resize(1, 0);
  c.z = 0.0;
  c.total = c.y.colwise().sum().transpose();
  strata[0].clusters.push_back(std::move(c));
  REQUIRE_THROWS_AS(FinitePopulation(std::move(strata), 1, 0), ConfigError);
}

TEST_CASE("moments that do not exist raise unsupported errors") {
  REQUIRE_THROWS_AS(Family::pareto(0.9, 1.0).mean(), UnsupportedError);
  REQUIRE_THROWS_AS(Family::pareto(2.5, 1.0).abs_moment(3.0), UnsupportedError);
  ModelSpec m;
  StratumModel s;
  s.n_clusters = 2;
  s.sizes = ClusterSizeLaw::all_equal(2);
  s.y = {Family::bernoulli(0.5)};
  m.strata.push_back(s);
  REQUIRE_THROWS_AS(liapunov_m1(m, 1.0), UnsupportedError);  // clusters, no model form
}
