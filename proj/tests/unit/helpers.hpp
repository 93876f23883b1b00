#pragma once

#include <vector>

#include "twophase/population.hpp"

namespace test_helpers {

using twophase::Cluster;
using twophase::FinitePopulation;
using twophase::Stratum;

// One-stage population: one stratum per outer vector entry, one scalar unit
// value per cluster; optional per-cluster z values (default 1).
inline FinitePopulation one_stage(const std::vector<std::vector<double>>& strata_values,
                                  const std::vector<std::vector<double>>& strata_z = {}) {
  std::vector<Stratum> strata;
  for (std::size_t h = 0; h < strata_values.size(); ++h) {
    Stratum st;
    for (std::size_t i = 0; i < strata_values[h].size(); ++i) {
      Cluster c;
      c.y.resize(1, 1);
      c.y(0, 0) = strata_values[h][i];
      c.x.resize(1, 0);
      c.z = strata_z.empty() ? 1.0 : strata_z[h][i];
      c.total = c.y.colwise().sum().transpose();
      st.clusters.push_back(std::move(c));
    }
    strata.push_back(std::move(st));
  }
  return FinitePopulation(std::move(strata), 1, 0);
}

// Clustered population: strata -> clusters -> unit values (scalar y).
inline FinitePopulation clustered(
    const std::vector<std::vector<std::vector<double>>>& strata_clusters) {
  std::vector<Stratum> strata;
  for (const auto& clusters : strata_clusters) {
    Stratum st;
    for (const auto& units : clusters) {
      Cluster c;
      c.y.resize(static_cast<int>(units.size()), 1);
      for (std::size_t j = 0; j < units.size(); ++j) c.y(static_cast<int>(j), 0) = units[j];
      c.x.resize(static_cast<int>(units.size()), 0);
      c.z = static_cast<double>(units.size());
      c.total = c.y.colwise().sum().transpose();
      st.clusters.push_back(std::move(c));
    }
    strata.push_back(std::move(st));
  }
  return FinitePopulation(std::move(strata), 1, 0);
}

}  // namespace test_helpers
