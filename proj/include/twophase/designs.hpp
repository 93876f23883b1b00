#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/population.hpp"
#include "twophase/rng.hpp"

namespace twophase {

// Second-stage sample size rule for two-stage designs.
struct SecondStageSpec {
  enum class Kind { All, Fixed, Capped };
  Kind kind = Kind::All;
  int m = 1;

  int size_for(int cluster_size) const {
    switch (kind) {
      case Kind::All: return cluster_size;
      case Kind::Fixed: return m;
      case Kind::Capped: return std::min(m, cluster_size);
    }
    throw std::logic_error("unreachable");
  }
};

struct DesignSpec {
  enum class Kind { Srswr, Srswor, StratPpswr, StratTwoStagePpswr };
  enum class SizeSource { ClusterSize, ZValue };

  Kind kind = Kind::Srswr;
  int n = 0;                            // SRS designs: total draws
  std::vector<int> draws_per_stratum;   // stratified designs: n_h
  SizeSource size_source = SizeSource::ClusterSize;
  SecondStageSpec second_stage;

  static DesignSpec srswr(int n) {
    DesignSpec d;
    d.kind = Kind::Srswr;
    d.n = n;
    return d;
  }
  static DesignSpec srswor(int n) {
    DesignSpec d;
    d.kind = Kind::Srswor;
    d.n = n;
    return d;
  }
  static DesignSpec strat_ppswr(std::vector<int> nh, SizeSource src = SizeSource::ClusterSize) {
    DesignSpec d;
    d.kind = Kind::StratPpswr;
    d.draws_per_stratum = std::move(nh);
    d.size_source = src;
    return d;
  }
  static DesignSpec two_stage_ppswr(std::vector<int> nh, SecondStageSpec second) {
    DesignSpec d;
    d.kind = Kind::StratTwoStagePpswr;
    d.draws_per_stratum = std::move(nh);
    d.second_stage = second;
    return d;
  }

  bool stratified() const { return kind == Kind::StratPpswr || kind == Kind::StratTwoStagePpswr; }
  bool two_stage() const { return kind == Kind::StratTwoStagePpswr; }
  bool with_replacement() const { return kind != Kind::Srswor; }

  int total_draws() const {
    if (!stratified()) return n;
    int t = 0;
    for (int nh : draws_per_stratum) t += nh;
    return t;
  }

  void validate(const FinitePopulation& pop) const {
    if (stratified()) {
      if (static_cast<int>(draws_per_stratum.size()) != pop.strata_count())
        throw ConfigError("design: draws_per_stratum must have one entry per stratum");
      for (int nh : draws_per_stratum)
        if (nh < 1) throw ConfigError("design: every n_h must be >= 1");
      if (two_stage()) {
        if (second_stage.kind != SecondStageSpec::Kind::All && second_stage.m < 1)
          throw ConfigError("design: second-stage size must be >= 1");
        for (int h = 0; h < pop.strata_count(); ++h)
          for (int i = 0; i < pop.clusters_in(h); ++i) {
            const int mhi = pop.cluster(h, i).size();
            const int m = second_stage.size_for(mhi);
            if (m < 1 || m > mhi)
              throw ConfigError("design: second-stage size exceeds cluster size (stratum " +
                                std::to_string(h + 1) + ", cluster " + std::to_string(i + 1) + ")");
          }
      }
      selection_probs(pop);  // rejects zero-probability clusters
    } else {
      if (n < 1) throw ConfigError("design: n must be >= 1");
      if (kind == Kind::Srswor && n > pop.total_clusters())
        throw ConfigError("design: n exceeds the population size for SRSWOR");
    }
  }

  // Per-stratum per-draw selection probabilities for the stratified kinds.
  std::vector<Eigen::VectorXd> selection_probs(const FinitePopulation& pop) const {
    if (!stratified()) throw UnsupportedError("selection_probs: design is not stratified");
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(pop.strata_count()));
    for (int h = 0; h < pop.strata_count(); ++h) {
      const int nh = pop.clusters_in(h);
      Eigen::VectorXd p(nh);
      double total = 0.0;
      for (int i = 0; i < nh; ++i) {
        const auto& c = pop.cluster(h, i);
        p(i) = size_source == SizeSource::ClusterSize ? static_cast<double>(c.size()) : c.z;
        total += p(i);
      }
      if (!(total > 0.0)) throw ConfigError("design: stratum has zero total size");
      p /= total;
      for (int i = 0; i < nh; ++i)
        if (!(p(i) > 0.0))
          throw ConfigError("design: cluster with zero selection probability (stratum " +
                            std::to_string(h + 1) + ")");
      out.push_back(std::move(p));
    }
    return out;
  }
};

// One draw of a sample sequence. `units` holds the second-stage selection
// (sorted, within-cluster indices); empty means the whole cluster is observed.
struct Draw {
  int stratum = 0;
  int draw_index = 0;  // k within stratum for stratified designs, global for SRS
  int cluster = 0;
  std::vector<int> units;

  bool operator==(const Draw& o) const {
    return stratum == o.stratum && draw_index == o.draw_index && cluster == o.cluster &&
           units == o.units;
  }
};

// Ordered sample sequence. Labels may repeat under WR designs; each repeat of
// a cluster carries its own independent second-stage selection.
struct SampleSeq {
  std::vector<Draw> draws;
  std::vector<int> draws_per_stratum;

  int total_draws() const { return static_cast<int>(draws.size()); }
  bool operator==(const SampleSeq& o) const { return draws == o.draws; }
};

namespace detail {

inline std::vector<int> srswor_indices(int population, int n, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(population));
  std::iota(labels.begin(), labels.end(), 0);
  for (int j = 0; j < n; ++j) {
    const int r = j + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(population - j)));
    std::swap(labels[static_cast<std::size_t>(j)], labels[static_cast<std::size_t>(r)]);
  }
  labels.resize(static_cast<std::size_t>(n));
  return labels;
}

inline int inverse_cdf_draw(const std::vector<double>& cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const auto idx = static_cast<std::size_t>(it - cumulative.begin());
  return static_cast<int>(std::min(idx, cumulative.size() - 1));
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (int j = 1; j <= k; ++j) c *= static_cast<double>(n - k + j) / static_cast<double>(j);
  return std::round(c);
}

}  // namespace detail

// Draw a sample. Pure function of (design, pop, seed).
inline SampleSeq draw_sample(const DesignSpec& design, const FinitePopulation& pop, Seed seed) {
  design.validate(pop);
  Rng rng{seed};
  SampleSeq s;
  if (!design.stratified()) {
    const int big_n = pop.total_clusters();
    s.draws_per_stratum.assign(static_cast<std::size_t>(pop.strata_count()), 0);
    std::vector<int> flat;
    if (design.kind == DesignSpec::Kind::Srswr) {
      for (int k = 0; k < design.n; ++k)
        flat.push_back(static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(big_n))));
    } else {
      flat = detail::srswor_indices(big_n, design.n, rng);
    }
    for (int k = 0; k < design.n; ++k) {
      const auto [h, i] = pop.label(flat[static_cast<std::size_t>(k)]);
      s.draws.push_back(Draw{h, k, i, {}});
      ++s.draws_per_stratum[static_cast<std::size_t>(h)];
    }
    return s;
  }

  const auto probs = design.selection_probs(pop);
  s.draws_per_stratum = design.draws_per_stratum;
  for (int h = 0; h < pop.strata_count(); ++h) {
    std::vector<double> cumulative(static_cast<std::size_t>(probs[h].size()));
    double acc = 0.0;
    for (int i = 0; i < probs[h].size(); ++i) {
      acc += probs[h](i);
      cumulative[static_cast<std::size_t>(i)] = acc;
    }
    for (int k = 0; k < design.draws_per_stratum[static_cast<std::size_t>(h)]; ++k) {
      const int i = detail::inverse_cdf_draw(cumulative, rng.uniform01());
      Draw d{h, k, i, {}};
      if (design.two_stage()) {
        const int mhi = pop.cluster(h, i).size();
        const int m = design.second_stage.size_for(mhi);
        d.units = detail::srswor_indices(mhi, m, rng);
        std::sort(d.units.begin(), d.units.end());
      }
      s.draws.push_back(std::move(d));
    }
  }
  return s;
}

// Exact probability mass of an ordered sample sequence. Zero for sequences
// that are impossible under the design; structural mismatches are errors.
inline double design_pmf(const DesignSpec& design, const FinitePopulation& pop,
                         const SampleSeq& sample) {
  design.validate(pop);
  if (design.stratified()) {
    if (sample.draws_per_stratum != design.draws_per_stratum)
      throw ConfigError("design_pmf: sample draw counts do not match the design");
  } else if (sample.total_draws() != design.n) {
    throw ConfigError("design_pmf: sample length does not match the design");
  }
  for (const auto& d : sample.draws) {
    if (d.stratum < 0 || d.stratum >= pop.strata_count() || d.cluster < 0 ||
        d.cluster >= pop.clusters_in(d.stratum))
      throw ConfigError("design_pmf: sample references a label outside the population");
  }

  switch (design.kind) {
    case DesignSpec::Kind::Srswr: {
      const double big_n = pop.total_clusters();
      double mass = 1.0;
      for (const auto& d : sample.draws) {
        if (!d.units.empty()) return 0.0;
        mass /= big_n;
      }
      return mass;
    }
    case DesignSpec::Kind::Srswor: {
      const int big_n = pop.total_clusters();
      std::vector<int> seen;
      double mass = 1.0;
      for (std::size_t j = 0; j < sample.draws.size(); ++j) {
        const auto& d = sample.draws[j];
        if (!d.units.empty()) return 0.0;
        const int flat = pop.flat_label(d.stratum, d.cluster);
        if (std::find(seen.begin(), seen.end(), flat) != seen.end()) return 0.0;
        seen.push_back(flat);
        mass /= static_cast<double>(big_n - static_cast<int>(j));
      }
      return mass;
    }
    case DesignSpec::Kind::StratPpswr:
    case DesignSpec::Kind::StratTwoStagePpswr: {
      const auto probs = design.selection_probs(pop);
      double mass = 1.0;
      for (const auto& d : sample.draws) {
        mass *= probs[static_cast<std::size_t>(d.stratum)](d.cluster);
        if (design.two_stage()) {
          const int mhi = pop.cluster(d.stratum, d.cluster).size();
          const int m = design.second_stage.size_for(mhi);
          if (static_cast<int>(d.units.size()) != m) return 0.0;
          for (std::size_t j = 0; j < d.units.size(); ++j) {
            if (d.units[j] < 0 || d.units[j] >= mhi) return 0.0;
            if (j > 0 && d.units[j] <= d.units[j - 1]) return 0.0;
          }
          mass /= detail::binomial(mhi, m);
        } else if (!d.units.empty()) {
          return 0.0;
        }
      }
      return mass;
    }
  }
  throw std::logic_error("unreachable");
}

// Number of distinct ordered samples under the design, as a double so that
// oversize configurations are detected rather than overflowed.
inline double enumeration_count(const DesignSpec& design, const FinitePopulation& pop) {
  design.validate(pop);
  const double big_n = pop.total_clusters();
  switch (design.kind) {
    case DesignSpec::Kind::Srswr:
      return std::pow(big_n, design.n);
    case DesignSpec::Kind::Srswor: {
      double c = 1.0;
      for (int j = 0; j < design.n; ++j) c *= big_n - j;
      return c;
    }
    case DesignSpec::Kind::StratPpswr:
    case DesignSpec::Kind::StratTwoStagePpswr: {
      double total = 1.0;
      for (int h = 0; h < pop.strata_count(); ++h) {
        double per_draw = 0.0;
        for (int i = 0; i < pop.clusters_in(h); ++i) {
          const int mhi = pop.cluster(h, i).size();
          per_draw += design.two_stage()
                          ? detail::binomial(mhi, design.second_stage.size_for(mhi))
                          : 1.0;
        }
        total *= std::pow(per_draw, design.draws_per_stratum[static_cast<std::size_t>(h)]);
      }
      return total;
    }
  }
  throw std::logic_error("unreachable");
}

namespace detail {

// All m-subsets of {0..size-1} in lexicographic order.
inline std::vector<std::vector<int>> combinations(int size, int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(m));
  std::iota(cur.begin(), cur.end(), 0);
  for (;;) {
    out.push_back(cur);
    int j = m - 1;
    while (j >= 0 && cur[static_cast<std::size_t>(j)] == size - m + j) --j;
    if (j < 0) break;
    ++cur[static_cast<std::size_t>(j)];
    for (int l = j + 1; l < m; ++l)
      cur[static_cast<std::size_t>(l)] = cur[static_cast<std::size_t>(l - 1)] + 1;
  }
  return out;
}

}  // namespace detail

// Enumerate every sample with positive mass, exactly once, with its mass.
inline std::vector<std::pair<SampleSeq, double>> enumerate_samples(
    const DesignSpec& design, const FinitePopulation& pop, std::size_t cap = 1000000) {
  const double count = enumeration_count(design, pop);
  if (count > static_cast<double>(cap))
    throw EnumerationCapError("enumerate_samples: " + std::to_string(count) +
                                  " sequences exceed the cap of " + std::to_string(cap),
                              static_cast<std::size_t>(std::ceil(count)));

  std::vector<std::pair<SampleSeq, double>> out;
  out.reserve(static_cast<std::size_t>(count));

  if (!design.stratified()) {
    const int big_n = pop.total_clusters();
    SampleSeq cur;
    cur.draws_per_stratum.assign(static_cast<std::size_t>(pop.strata_count()), 0);
    std::function<void(int, double)> rec = [&](int k, double mass) {
      if (k == design.n) {
        out.emplace_back(cur, mass);
        return;
      }
      for (int flat = 0; flat < big_n; ++flat) {
        if (design.kind == DesignSpec::Kind::Srswor) {
          bool used = false;
          for (const auto& d : cur.draws)
            if (pop.flat_label(d.stratum, d.cluster) == flat) used = true;
          if (used) continue;
        }
        const auto [h, i] = pop.label(flat);
        const double step = design.kind == DesignSpec::Kind::Srswr
                                ? 1.0 / big_n
                                : 1.0 / static_cast<double>(big_n - k);
        cur.draws.push_back(Draw{h, k, i, {}});
        ++cur.draws_per_stratum[static_cast<std::size_t>(h)];
        rec(k + 1, mass * step);
        --cur.draws_per_stratum[static_cast<std::size_t>(h)];
        cur.draws.pop_back();
      }
    };
    rec(0, 1.0);
    return out;
  }

  // Stratified kinds: precompute per-stratum per-draw outcomes.
  const auto probs = design.selection_probs(pop);
  struct Outcome {
    int cluster;
    std::vector<int> units;
    double mass;
  };
  std::vector<std::vector<Outcome>> outcomes(static_cast<std::size_t>(pop.strata_count()));
  for (int h = 0; h < pop.strata_count(); ++h) {
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      if (design.two_stage()) {
        const int mhi = pop.cluster(h, i).size();
        const int m = design.second_stage.size_for(mhi);
        const double denom = detail::binomial(mhi, m);
        for (auto& subset : detail::combinations(mhi, m))
          outcomes[static_cast<std::size_t>(h)].push_back(
              Outcome{i, std::move(subset), probs[static_cast<std::size_t>(h)](i) / denom});
      } else {
        outcomes[static_cast<std::size_t>(h)].push_back(
            Outcome{i, {}, probs[static_cast<std::size_t>(h)](i)});
      }
    }
  }

  SampleSeq cur;
  cur.draws_per_stratum = design.draws_per_stratum;
  std::function<void(int, int, double)> rec = [&](int h, int k, double mass) {
    if (h == pop.strata_count()) {
      out.emplace_back(cur, mass);
      return;
    }
    if (k == design.draws_per_stratum[static_cast<std::size_t>(h)]) {
      rec(h + 1, 0, mass);
      return;
    }
    for (const auto& o : outcomes[static_cast<std::size_t>(h)]) {
      cur.draws.push_back(Draw{h, k, o.cluster, o.units});
      rec(h, k + 1, mass * o.mass);
      cur.draws.pop_back();
    }
  };
  rec(0, 0, 1.0);
  return out;
}

}  // namespace twophase
