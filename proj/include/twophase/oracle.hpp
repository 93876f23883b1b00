#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/designs.hpp"
#include "twophase/estimators.hpp"
#include "twophase/population.hpp"
#include "twophase/stats.hpp"

namespace twophase {

// ---------------------------------------------------------------------------
// Discrete model for the exact oracle: independent units with finite scalar
// supports, one-stage (each unit is its own cluster).
// ---------------------------------------------------------------------------

struct DiscreteUnit {
  std::vector<double> support;
  std::vector<double> probs;

  void validate() const {
    if (support.empty() || support.size() != probs.size())
      throw ConfigError("discrete unit: support and probs must be non-empty and equal length");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw ConfigError("discrete unit: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw ConfigError("discrete unit: probabilities must sum to 1");
  }
};

struct DiscreteModel {
  std::vector<int> units_per_stratum{1};
  std::vector<DiscreteUnit> units;   // flat, stratum-major
  std::vector<double> z;             // per-unit size variable; default 1

  static DiscreteModel iid_bernoulli(int n_units, double q) {
    DiscreteModel m;
    m.units_per_stratum = {n_units};
    m.units.assign(static_cast<std::size_t>(n_units), DiscreteUnit{{0.0, 1.0}, {1.0 - q, q}});
    return m;
  }

  int total_units() const { return static_cast<int>(units.size()); }

  void validate() const {
    int n = 0;
    for (int c : units_per_stratum) {
      if (c < 1) throw ConfigError("discrete model: empty stratum");
      n += c;
    }
    if (n != total_units()) throw ConfigError("discrete model: stratum sizes do not match units");
    for (const auto& u : units) u.validate();
    if (!z.empty() && static_cast<int>(z.size()) != total_units())
      throw ConfigError("discrete model: z must have one entry per unit");
    for (double v : z)
      if (!(v > 0.0)) throw ConfigError("discrete model: z must be > 0");
  }

  // Number of outcome assignments |Omega|.
  double outcome_count() const {
    double c = 1.0;
    for (const auto& u : units) c *= static_cast<double>(u.support.size());
    return c;
  }

  // Population whose unit y values are the given support digits.
  FinitePopulation realize(const std::vector<int>& digits) const {
    std::vector<Stratum> strata;
    int flat = 0;
    for (int count : units_per_stratum) {
      Stratum st;
      for (int i = 0; i < count; ++i, ++flat) {
        Cluster c;
        c.y.resize(1, 1);
        c.y(0, 0) = units[static_cast<std::size_t>(flat)]
                        .support[static_cast<std::size_t>(digits[static_cast<std::size_t>(flat)])];
        c.x.resize(1, 0);
        c.z = z.empty() ? 1.0 : z[static_cast<std::size_t>(flat)];
        c.total = c.y.colwise().sum().transpose();
        st.clusters.push_back(std::move(c));
      }
      strata.push_back(std::move(st));
    }
    return FinitePopulation(std::move(strata), 1, 0);
  }

  double outcome_mass(const std::vector<int>& digits) const {
    double m = 1.0;
    for (std::size_t i = 0; i < units.size(); ++i)
      m *= units[i].probs[static_cast<std::size_t>(digits[i])];
    return m;
  }
};

// Build an ordered sample from flat 1-based unit labels (draw order given by
// the list); convenient for conditioning queries.
inline SampleSeq sequence_sample(const DiscreteModel& model, const std::vector<int>& labels) {
  model.validate();
  SampleSeq s;
  s.draws_per_stratum.assign(model.units_per_stratum.size(), 0);
  const FinitePopulation pop = model.realize(std::vector<int>(model.units.size(), 0));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] < 1 || labels[k] > model.total_units())
      throw ConfigError("sequence_sample: label out of range");
    const auto [h, i] = pop.label(labels[k] - 1);
    s.draws.push_back(Draw{h, static_cast<int>(k), i, {}});
    ++s.draws_per_stratum[static_cast<std::size_t>(h)];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Exact joint table over (sample, outcome) pairs. Cell mass is
// p(s, z(omega)) * P(omega); with fixed z this factorizes as p(s) P(omega),
// which is asserted by tests rather than assumed here.
// ---------------------------------------------------------------------------

class JointPmf {
 public:
  static JointPmf build(const DiscreteModel& model, const DesignSpec& design,
                        std::size_t cell_cap = 10000000) {
    model.validate();
    JointPmf jp;
    jp.model_ = model;

    // Outcome axis.
    const double n_outcomes = model.outcome_count();
    const FinitePopulation template_pop = model.realize(std::vector<int>(model.units.size(), 0));
    const double n_samples = enumeration_count(design, template_pop);
    if (n_samples * n_outcomes > static_cast<double>(cell_cap))
      throw EnumerationCapError("joint table of " + std::to_string(n_samples * n_outcomes) +
                                    " cells exceeds the cap of " + std::to_string(cell_cap),
                                static_cast<std::size_t>(std::ceil(n_samples * n_outcomes)));

    std::vector<int> digits(model.units.size(), 0);
    bool first_outcome = true;
    for (;;) {
      const FinitePopulation pop = model.realize(digits);
      jp.outcome_values_.emplace_back();
      auto& vals = jp.outcome_values_.back();
      vals.reserve(model.units.size());
      for (std::size_t u = 0; u < model.units.size(); ++u)
        vals.push_back(model.units[u].support[static_cast<std::size_t>(digits[u])]);
      jp.outcome_pmf_.push_back(model.outcome_mass(digits));

      if (first_outcome) {
        for (auto& [s, mass] : enumerate_samples(design, pop)) {
          jp.samples_.push_back(std::move(s));
        }
        first_outcome = false;
      }
      for (const auto& s : jp.samples_) jp.cells_.push_back(design_pmf(design, pop, s));

      // advance mixed-radix counter
      std::size_t u = 0;
      for (; u < digits.size(); ++u) {
        if (++digits[u] < static_cast<int>(model.units[u].support.size())) break;
        digits[u] = 0;
      }
      if (u == digits.size()) break;
    }

    // cells_ currently holds p(s, omega) outcome-major; fold in P(omega) and
    // transpose to sample-major storage.
    std::vector<double> folded(jp.cells_.size());
    const std::size_t ns = jp.samples_.size();
    const std::size_t nw = jp.outcome_pmf_.size();
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t s = 0; s < ns; ++s)
        folded[s * nw + w] = jp.cells_[w * ns + s] * jp.outcome_pmf_[w];
    jp.cells_ = std::move(folded);
    return jp;
  }

  std::size_t sample_count() const { return samples_.size(); }
  std::size_t outcome_count() const { return outcome_pmf_.size(); }
  const std::vector<SampleSeq>& samples() const { return samples_; }
  const DiscreteModel& model() const { return model_; }
  double outcome_mass(std::size_t w) const { return outcome_pmf_[w]; }
  double cell(std::size_t s, std::size_t w) const { return cells_[s * outcome_pmf_.size() + w]; }
  double unit_value(std::size_t w, int flat_unit) const {
    return outcome_values_[w][static_cast<std::size_t>(flat_unit)];
  }

  double total_mass() const { return sorted_pairwise_sum(cells_); }

  std::optional<std::size_t> find_sample(const SampleSeq& s) const {
    for (std::size_t i = 0; i < samples_.size(); ++i)
      if (samples_[i] == s) return i;
    return std::nullopt;
  }

 private:
  DiscreteModel model_;
  std::vector<SampleSeq> samples_;
  std::vector<std::vector<double>> outcome_values_;
  std::vector<double> outcome_pmf_;
  std::vector<double> cells_;
};

inline JointPmf enumerate_product_space(const DiscreteModel& model, const DesignSpec& design,
                                        std::size_t cell_cap = 10000000) {
  return JointPmf::build(model, design, cell_cap);
}

namespace detail {
inline bool value_eq(double a, double b) { return std::abs(a - b) <= 1e-12; }

// Flat unit label of draw position k (1-based) of a sample.
inline int draw_flat_label(const JointPmf& jp, const SampleSeq& s, int k) {
  const auto& d = s.draws[static_cast<std::size_t>(k - 1)];
  int base = 0;
  for (int h = 0; h < d.stratum; ++h) base += jp.model().units_per_stratum[static_cast<std::size_t>(h)];
  return base + d.cluster;
}
}  // namespace detail

// Joint mass P(Y_{i(k)} = a_k for the requested draw positions), summed over
// the full table.
inline double sample_variable_joint(const JointPmf& jp, const std::vector<int>& draws,
                                    const std::vector<double>& values) {
  if (draws.size() != values.size() || draws.empty())
    throw ConfigError("sample_variable_joint: draws and values must align");
  for (std::size_t a = 0; a < draws.size(); ++a)
    for (std::size_t b = a + 1; b < draws.size(); ++b)
      if (draws[a] == draws[b]) throw ConfigError("sample_variable_joint: draw indices must be distinct");
  std::vector<double> terms;
  for (std::size_t s = 0; s < jp.sample_count(); ++s) {
    std::vector<int> flats(draws.size());
    for (std::size_t q = 0; q < draws.size(); ++q)
      flats[q] = detail::draw_flat_label(jp, jp.samples()[s], draws[q]);
    for (std::size_t w = 0; w < jp.outcome_count(); ++w) {
      bool match = true;
      for (std::size_t q = 0; q < draws.size() && match; ++q)
        match = detail::value_eq(jp.unit_value(w, flats[q]), values[q]);
      if (match) terms.push_back(jp.cell(s, w));
    }
  }
  return sorted_pairwise_sum(terms);
}

// Event on the sample variables: Y_{i(k)} = value for each listed draw. An
// empty event is the whole space.
struct EventAssignment {
  std::vector<int> draws;
  std::vector<double> values;
};

// Posterior probability of the event given that the sequence s0 was drawn:
// the ratio of the (s0, event) mass to the total s0 mass.
inline double posterior_given_sample(const JointPmf& jp, const SampleSeq& s0,
                                     const EventAssignment& event) {
  if (event.draws.size() != event.values.size())
    throw ConfigError("posterior_given_sample: event lists must align");
  const auto s_idx = jp.find_sample(s0);
  if (!s_idx.has_value())
    throw ConfigError("posterior_given_sample: conditioning sample is not in the sample space");
  std::vector<int> flats(event.draws.size());
  for (std::size_t q = 0; q < event.draws.size(); ++q) {
    if (event.draws[q] < 1 || event.draws[q] > s0.total_draws())
      throw ConfigError("posterior_given_sample: draw index out of range");
    flats[q] = detail::draw_flat_label(jp, s0, event.draws[q]);
  }
  std::vector<double> numer, denom;
  for (std::size_t w = 0; w < jp.outcome_count(); ++w) {
    const double m = jp.cell(*s_idx, w);
    denom.push_back(m);
    bool match = true;
    for (std::size_t q = 0; q < flats.size() && match; ++q)
      match = detail::value_eq(jp.unit_value(w, flats[q]), event.values[q]);
    if (match) numer.push_back(m);
  }
  const double total = sorted_pairwise_sum(denom);
  if (!(total > 0.0))
    throw ConfigError("posterior_given_sample: conditioning sample has zero mass");
  return sorted_pairwise_sum(numer) / total;
}

// Exact independence verdict for the sample variables, either under the
// posterior given s0 or unconditionally in the product space: the joint mass
// must equal the product of the marginals on every support combination.
struct PosteriorReport {
  bool independent = true;
  double max_gap = 0.0;  // largest |joint - product of marginals|
  std::optional<SampleSeq> given;
};

inline PosteriorReport independence_verdict(const JointPmf& jp, const SampleSeq* s0 = nullptr) {
  const int n = s0 ? s0->total_draws()
                   : (jp.sample_count() ? jp.samples().front().total_draws() : 0);
  if (n == 0) throw ConfigError("independence_verdict: empty sample space");

  // Candidate values per draw position: union of all unit supports.
  std::vector<double> values;
  for (const auto& u : jp.model().units)
    for (double v : u.support)
      if (std::none_of(values.begin(), values.end(),
                       [&](double w) { return detail::value_eq(v, w); }))
        values.push_back(v);
  std::sort(values.begin(), values.end());

  auto joint = [&](const std::vector<int>& draws, const std::vector<double>& vals) {
    if (s0) {
      EventAssignment e{draws, vals};
      return posterior_given_sample(jp, *s0, e);
    }
    return sample_variable_joint(jp, draws, vals);
  };

  // Marginals per draw.
  std::vector<std::vector<double>> marginal(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k)
    for (double v : values)
      marginal[static_cast<std::size_t>(k - 1)].push_back(joint({k}, {v}));

  PosteriorReport rep;
  if (s0) rep.given = *s0;
  std::vector<int> draw_ids(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) draw_ids[static_cast<std::size_t>(k)] = k + 1;
  std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
  for (;;) {
    std::vector<double> vals(static_cast<std::size_t>(n));
    double prod = 1.0;
    for (int k = 0; k < n; ++k) {
      vals[static_cast<std::size_t>(k)] = values[idx[static_cast<std::size_t>(k)]];
      prod *= marginal[static_cast<std::size_t>(k)][idx[static_cast<std::size_t>(k)]];
    }
    const double gap = std::abs(joint(draw_ids, vals) - prod);
    rep.max_gap = std::max(rep.max_gap, gap);
    std::size_t k = 0;
    for (; k < idx.size(); ++k) {
      if (++idx[k] < values.size()) break;
      idx[k] = 0;
    }
    if (k == idx.size()) break;
  }
  rep.independent = rep.max_gap <= 1e-12;
  return rep;
}

// ---------------------------------------------------------------------------
// Closed forms for the joint law of two sample variables under the simple
// random sampling designs (independent units), and for the posterior given a
// drawn sequence. These are the oracle's cross-checks for the table path.
// ---------------------------------------------------------------------------

namespace detail {
inline double unit_pmf(const DiscreteUnit& u, double a) {
  double p = 0.0;
  for (std::size_t i = 0; i < u.support.size(); ++i)
    if (value_eq(u.support[i], a)) p += u.probs[i];
  return p;
}
}  // namespace detail

// Marginal P(Y_{i(k)} = a) under either SRS design: (1/N) sum_i P(Y_i = a).
inline double srs_marginal_pmf(const DiscreteModel& model, double a) {
  double s = 0.0;
  for (const auto& u : model.units) s += detail::unit_pmf(u, a);
  return s / static_cast<double>(model.total_units());
}

// SRSWOR joint of two distinct draws: 1/(N(N-1)) sum_{i != j} P(Y_i=a)P(Y_j=b).
inline double srswor_pair_pmf(const DiscreteModel& model, double a, double b) {
  const int n = model.total_units();
  if (n < 2) throw ConfigError("srswor_pair_pmf: needs at least two units");
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      s += detail::unit_pmf(model.units[static_cast<std::size_t>(i)], a) *
           detail::unit_pmf(model.units[static_cast<std::size_t>(j)], b);
    }
  return s / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// SRSWR joint of two distinct draws: the off-diagonal product terms plus the
// repeated-label diagonal P(Y_i = a, Y_i = b), which is P(Y_i = a) when a = b
// and zero otherwise.
inline double srswr_pair_pmf(const DiscreteModel& model, double a, double b) {
  const int n = model.total_units();
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i != j) {
        s += detail::unit_pmf(model.units[static_cast<std::size_t>(i)], a) *
             detail::unit_pmf(model.units[static_cast<std::size_t>(j)], b);
      } else if (detail::value_eq(a, b)) {
        s += detail::unit_pmf(model.units[static_cast<std::size_t>(i)], a);
      }
    }
  return s / (static_cast<double>(n) * static_cast<double>(n));
}

// Posterior joint of draws k and l given the drawn sequence: sum_{i,j}
// P(Y_i=a, Y_j=b) I_i^k I_j^l, with independent units.
inline double posterior_pair_pmf(const DiscreteModel& model, const std::vector<int>& s0_labels,
                                 int k, int l, double a, double b) {
  if (k < 1 || l < 1 || k > static_cast<int>(s0_labels.size()) ||
      l > static_cast<int>(s0_labels.size()) || k == l)
    throw ConfigError("posterior_pair_pmf: bad draw indices");
  const int i = s0_labels[static_cast<std::size_t>(k - 1)] - 1;
  const int j = s0_labels[static_cast<std::size_t>(l - 1)] - 1;
  const auto& ui = model.units[static_cast<std::size_t>(i)];
  const auto& uj = model.units[static_cast<std::size_t>(j)];
  if (i == j) return detail::value_eq(a, b) ? detail::unit_pmf(ui, a) : 0.0;
  return detail::unit_pmf(ui, a) * detail::unit_pmf(uj, b);
}

// ---------------------------------------------------------------------------
// Exact design law of a (scalar) estimator on a realized population, and its
// CDF F(t) = p({s : theta_hat(s) <= t}).
// ---------------------------------------------------------------------------

struct DesignLaw {
  std::vector<double> atoms;  // sorted distinct estimator values
  std::vector<double> mass;

  double cdf(double t) const {
    std::vector<double> below;
    for (std::size_t i = 0; i < atoms.size(); ++i)
      if (atoms[i] <= t) below.push_back(mass[i]);
    return sorted_pairwise_sum(below);
  }
};

inline DesignLaw design_law(const FinitePopulation& pop, const DesignSpec& design, EstimatorId id,
                            std::size_t cap = 1000000) {
  if (pop.dim_y() != 1) throw UnsupportedError("design_law: scalar estimators only");
  std::map<double, std::vector<double>> acc;
  for (const auto& [s, mass] : enumerate_samples(design, pop, cap))
    acc[evaluate_estimator(id, s, pop, design)(0)].push_back(mass);
  DesignLaw law;
  for (auto& [value, masses] : acc) {
    law.atoms.push_back(value);
    law.mass.push_back(sorted_pairwise_sum(masses));
  }
  return law;
}

inline double design_cdf(const FinitePopulation& pop, const DesignSpec& design, EstimatorId id,
                         double t, std::size_t cap = 1000000) {
  return design_law(pop, design, id, cap).cdf(t);
}

}  // namespace twophase
