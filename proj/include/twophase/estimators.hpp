#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/designs.hpp"
#include "twophase/population.hpp"

namespace twophase {

enum class EstimatorId { PpswrMean, Ratio, SampleMean };

// Both finite population mean conventions: the size-weighted two-stage mean
// theta_N = sum_h W_h (sum_i y_hi / M_h), and the per-cluster mean of the
// cluster totals Ybar_N = (1/N) sum_h sum_i y_hi. They coincide one-stage.
struct PopulationTargets {
  Eigen::VectorXd theta_n;
  Eigen::VectorXd ybar_n;
};

inline PopulationTargets finite_pop_mean(const FinitePopulation& pop) {
  const int p = pop.dim_y();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd ybar = Eigen::VectorXd::Zero(p);
  for (int h = 0; h < pop.strata_count(); ++h) {
    Eigen::VectorXd stratum_total = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < pop.clusters_in(h); ++i) stratum_total += pop.cluster(h, i).total;
    theta += pop.stratum_weight(h) * stratum_total / pop.stratum_units(h);
    ybar += stratum_total;
  }
  ybar /= static_cast<double>(pop.total_clusters());
  return {theta, ybar};
}

namespace detail {

// Unbiased second-stage estimate of a cluster total: the SRSWOR expansion
// (M/m) * sum of sampled unit values. An empty selection means take-all.
inline Eigen::VectorXd expansion_total(const Cluster& c, const std::vector<int>& units) {
  if (units.empty()) return c.total;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(c.y.cols());
  for (int j : units) s += c.y.row(j).transpose();
  return s * (static_cast<double>(c.size()) / static_cast<double>(units.size()));
}

// Within-cluster covariance of unit values (divisor size-1); zero matrix for
// singleton clusters.
inline Eigen::MatrixXd within_cluster_cov(const Cluster& c) {
  const int m = c.size(), p = static_cast<int>(c.y.cols());
  if (m < 2) return Eigen::MatrixXd::Zero(p, p);
  const Eigen::RowVectorXd mean = c.y.colwise().mean();
  Eigen::MatrixXd centered = c.y.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(m - 1);
}

}  // namespace detail

struct EstimatorResult {
  Eigen::VectorXd estimate;
  std::optional<Eigen::MatrixXd> design_variance;  // exact V_d when computed
  std::optional<Eigen::MatrixXd> gamma_d_n;        // n * V_d
  double n_hat = 0.0;                              // ratio estimator only
};

// Stratified (two-stage) PPSWR mean: per draw theta_h^k = yhat_hi / M_hi,
// averaged over draws and combined with stratum weights W_h. Unbiased for
// theta_N when selection is size proportional; rejected otherwise.
inline EstimatorResult ppswr_mean_estimate(const SampleSeq& sample, const FinitePopulation& pop) {
  const int p = pop.dim_y();
  if (static_cast<int>(sample.draws_per_stratum.size()) != pop.strata_count())
    throw ConfigError("ppswr_mean_estimate: sample does not match the population layout");
  Eigen::VectorXd estimate = Eigen::VectorXd::Zero(p);
  std::vector<Eigen::VectorXd> per_stratum(static_cast<std::size_t>(pop.strata_count()),
                                           Eigen::VectorXd::Zero(p));
  for (const auto& d : sample.draws) {
    const auto& c = pop.cluster(d.stratum, d.cluster);
    per_stratum[static_cast<std::size_t>(d.stratum)] +=
        detail::expansion_total(c, d.units) / static_cast<double>(c.size());
  }
  for (int h = 0; h < pop.strata_count(); ++h) {
    const int nh = sample.draws_per_stratum[static_cast<std::size_t>(h)];
    if (nh < 1) throw ConfigError("ppswr_mean_estimate: stratum with no draws");
    estimate += pop.stratum_weight(h) * per_stratum[static_cast<std::size_t>(h)] /
                static_cast<double>(nh);
  }
  EstimatorResult r;
  r.estimate = estimate;
  return r;
}

// Ratio estimator of the per-cluster mean under a one-stage stratified PPSWR
// design: weighted total over estimated population size.
inline EstimatorResult ratio_estimate(const SampleSeq& sample, const FinitePopulation& pop,
                                      const DesignSpec& design) {
  if (!design.stratified() || design.two_stage())
    throw ConfigError("ratio_estimate: requires a one-stage stratified PPSWR design");
  const auto probs = design.selection_probs(pop);
  const int p = pop.dim_y();
  Eigen::VectorXd numerator = Eigen::VectorXd::Zero(p);
  double n_hat = 0.0;
  for (const auto& d : sample.draws) {
    const double nh = sample.draws_per_stratum[static_cast<std::size_t>(d.stratum)];
    const double w = 1.0 / (nh * probs[static_cast<std::size_t>(d.stratum)](d.cluster));
    numerator += w * pop.cluster(d.stratum, d.cluster).total;
    n_hat += w;
  }
  if (!(n_hat > 0.0)) throw SolveError("ratio_estimate: estimated population size is zero");
  EstimatorResult r;
  r.estimate = numerator / n_hat;
  r.n_hat = n_hat;
  return r;
}

// Plain mean of the drawn cluster totals; the natural estimator under the
// SRS designs on one-stage populations.
inline EstimatorResult sample_mean_estimate(const SampleSeq& sample, const FinitePopulation& pop) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(pop.dim_y());
  for (const auto& d : sample.draws) s += pop.cluster(d.stratum, d.cluster).total;
  EstimatorResult r;
  r.estimate = s / static_cast<double>(sample.total_draws());
  return r;
}

inline Eigen::VectorXd evaluate_estimator(EstimatorId id, const SampleSeq& sample,
                                          const FinitePopulation& pop, const DesignSpec& design) {
  switch (id) {
    case EstimatorId::PpswrMean: return ppswr_mean_estimate(sample, pop).estimate;
    case EstimatorId::Ratio: return ratio_estimate(sample, pop, design).estimate;
    case EstimatorId::SampleMean: return sample_mean_estimate(sample, pop).estimate;
  }
  throw std::logic_error("unreachable");
}

// Residuals e_hi = y_hi - Ybar_N of the cluster totals, and their stratum sums.
struct Residuals {
  std::vector<Eigen::MatrixXd> e;  // per stratum, N_h x p
  Eigen::MatrixXd stratum_sums;    // L x p
};

inline Residuals residuals(const FinitePopulation& pop) {
  if (!pop.one_stage()) throw UnsupportedError("residuals: defined for one-stage populations");
  const auto targets = finite_pop_mean(pop);
  const int p = pop.dim_y();
  Residuals r;
  r.stratum_sums = Eigen::MatrixXd::Zero(pop.strata_count(), p);
  for (int h = 0; h < pop.strata_count(); ++h) {
    Eigen::MatrixXd eh(pop.clusters_in(h), p);
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      eh.row(i) = (pop.cluster(h, i).total - targets.ybar_n).transpose();
      r.stratum_sums.row(h) += eh.row(i);
    }
    r.e.push_back(std::move(eh));
  }
  return r;
}

// Closed-form design covariance of the stratified (two-stage) PPSWR mean:
//   V_d = sum_h W_h^2 n_h^{-1} [ sum_i p_hi (u_hi - Ybar_h)(...)^T
//                                + sum_i p_hi (1/m_hi - 1/M_hi) S_hi / 1 ]
// with u_hi the cluster means and S_hi the within-cluster unit covariance.
inline Eigen::MatrixXd ppswr_mean_variance_closed(const DesignSpec& design,
                                                  const FinitePopulation& pop) {
  if (!design.stratified())
    throw UnsupportedError("ppswr_mean_variance_closed: requires a stratified PPSWR design");
  if (design.size_source != DesignSpec::SizeSource::ClusterSize)
    throw UnsupportedError("ppswr mean: selection must be proportional to cluster size");
  design.validate(pop);
  const int p = pop.dim_y();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
  for (int h = 0; h < pop.strata_count(); ++h) {
    const double wh = pop.stratum_weight(h);
    const double nh = design.draws_per_stratum[static_cast<std::size_t>(h)];
    Eigen::VectorXd ybar_h = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < pop.clusters_in(h); ++i) ybar_h += pop.cluster(h, i).total;
    ybar_h /= pop.stratum_units(h);
    Eigen::MatrixXd per_draw = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      const double phi = static_cast<double>(c.size()) / pop.stratum_units(h);
      const Eigen::VectorXd d = c.mean() - ybar_h;
      per_draw += phi * d * d.transpose();
      if (design.two_stage()) {
        const int m = design.second_stage.size_for(c.size());
        const double f2 = 1.0 / m - 1.0 / c.size();
        if (f2 > 0.0) per_draw += phi * f2 * detail::within_cluster_cov(c);
      }
    }
    v += wh * wh / nh * per_draw;
  }
  return v;
}

// Exact design covariance of an estimator. Uses the closed form for the
// PPSWR mean and full sample enumeration otherwise.
inline Eigen::MatrixXd exact_design_variance(const DesignSpec& design, const FinitePopulation& pop,
                                             EstimatorId id, std::size_t cap = 1000000) {
  if (id == EstimatorId::PpswrMean && design.stratified())
    return ppswr_mean_variance_closed(design, pop);
  const auto samples = enumerate_samples(design, pop, cap);
  const int p = pop.dim_y();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& [s, mass] : samples) mean += mass * evaluate_estimator(id, s, pop, design);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
  for (const auto& [s, mass] : samples) {
    const Eigen::VectorXd d = evaluate_estimator(id, s, pop, design) - mean;
    v += mass * d * d.transpose();
  }
  return v;
}

inline Eigen::MatrixXd gamma_d_n(const DesignSpec& design, const FinitePopulation& pop,
                                 EstimatorId id, std::size_t cap = 1000000) {
  return static_cast<double>(design.total_draws()) * exact_design_variance(design, pop, id, cap);
}

// Linearized design variance of the ratio estimator, scaled by n: the
// residual-based Hansen-Hurwitz variance of (1/N) sum_h sum_k e_{h i(k)} /
// (n_h p_hi), which the exact ratio variance approaches as n grows.
inline Eigen::MatrixXd ratio_linearized_gamma_d(const FinitePopulation& pop,
                                                const DesignSpec& design) {
  if (!design.stratified() || design.two_stage())
    throw UnsupportedError("ratio_linearized_gamma_d: one-stage stratified PPSWR only");
  const auto res = residuals(pop);
  const auto probs = design.selection_probs(pop);
  const int p = pop.dim_y();
  const double big_n = pop.total_clusters();
  const double n = design.total_draws();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
  for (int h = 0; h < pop.strata_count(); ++h) {
    const double nh = design.draws_per_stratum[static_cast<std::size_t>(h)];
    Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const Eigen::VectorXd e = res.e[static_cast<std::size_t>(h)].row(i).transpose();
      inner += e * e.transpose() / probs[static_cast<std::size_t>(h)](i);
    }
    const Eigen::VectorXd eh = res.stratum_sums.row(h).transpose();
    inner -= eh * eh.transpose();
    acc += inner / nh;
  }
  return n * acc / (big_n * big_n);
}

// ---------------------------------------------------------------------------
// Moment conditions for the design CLT.
// ---------------------------------------------------------------------------

// sum_h W_h E_d |theta_h^k - Ybar_h|^{2+delta} evaluated exactly from the
// per-draw distribution under size-proportional selection; one-stage clusters
// observed in full.
inline double check_c1_prime(const FinitePopulation& pop, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("check_c1_prime: delta must be > 0");
  double acc = 0.0;
  for (int h = 0; h < pop.strata_count(); ++h) {
    Eigen::VectorXd ybar_h = Eigen::VectorXd::Zero(pop.dim_y());
    for (int i = 0; i < pop.clusters_in(h); ++i) ybar_h += pop.cluster(h, i).total;
    ybar_h /= pop.stratum_units(h);
    double e = 0.0;
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      const double phi = static_cast<double>(c.size()) / pop.stratum_units(h);
      e += phi * std::pow((c.mean() - ybar_h).norm(), 2.0 + delta);
    }
    acc += pop.stratum_weight(h) * e;
  }
  return acc;
}

// n^{1+delta} sum_h sum_k E_d |W_h theta_h^k / n_h|^{2+delta}; the per-draw
// moment uses second-stage subset enumeration for two-stage designs.
inline double condition_c1(const DesignSpec& design, const FinitePopulation& pop, double delta,
                           std::size_t subset_cap = 100000) {
  if (!design.stratified()) throw UnsupportedError("condition_c1: stratified designs only");
  design.validate(pop);
  const auto probs = design.selection_probs(pop);
  const double n = design.total_draws();
  double acc = 0.0;
  for (int h = 0; h < pop.strata_count(); ++h) {
    const double wh = pop.stratum_weight(h);
    const double nh = design.draws_per_stratum[static_cast<std::size_t>(h)];
    double per_draw = 0.0;
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      const double phi = probs[static_cast<std::size_t>(h)](i);
      if (!design.two_stage() || design.second_stage.size_for(c.size()) == c.size()) {
        per_draw += phi * std::pow(c.mean().norm(), 2.0 + delta);
      } else {
        const int m = design.second_stage.size_for(c.size());
        const double n_subsets = detail::binomial(c.size(), m);
        if (n_subsets > static_cast<double>(subset_cap))
          throw EnumerationCapError("condition_c1: second-stage enumeration too large",
                                    static_cast<std::size_t>(n_subsets));
        for (const auto& subset : detail::combinations(c.size(), m)) {
          const Eigen::VectorXd est = detail::expansion_total(c, subset) / c.size();
          per_draw += phi / n_subsets * std::pow(est.norm(), 2.0 + delta);
        }
      }
    }
    acc += nh * std::pow(wh / nh, 2.0 + delta) * per_draw;
  }
  return std::pow(n, 1.0 + delta) * acc;
}

// (n/M) max over units of m_hi w_hij with the expansion weight convention
// w_hij = M_h / (n_h p_hi m_hi), so m_hi w_hij = M_h / (n_h p_hi).
inline double condition_c2(const DesignSpec& design, const FinitePopulation& pop) {
  if (!design.stratified()) throw UnsupportedError("condition_c2: stratified designs only");
  design.validate(pop);
  const auto probs = design.selection_probs(pop);
  double mx = 0.0;
  for (int h = 0; h < pop.strata_count(); ++h) {
    const double nh = design.draws_per_stratum[static_cast<std::size_t>(h)];
    for (int i = 0; i < pop.clusters_in(h); ++i)
      mx = std::max(mx, pop.stratum_units(h) / (nh * probs[static_cast<std::size_t>(h)](i)));
  }
  return design.total_draws() / pop.total_units() * mx;
}

}  // namespace twophase
