#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/designs.hpp"
#include "twophase/estimators.hpp"
#include "twophase/population.hpp"

namespace twophase {

namespace linalg {

inline double condition_number(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / sv(sv.size() - 1);
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().minCoeff();
}

// Projection onto the PSD cone (negative eigenvalues floored at zero).
inline Eigen::MatrixXd psd_floor(const Eigen::MatrixXd& m, bool* clamped = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  bool any = false;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) < 0.0) {
      ev(i) = 0.0;
      any = true;
    }
  if (clamped) *clamped = any;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::MatrixXd inverse_guarded(const Eigen::MatrixXd& m, double cond_limit = 1e12) {
  const double cond = condition_number(m);
  if (!(cond < cond_limit))
    throw SolveError("matrix is singular or ill conditioned (cond = " + std::to_string(cond) + ")");
  return m.inverse();
}

}  // namespace linalg

// ---------------------------------------------------------------------------
// Estimating function g(y, x, theta) in R^l, with optional analytic Jacobian
// dg/dtheta. Built-ins cover the mean and the linear regression score.
// ---------------------------------------------------------------------------

struct EEFunction {
  int dim = 1;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      g;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      dg;  // may be empty; finite differences are used instead

  static EEFunction mean(int p) {
    EEFunction f;
    f.dim = p;
    f.g = [](const Eigen::VectorXd& y, const Eigen::VectorXd&, const Eigen::VectorXd& theta) {
      return Eigen::VectorXd(y - theta);
    };
    f.dg = [p](const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&) {
      return Eigen::MatrixXd(-Eigen::MatrixXd::Identity(p, p));
    };
    return f;
  }

  // Least-squares score x (y - x^T theta) for scalar y.
  static EEFunction regression(int k) {
    EEFunction f;
    f.dim = k;
    f.g = [](const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
      return Eigen::VectorXd(x * (y(0) - x.dot(theta)));
    };
    f.dg = [](const Eigen::VectorXd&, const Eigen::VectorXd& x, const Eigen::VectorXd&) {
      return Eigen::MatrixXd(-x * x.transpose());
    };
    return f;
  }
};

inline Eigen::VectorXd cluster_g(const Cluster& c, const EEFunction& ee,
                                 const Eigen::VectorXd& theta) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(ee.dim);
  for (int j = 0; j < c.size(); ++j)
    s += ee.g(c.y.row(j).transpose(), c.x.row(j).transpose(), theta);
  return s;
}

inline Eigen::MatrixXd cluster_dg(const Cluster& c, const EEFunction& ee,
                                  const Eigen::VectorXd& theta) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  for (int j = 0; j < c.size(); ++j)
    s += ee.dg(c.y.row(j).transpose(), c.x.row(j).transpose(), theta);
  return s;
}

// Finite population estimating function G_N(theta) = (1/M) sum_h sum_i g_hi.
inline Eigen::VectorXd g_population(const Eigen::VectorXd& theta, const FinitePopulation& pop,
                                    const EEFunction& ee) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(ee.dim);
  for (int h = 0; h < pop.strata_count(); ++h)
    for (int i = 0; i < pop.clusters_in(h); ++i) s += cluster_g(pop.cluster(h, i), ee, theta);
  return s / pop.total_units();
}

// Sample estimate of G_N built with the PPSWR mean weighting: per draw the
// second-stage expansion estimate of g_hi divided by M_hi, averaged within
// strata and combined with W_h.
inline Eigen::VectorXd g_sample(const Eigen::VectorXd& theta, const SampleSeq& sample,
                                const FinitePopulation& pop, const EEFunction& ee) {
  if (static_cast<int>(sample.draws_per_stratum.size()) != pop.strata_count())
    throw ConfigError("g_sample: sample does not match the population layout");
  std::vector<Eigen::VectorXd> per_stratum(static_cast<std::size_t>(pop.strata_count()),
                                           Eigen::VectorXd::Zero(ee.dim));
  for (const auto& d : sample.draws) {
    const auto& c = pop.cluster(d.stratum, d.cluster);
    Eigen::VectorXd ghat;
    if (d.units.empty()) {
      ghat = cluster_g(c, ee, theta);
    } else {
      ghat = Eigen::VectorXd::Zero(ee.dim);
      for (int j : d.units) ghat += ee.g(c.y.row(j).transpose(), c.x.row(j).transpose(), theta);
      ghat *= static_cast<double>(c.size()) / static_cast<double>(d.units.size());
    }
    per_stratum[static_cast<std::size_t>(d.stratum)] += ghat / static_cast<double>(c.size());
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(ee.dim);
  for (int h = 0; h < pop.strata_count(); ++h) {
    const int nh = sample.draws_per_stratum[static_cast<std::size_t>(h)];
    if (nh < 1) throw ConfigError("g_sample: stratum with no draws");
    out += pop.stratum_weight(h) * per_stratum[static_cast<std::size_t>(h)] /
           static_cast<double>(nh);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Newton root finding with residual-halving damping.
// ---------------------------------------------------------------------------

struct NewtonOptions {
  int max_iterations = 50;
  double tol_residual = 1e-10;  // on ||G||_inf
  double tol_step = 1e-12;
  int max_halvings = 20;
  double cond_limit = 1e12;
};

struct NewtonResult {
  Eigen::VectorXd theta;
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
};

inline Eigen::MatrixXd finite_difference_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& theta) {
  const int l = static_cast<int>(theta.size());
  Eigen::MatrixXd j(f(theta).size(), l);
  for (int c = 0; c < l; ++c) {
    const double step = 1e-6 * (1.0 + std::abs(theta(c)));
    Eigen::VectorXd hi = theta, lo = theta;
    hi(c) += step;
    lo(c) -= step;
    j.col(c) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return j;
}

inline NewtonResult newton_solve(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    Eigen::VectorXd theta, const NewtonOptions& opts = {}) {
  NewtonResult r;
  Eigen::VectorXd g = f(theta);
  double norm = g.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (norm <= opts.tol_residual) {
      r.theta = theta;
      r.iterations = it;
      r.residual_norm = norm;
      r.converged = true;
      return r;
    }
    const Eigen::MatrixXd j = jacobian(theta);
    const Eigen::VectorXd step = linalg::inverse_guarded(j, opts.cond_limit) * g;
    double damping = 1.0;
    Eigen::VectorXd candidate = theta - step;
    Eigen::VectorXd gc = f(candidate);
    int halvings = 0;
    while (gc.lpNorm<Eigen::Infinity>() > norm && halvings < opts.max_halvings) {
      damping *= 0.5;
      candidate = theta - damping * step;
      gc = f(candidate);
      ++halvings;
    }
    const double step_size = (damping * step).lpNorm<Eigen::Infinity>();
    theta = candidate;
    g = gc;
    norm = g.lpNorm<Eigen::Infinity>();
    if (norm <= opts.tol_residual || step_size <= opts.tol_step) {
      r.theta = theta;
      r.iterations = it + 1;
      r.residual_norm = norm;
      r.converged = norm <= opts.tol_residual;
      if (!r.converged)
        throw SolveError("newton_solve: stalled with residual " + std::to_string(norm));
      return r;
    }
  }
  throw SolveError("newton_solve: no convergence after " + std::to_string(opts.max_iterations) +
                   " iterations (residual " + std::to_string(norm) + ")");
}

inline NewtonResult solve_finite_pop_ee(const FinitePopulation& pop, const EEFunction& ee,
                                        const Eigen::VectorXd& theta_init,
                                        const NewtonOptions& opts = {}) {
  auto f = [&](const Eigen::VectorXd& t) { return g_population(t, pop, ee); };
  auto j = [&](const Eigen::VectorXd& t) -> Eigen::MatrixXd {
    if (!ee.dg) return finite_difference_jacobian(f, t);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
    for (int h = 0; h < pop.strata_count(); ++h)
      for (int i = 0; i < pop.clusters_in(h); ++i) s += cluster_dg(pop.cluster(h, i), ee, t);
    return Eigen::MatrixXd(s / pop.total_units());
  };
  return newton_solve(f, j, theta_init, opts);
}

// Jacobian of the sample estimating function at theta; analytic when the
// estimating function carries one, central differences otherwise.
inline Eigen::MatrixXd jacobian_hat(const Eigen::VectorXd& theta, const SampleSeq& sample,
                                    const FinitePopulation& pop, const EEFunction& ee) {
  auto f = [&](const Eigen::VectorXd& t) { return g_sample(t, sample, pop, ee); };
  if (!ee.dg) return finite_difference_jacobian(f, theta);
  std::vector<Eigen::MatrixXd> per_stratum(static_cast<std::size_t>(pop.strata_count()),
                                           Eigen::MatrixXd::Zero(ee.dim, ee.dim));
  for (const auto& d : sample.draws) {
    const auto& c = pop.cluster(d.stratum, d.cluster);
    Eigen::MatrixXd dhat;
    if (d.units.empty()) {
      dhat = cluster_dg(c, ee, theta);
    } else {
      dhat = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
      for (int j : d.units) dhat += ee.dg(c.y.row(j).transpose(), c.x.row(j).transpose(), theta);
      dhat *= static_cast<double>(c.size()) / static_cast<double>(d.units.size());
    }
    per_stratum[static_cast<std::size_t>(d.stratum)] += dhat / static_cast<double>(c.size());
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  for (int h = 0; h < pop.strata_count(); ++h)
    out += pop.stratum_weight(h) * per_stratum[static_cast<std::size_t>(h)] /
           static_cast<double>(sample.draws_per_stratum[static_cast<std::size_t>(h)]);
  return out;
}

inline NewtonResult solve_sample_ee(const SampleSeq& sample, const FinitePopulation& pop,
                                    const EEFunction& ee, const Eigen::VectorXd& theta_init,
                                    const NewtonOptions& opts = {}) {
  auto f = [&](const Eigen::VectorXd& t) { return g_sample(t, sample, pop, ee); };
  auto j = [&](const Eigen::VectorXd& t) { return jacobian_hat(t, sample, pop, ee); };
  return newton_solve(f, j, theta_init, opts);
}

// ---------------------------------------------------------------------------
// Variance components of the two-stage hierarchy, evaluated on g values.
//
// sigma2[h] is the average within-cluster covariance of the g_hij. gamma[h]
// is the between-cluster mean square of the cluster means g_hi / M_hi, which
// overshoots the between-cluster component by the average within-cluster
// noise sigma_hi^2 / M_hi; gamma_adj[h] subtracts that term and is the
// model-unbiased estimate of the between-cluster variance.
// ---------------------------------------------------------------------------

struct VarianceComponents {
  std::vector<Eigen::MatrixXd> sigma2;
  std::vector<Eigen::MatrixXd> gamma;      // raw between-cluster mean square
  std::vector<Eigen::MatrixXd> gamma_adj;  // within-noise corrected
  bool clamped = false;                    // some gamma_adj was floored at PSD
};

namespace detail {

struct ClusterGStats {
  Eigen::VectorXd mean;       // cluster mean of g over observed units
  Eigen::MatrixXd within;     // unit-level covariance (divisor m-1)
  int observed = 0;
  int cluster_size = 0;
};

inline ClusterGStats cluster_g_stats(const Cluster& c, const std::vector<int>& units,
                                     const EEFunction& ee, const Eigen::VectorXd& theta) {
  ClusterGStats s;
  s.cluster_size = c.size();
  std::vector<int> idx = units;
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(c.size()));
    std::iota(idx.begin(), idx.end(), 0);
  }
  s.observed = static_cast<int>(idx.size());
  Eigen::MatrixXd g(static_cast<int>(idx.size()), ee.dim);
  for (std::size_t j = 0; j < idx.size(); ++j)
    g.row(static_cast<int>(j)) =
        ee.g(c.y.row(idx[j]).transpose(), c.x.row(idx[j]).transpose(), theta).transpose();
  s.mean = g.colwise().mean().transpose();
  if (s.observed >= 2) {
    Eigen::MatrixXd centered = g.rowwise() - s.mean.transpose();
    s.within = centered.transpose() * centered / static_cast<double>(s.observed - 1);
  } else {
    s.within = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  }
  return s;
}

inline VarianceComponents components_from_stats(const std::vector<std::vector<ClusterGStats>>& per,
                                                int dim, bool sample_path) {
  VarianceComponents out;
  for (const auto& stats : per) {
    const double n = static_cast<double>(stats.size());
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd mean_sq = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& s : stats) {
      sigma += s.within;
      mean_sum += s.mean;
      mean_sq += s.mean * s.mean.transpose();
      // Variance of the observed cluster mean around the cluster-level mean:
      // take-all clusters contribute S/M, subsampled ones (1/m - 1/M + 1/M) S.
      const double factor = sample_path
                                ? 1.0 / static_cast<double>(s.observed)
                                : 1.0 / static_cast<double>(s.cluster_size);
      noise += factor * s.within;
    }
    sigma /= n;
    noise /= n;
    Eigen::MatrixXd between =
        n > 1.0 ? Eigen::MatrixXd((mean_sq - mean_sum * mean_sum.transpose() / n) / (n - 1.0))
                : Eigen::MatrixXd::Zero(dim, dim);
    out.sigma2.push_back(sigma);
    out.gamma.push_back(between);
    bool clamped = false;
    Eigen::MatrixXd adj = between - noise;
    if (sample_path) adj = linalg::psd_floor(adj, &clamped);
    out.gamma_adj.push_back(adj);
    out.clamped = out.clamped || clamped;
  }
  return out;
}

}  // namespace detail

// Finite-population components from all g_hij(theta). Every cluster in a
// stratum must have at least two units for the within component.
inline VarianceComponents variance_components(const FinitePopulation& pop, const EEFunction& ee,
                                              const Eigen::VectorXd& theta) {
  std::vector<std::vector<detail::ClusterGStats>> per(
      static_cast<std::size_t>(pop.strata_count()));
  for (int h = 0; h < pop.strata_count(); ++h) {
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      if (c.size() < 2)
        throw UnsupportedError(
            "variance_components: stratum " + std::to_string(h + 1) +
            " has a cluster of size 1; the within component needs clusters of size >= 2 "
            "(use a two-stage model, or treat the values as cluster totals)");
      per[static_cast<std::size_t>(h)].push_back(detail::cluster_g_stats(c, {}, ee, theta));
    }
  }
  return detail::components_from_stats(per, ee.dim, /*sample_path=*/false);
}

// Plug-in components from the sampled clusters, one entry per draw; the
// second-stage noise correction keeps the between component asymptotically
// design unbiased. Negative corrected estimates are floored (flagged).
inline VarianceComponents variance_components_sample(const SampleSeq& sample,
                                                     const FinitePopulation& pop,
                                                     const EEFunction& ee,
                                                     const Eigen::VectorXd& theta) {
  std::vector<std::vector<detail::ClusterGStats>> per(
      static_cast<std::size_t>(pop.strata_count()));
  for (const auto& d : sample.draws) {
    const auto& c = pop.cluster(d.stratum, d.cluster);
    if ((d.units.empty() ? c.size() : static_cast<int>(d.units.size())) < 2)
      throw UnsupportedError(
          "variance_components_sample: draws must observe at least two units per cluster");
    per[static_cast<std::size_t>(d.stratum)].push_back(
        detail::cluster_g_stats(c, d.units, ee, theta));
  }
  for (const auto& stats : per)
    if (stats.size() < 2)
      throw UnsupportedError(
          "variance_components_sample: needs at least two draws per stratum");
  return detail::components_from_stats(per, ee.dim, /*sample_path=*/true);
}

// Model variance of sqrt(N) G_N(theta):
//   (N/M) sum_h { W_h sigma_h^2 + gamma_h (sum_i M_hi^2 / M_h) }.
// With all cluster sizes 1 this reduces to (N/M) sum_h { W_h sigma_h^2 +
// gamma_h }.
inline Eigen::MatrixXd model_variance(const std::vector<Eigen::MatrixXd>& sigma2,
                                      const std::vector<Eigen::MatrixXd>& gamma,
                                      const FinitePopulation& pop) {
  if (static_cast<int>(sigma2.size()) != pop.strata_count() ||
      static_cast<int>(gamma.size()) != pop.strata_count())
    throw ConfigError("model_variance: one component pair per stratum required");
  const int dim = static_cast<int>(sigma2.front().rows());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  for (int h = 0; h < pop.strata_count(); ++h) {
    double sq = 0.0;
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const double m = pop.cluster(h, i).size();
      sq += m * m;
    }
    acc += pop.stratum_weight(h) * sigma2[static_cast<std::size_t>(h)] +
           (sq / pop.stratum_units(h)) * gamma[static_cast<std::size_t>(h)];
  }
  return static_cast<double>(pop.total_clusters()) / pop.total_units() * acc;
}

// Gamma = J^{-1} [Gamma_d + f Gamma_m] J^{-1}; output symmetrized.
inline Eigen::MatrixXd sandwich(const Eigen::MatrixXd& j, const Eigen::MatrixXd& gamma_d,
                                const Eigen::MatrixXd& gamma_m, double f,
                                double cond_limit = 1e12) {
  if (!(f >= 0.0)) throw ConfigError("sandwich: f must be >= 0");
  const Eigen::MatrixXd jinv = linalg::inverse_guarded(j, cond_limit);
  const Eigen::MatrixXd core = gamma_d + f * gamma_m;
  Eigen::MatrixXd out = jinv * core * jinv;
  return 0.5 * (out + out.transpose());
}

// Exact design variance term of the sandwich: n sum_h W_h^2 V_d(Z_h1) / n_h,
// where Z_h1 is the centered per-draw estimate ghat_hi/M_hi - Gbar_h. The
// per-draw variance has a between-cluster part and, for two-stage designs,
// the expansion-estimator second-stage part.
inline Eigen::MatrixXd gamma_d_ee(const Eigen::VectorXd& theta, const FinitePopulation& pop,
                                  const DesignSpec& design, const EEFunction& ee) {
  if (!design.stratified()) throw UnsupportedError("gamma_d_ee: stratified designs only");
  if (design.size_source != DesignSpec::SizeSource::ClusterSize)
    throw UnsupportedError("gamma_d_ee: selection must be proportional to cluster size");
  design.validate(pop);
  const double n = design.total_draws();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  for (int h = 0; h < pop.strata_count(); ++h) {
    const double wh = pop.stratum_weight(h);
    const double nh = design.draws_per_stratum[static_cast<std::size_t>(h)];
    Eigen::VectorXd gbar = Eigen::VectorXd::Zero(ee.dim);
    std::vector<Eigen::VectorXd> means;
    means.reserve(static_cast<std::size_t>(pop.clusters_in(h)));
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      means.push_back(cluster_g(c, ee, theta) / static_cast<double>(c.size()));
      gbar += means.back() * (static_cast<double>(c.size()) / pop.stratum_units(h));
    }
    Eigen::MatrixXd per_draw = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      const double phi = static_cast<double>(c.size()) / pop.stratum_units(h);
      const Eigen::VectorXd d = means[static_cast<std::size_t>(i)] - gbar;
      per_draw += phi * d * d.transpose();
      if (design.two_stage()) {
        const int m = design.second_stage.size_for(c.size());
        const double f2 = 1.0 / m - 1.0 / c.size();
        if (f2 > 0.0) {
          const auto s = detail::cluster_g_stats(c, {}, ee, theta);
          per_draw += phi * f2 * s.within;
        }
      }
    }
    acc += wh * wh / nh * per_draw;
  }
  return n * acc;
}

// Single-sample estimate of the same quantity from the observed per-draw
// estimates; needs at least two draws per stratum.
inline Eigen::MatrixXd gamma_d_hat(const Eigen::VectorXd& theta, const SampleSeq& sample,
                                   const FinitePopulation& pop, const EEFunction& ee) {
  const double n = sample.total_draws();
  std::vector<std::vector<Eigen::VectorXd>> per(static_cast<std::size_t>(pop.strata_count()));
  for (const auto& d : sample.draws) {
    const auto& c = pop.cluster(d.stratum, d.cluster);
    Eigen::VectorXd ghat;
    if (d.units.empty()) {
      ghat = cluster_g(c, ee, theta);
    } else {
      ghat = Eigen::VectorXd::Zero(ee.dim);
      for (int j : d.units) ghat += ee.g(c.y.row(j).transpose(), c.x.row(j).transpose(), theta);
      ghat *= static_cast<double>(c.size()) / static_cast<double>(d.units.size());
    }
    per[static_cast<std::size_t>(d.stratum)].push_back(ghat / static_cast<double>(c.size()));
  }
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  for (int h = 0; h < pop.strata_count(); ++h) {
    const auto& u = per[static_cast<std::size_t>(h)];
    const double nh = static_cast<double>(u.size());
    if (nh < 2)
      throw UnsupportedError("gamma_d_hat: design-variance estimation needs n_h >= 2 per stratum");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ee.dim);
    for (const auto& v : u) mean += v;
    mean /= nh;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
    for (const auto& v : u) s += (v - mean) * (v - mean).transpose();
    const double wh = pop.stratum_weight(h);
    acc += wh * wh * s / (nh * (nh - 1.0));
  }
  return n * acc;
}

// ---------------------------------------------------------------------------
// Full sample analysis: point estimate, Jacobian, variance pieces, sandwich
// and per-coordinate confidence intervals.
// ---------------------------------------------------------------------------

struct EEResult {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd gamma_d;
  Eigen::MatrixXd gamma_m;
  double f = 0.0;
  Eigen::MatrixXd gamma;
  NewtonResult diagnostics;
  bool components_clamped = false;
  std::vector<std::pair<double, double>> ci;  // per coordinate
};

inline EEResult ee_analysis(const SampleSeq& sample, const FinitePopulation& pop,
                            const DesignSpec& design, const EEFunction& ee,
                            const Eigen::VectorXd& theta_init, double ci_level = 0.95,
                            bool omit_gamma_m = false, const NewtonOptions& opts = {}) {
  EEResult r;
  r.diagnostics = solve_sample_ee(sample, pop, ee, theta_init, opts);
  r.theta_hat = r.diagnostics.theta;
  r.jacobian = jacobian_hat(r.theta_hat, sample, pop, ee);
  r.gamma_d = gamma_d_hat(r.theta_hat, sample, pop, ee);
  const double n = design.total_draws();
  r.f = n / static_cast<double>(pop.total_clusters());
  if (omit_gamma_m) {
    r.gamma_m = Eigen::MatrixXd::Zero(ee.dim, ee.dim);
  } else {
    const auto comps = variance_components_sample(sample, pop, ee, r.theta_hat);
    r.components_clamped = comps.clamped;
    r.gamma_m = model_variance(comps.sigma2, comps.gamma_adj, pop);
  }
  r.gamma = sandwich(r.jacobian, r.gamma_d, r.gamma_m, omit_gamma_m ? 0.0 : r.f);
  const double z = normal_quantile(0.5 + 0.5 * ci_level);
  for (int c = 0; c < ee.dim; ++c) {
    const double half = z * std::sqrt(std::max(0.0, r.gamma(c, c)) / n);
    r.ci.emplace_back(r.theta_hat(c) - half, r.theta_hat(c) + half);
  }
  return r;
}

}  // namespace twophase
