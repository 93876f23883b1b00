#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/designs.hpp"
#include "twophase/ee.hpp"
#include "twophase/estimators.hpp"
#include "twophase/oracle.hpp"
#include "twophase/population.hpp"
#include "twophase/rng.hpp"
#include "twophase/stats.hpp"

namespace twophase {

// ---------------------------------------------------------------------------
// Replicates are independent work items: replicate r draws from a stream
// derived from (master seed, step, r) and deposits into its own slot, so the
// result is identical for any worker-thread count.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), count));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      try {
        for (;;) {
          const std::size_t chunk = 64;
          const std::size_t begin = next.fetch_add(chunk);
          if (begin >= count) return;
          const std::size_t end = std::min(count, begin + chunk);
          for (std::size_t i = begin; i < end; ++i) fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {
inline Seed exp_stream(std::uint64_t master, std::uint64_t step, std::uint64_t purpose,
                       std::uint64_t index) {
  Seed s{master, 0};
  s = substream(s, 0x100 + step);
  return substream(s, (purpose << 40) ^ index);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment specification and report.
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  enum class Kind {
    DesignClt,
    PosteriorClt,
    AsymptoticIndependence,
    EeCoverage,
    ConditionLadder,
    McVsOracle
  };
  enum class Expect { Nominal, NegativeControl };

  Kind kind = Kind::DesignClt;
  ModelSpec model;
  DesignSpec design;
  EstimatorId estimator = EstimatorId::PpswrMean;
  std::vector<int> ladder{1};
  int replicates = 1000;
  std::uint64_t seed = 0;
  double delta = 1.0;
  double alpha = 0.01;
  double ci_level = 0.95;
  double coverage_lo = 0.93;
  double coverage_hi = 0.97;
  double grid_tol = 0.02;
  bool omit_gamma_m = false;
  Expect expect = Expect::Nominal;

  void validate() const {
    model.validate();
    if (replicates < 100 && kind != Kind::ConditionLadder)
      throw ConfigError("experiment: replicates must be >= 100");
    if (ladder.empty()) throw ConfigError("experiment: ladder must be non-empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
      if (ladder[i] < 1) throw ConfigError("experiment: ladder factors must be >= 1");
      if (i > 0 && ladder[i] <= ladder[i - 1])
        throw ConfigError("experiment: ladder must be strictly increasing");
    }
    if (kind == Kind::ConditionLadder && ladder.size() < 2)
      throw ConfigError("experiment: a condition ladder needs at least two steps");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("experiment: alpha must be in (0,1)");
    if (!(ci_level > 0.0 && ci_level < 1.0))
      throw ConfigError("experiment: ci_level must be in (0,1)");
    if (!(delta > 0.0)) throw ConfigError("experiment: delta must be > 0");
  }
};

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<", "<=", ">=", ">"
  bool pass = false;
};

inline Check make_check(std::string name, double value, std::string relation, double threshold) {
  Check c;
  c.name = std::move(name);
  c.value = value;
  c.threshold = threshold;
  c.relation = std::move(relation);
  if (c.relation == "<") c.pass = value < threshold;
  else if (c.relation == "<=") c.pass = value <= threshold;
  else if (c.relation == ">=") c.pass = value >= threshold;
  else if (c.relation == ">") c.pass = value > threshold;
  else throw std::logic_error("unknown relation");
  return c;
}

struct StepReport {
  int scale = 1;
  bool degenerate = false;
  std::string variance_path;
  std::map<std::string, double> metrics;
  std::vector<Check> checks;
};

struct ReplicateTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ExperimentReport {
  ExperimentSpec::Kind kind = ExperimentSpec::Kind::DesignClt;
  std::vector<StepReport> steps;
  bool pass = true;

  void finalize() {
    pass = true;
    for (const auto& s : steps)
      for (const auto& c : s.checks) pass = pass && c.pass;
  }

  ReplicateTable replicates;
};

namespace detail {

inline ModelSpec scale_model(const ModelSpec& m, int factor) {
  ModelSpec out = m;
  for (auto& s : out.strata) {
    s.n_clusters *= factor;
    if (s.sizes.kind == ClusterSizeLaw::Kind::List) {
      std::vector<int> sizes;
      sizes.reserve(s.sizes.pattern.size() * static_cast<std::size_t>(factor));
      for (int rep = 0; rep < factor; ++rep)
        sizes.insert(sizes.end(), s.sizes.pattern.begin(), s.sizes.pattern.end());
      s.sizes.pattern = std::move(sizes);
    }
  }
  return out;
}

inline DesignSpec scale_design(const DesignSpec& d, int factor) {
  DesignSpec out = d;
  if (out.stratified()) {
    for (auto& nh : out.draws_per_stratum) nh *= factor;
  } else {
    out.n *= factor;
  }
  return out;
}

// Exact (or linearized, for the ratio) design variance of the estimator,
// scaled by the draw count; the string names the path that was used.
inline std::pair<Eigen::MatrixXd, std::string> gamma_dn_for(EstimatorId id,
                                                            const DesignSpec& design,
                                                            const FinitePopulation& pop) {
  const double n = design.total_draws();
  switch (id) {
    case EstimatorId::PpswrMean:
      return {n * ppswr_mean_variance_closed(design, pop), "closed_form"};
    case EstimatorId::Ratio:
      return {ratio_linearized_gamma_d(pop, design), "linearized"};
    case EstimatorId::SampleMean: {
      // Per-draw variance of the drawn cluster total.
      const auto targets = finite_pop_mean(pop);
      const int p = pop.dim_y();
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
      for (int h = 0; h < pop.strata_count(); ++h)
        for (int i = 0; i < pop.clusters_in(h); ++i) {
          const Eigen::VectorXd d = pop.cluster(h, i).total - targets.ybar_n;
          s += d * d.transpose();
        }
      const double big_n = pop.total_clusters();
      if (design.kind == DesignSpec::Kind::Srswr) return {s / big_n, "closed_form"};
      if (design.kind == DesignSpec::Kind::Srswor) {
        const double nn = design.n;
        // n * V_d(mean) for SRSWOR: (1 - n/N) S^2 with divisor N-1.
        return {Eigen::MatrixXd((1.0 - nn / big_n) * s / (big_n - 1.0)), "closed_form"};
      }
      throw UnsupportedError("gamma_dn_for: sample mean needs an SRS design");
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Design CLT: one realized population per ladder step, R design replicates,
// KS distance of the standardized statistic against the standard normal.
// ---------------------------------------------------------------------------

inline ExperimentReport run_design_clt(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  if (spec.model.dim_y() != 1)
    throw ConfigError("design_clt: scalar y required for the standardized statistic");
  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step", "replicate", "estimate", "statistic"};
  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);
    const FinitePopulation pop =
        realize_population(model, detail::exp_stream(spec.seed, t, 0, 0));
    design.validate(pop);
    const auto targets = finite_pop_mean(pop);
    const double target = (spec.estimator == EstimatorId::PpswrMean ? targets.theta_n
                                                                    : targets.ybar_n)(0);
    const auto [gdn, path] = detail::gamma_dn_for(spec.estimator, design, pop);
    const double n = design.total_draws();

    StepReport step;
    step.scale = factor;
    step.variance_path = path;
    step.metrics["gamma_d_n"] = gdn(0, 0);
    step.metrics["target"] = target;

    if (!(gdn(0, 0) > 1e-12)) {
      step.degenerate = true;
      step.checks.push_back(make_check("degenerate_flagged", 1.0, ">=", 1.0));
      report.steps.push_back(std::move(step));
      continue;
    }

    const std::size_t r_count = static_cast<std::size_t>(spec.replicates);
    std::vector<double> estimates(r_count), stats(r_count);
    parallel_for(r_count, threads, [&](std::size_t r) {
      const SampleSeq s = draw_sample(design, pop, detail::exp_stream(spec.seed, t, 1, r));
      const double est = evaluate_estimator(spec.estimator, s, pop, design)(0);
      estimates[r] = est;
      stats[r] = std::sqrt(n) * (est - target) / std::sqrt(gdn(0, 0));
    });
    for (std::size_t r = 0; r < r_count; ++r)
      report.replicates.rows.push_back(
          {static_cast<double>(t), static_cast<double>(r), estimates[r], stats[r]});

    const double ks = ks_distance_normal(stats);
    const auto moments = SampleStats::from(stats);
    step.metrics["ks"] = ks;
    step.metrics["stat_mean"] = moments.mean;
    step.metrics["stat_mean_mc_se"] = moments.se_mean;
    step.metrics["stat_variance"] = moments.variance;
    step.metrics["stat_variance_mc_se"] = moments.se_variance;
    step.checks.push_back(make_check("ks_normal", ks, "<", ks_band(r_count, spec.alpha)));

    // Across-realization stability of the design variance (empirical proxy
    // for a nonstochastic limit).
    std::vector<double> spread;
    for (std::uint64_t j = 0; j < 5; ++j) {
      const FinitePopulation alt =
          realize_population(model, detail::exp_stream(spec.seed, t, 2, j));
      spread.push_back(detail::gamma_dn_for(spec.estimator, design, alt).first(0, 0));
    }
    step.metrics["gamma_d_spread"] =
        *std::max_element(spread.begin(), spread.end()) /
        std::max(1e-300, *std::min_element(spread.begin(), spread.end()));
    report.steps.push_back(std::move(step));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Posterior CLT: fix a without-replacement label set once, then redraw the
// model values on those labels each replicate and standardize their sum.
// ---------------------------------------------------------------------------

inline ExperimentReport run_posterior_clt(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  if (spec.design.kind != DesignSpec::Kind::Srswor)
    throw ConfigError("posterior_clt: the design must be SRSWOR");
  if (spec.model.strata.size() != 1 || spec.model.dim_y() != 1 ||
      spec.model.strata[0].hierarchy.has_value())
    throw ConfigError("posterior_clt: a single stratum of i.i.d. scalar units is required");
  const auto& sm = spec.model.strata[0];
  if (!(sm.sizes.kind == ClusterSizeLaw::Kind::Fixed && sm.sizes.fixed == 1))
    throw ConfigError("posterior_clt: one-stage model required");
  if (std::abs(sm.y[0].mean()) > 1e-9)
    throw ConfigError("posterior_clt: the model must be centered (zero mean)");

  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step", "replicate", "statistic"};
  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);
    const FinitePopulation pop =
        realize_population(model, detail::exp_stream(spec.seed, t, 0, 0));
    const SampleSeq fixed = draw_sample(design, pop, detail::exp_stream(spec.seed, t, 2, 0));
    {
      std::vector<int> labels;
      for (const auto& d : fixed.draws) labels.push_back(pop.flat_label(d.stratum, d.cluster));
      std::sort(labels.begin(), labels.end());
      if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
        throw std::logic_error("posterior_clt: repeated labels in a without-replacement sample");
    }
    const double sigma2 = model.strata[0].y[0].variance();
    const double n = design.n;

    StepReport step;
    step.scale = factor;
    step.metrics["sigma2"] = sigma2;
    if (!(sigma2 > 0.0)) {
      step.degenerate = true;
      step.checks.push_back(make_check("degenerate_flagged", 1.0, ">=", 1.0));
      report.steps.push_back(std::move(step));
      continue;
    }

    const std::size_t r_count = static_cast<std::size_t>(spec.replicates);
    std::vector<double> stats(r_count);
    const Family family = model.strata[0].y[0];
    parallel_for(r_count, threads, [&](std::size_t r) {
      Rng rng{detail::exp_stream(spec.seed, t, 1, r)};
      double sum = 0.0;
      for (int k = 0; k < static_cast<int>(n); ++k) sum += family.sample(rng);
      stats[r] = sum / std::sqrt(sigma2 * n);
    });
    for (std::size_t r = 0; r < r_count; ++r)
      report.replicates.rows.push_back({static_cast<double>(t), static_cast<double>(r), stats[r]});

    const double ks = ks_distance_normal(stats);
    step.metrics["ks"] = ks;
    step.checks.push_back(make_check("ks_normal", ks, "<", ks_band(r_count, spec.alpha)));

    // Two-point families make the statistic a lattice variable; its exact law
    // is a shifted binomial, so report how far that law itself sits from the
    // normal (the floor under the empirical KS) and check the draws against
    // the exact law with the same band.
    if (family.enumerable() && family.support().size() == 2) {
      const auto support = family.support();
      const double lo = support[0].first, hi = support[1].first, q = support[1].second;
      const double denom = std::sqrt(sigma2 * n);
      const int nn = static_cast<int>(n);
      std::vector<double> atoms(static_cast<std::size_t>(nn) + 1);
      std::vector<double> pmf(static_cast<std::size_t>(nn) + 1);
      for (int k = 0; k <= nn; ++k) {
        atoms[static_cast<std::size_t>(k)] = (nn * lo + k * (hi - lo)) / denom;
        pmf[static_cast<std::size_t>(k)] =
            std::exp(std::lgamma(nn + 1.0) - std::lgamma(k + 1.0) - std::lgamma(nn - k + 1.0) +
                     k * std::log(q) + (nn - k) * std::log1p(-q));
      }
      std::vector<double> sorted = stats;
      std::sort(sorted.begin(), sorted.end());
      double lattice_sup = 0.0, exact_gap = 0.0, exact_cdf = 0.0;
      for (int k = 0; k <= nn; ++k) {
        const double atom = atoms[static_cast<std::size_t>(k)];
        // Count replicates up to the midpoint between this atom and the next.
        const double boundary =
            k < nn ? 0.5 * (atom + atoms[static_cast<std::size_t>(k) + 1])
                   : std::numeric_limits<double>::infinity();
        const double below =
            static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(),
                                                 atom - 0.25 / denom) -
                                sorted.begin()) / static_cast<double>(r_count);
        const double upto =
            static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), boundary) -
                                sorted.begin()) / static_cast<double>(r_count);
        lattice_sup = std::max(lattice_sup, std::abs(exact_cdf - normal_cdf(atom)));
        exact_gap = std::max(exact_gap, std::abs(below - exact_cdf));
        exact_cdf += pmf[static_cast<std::size_t>(k)];
        lattice_sup = std::max(lattice_sup, std::abs(exact_cdf - normal_cdf(atom)));
        exact_gap = std::max(exact_gap, std::abs(upto - exact_cdf));
      }
      step.metrics["lattice_sup"] = lattice_sup;
      step.metrics["ks_vs_exact"] = exact_gap;
      step.checks.push_back(
          make_check("dkw_exact_law", exact_gap, "<=", ks_band(r_count, spec.alpha)));
    }
    report.steps.push_back(std::move(step));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Asymptotic independence of the design term A = sqrt(n)(theta_hat - target)
// and the model term B = sqrt(N)(Ybar_N - mu_N): correlation, a quartile-grid
// factorization gap, and the variance additivity Var(A + sqrt(f) B) =
// Gamma_d + f Gamma_m.
// ---------------------------------------------------------------------------

inline ExperimentReport run_asymptotic_independence(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  if (spec.model.dim_y() != 1) throw ConfigError("asymptotic_independence: scalar y required");
  for (const auto& sm : spec.model.strata)
    if (!(sm.sizes.kind == ClusterSizeLaw::Kind::Fixed && sm.sizes.fixed == 1))
      throw ConfigError("asymptotic_independence: one-stage model required");

  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step", "replicate", "a", "b"};
  const auto moments = model_moments(spec.model);

  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);

    // Model variance of sqrt(N) Ybar_N for independent one-stage units.
    double gamma_m = 0.0, total_clusters = 0.0;
    for (const auto& sm : model.strata) total_clusters += sm.n_clusters;
    for (std::size_t h = 0; h < model.strata.size(); ++h)
      gamma_m += static_cast<double>(model.strata[h].n_clusters) * moments.strata[h].var(0);
    gamma_m /= total_clusters;
    const double mu_n = moments.mu_n(0);

    const std::size_t r_count = static_cast<std::size_t>(spec.replicates);
    std::vector<double> a(r_count), b(r_count), gdn(r_count);
    parallel_for(r_count, threads, [&](std::size_t r) {
      const FinitePopulation pop =
          realize_population(model, detail::exp_stream(spec.seed, t, 2, r));
      const SampleSeq s = draw_sample(design, pop, detail::exp_stream(spec.seed, t, 1, r));
      const auto targets = finite_pop_mean(pop);
      const double target = (spec.estimator == EstimatorId::PpswrMean ? targets.theta_n
                                                                      : targets.ybar_n)(0);
      const double est = evaluate_estimator(spec.estimator, s, pop, design)(0);
      const double n = design.total_draws();
      const double big_n = pop.total_clusters();
      a[r] = std::sqrt(n) * (est - target);
      b[r] = std::sqrt(big_n) * (targets.ybar_n(0) - mu_n);
      gdn[r] = detail::gamma_dn_for(spec.estimator, design, pop).first(0, 0);
    });
    for (std::size_t r = 0; r < r_count; ++r)
      report.replicates.rows.push_back(
          {static_cast<double>(t), static_cast<double>(r), a[r], b[r]});

    StepReport step;
    step.scale = factor;
    const double n = design.total_draws();
    double big_n = 0.0;
    for (const auto& sm : model.strata) big_n += sm.n_clusters;
    const double f = n / big_n;
    step.metrics["f"] = f;
    step.metrics["gamma_m"] = gamma_m;

    const auto stats_a = SampleStats::from(a);
    if (!(stats_a.variance > 1e-12)) {
      step.degenerate = true;
      step.checks.push_back(make_check("degenerate_flagged", 1.0, ">=", 1.0));
      report.steps.push_back(std::move(step));
      continue;
    }

    const double gamma_d_mean = pairwise_sum(gdn) / static_cast<double>(r_count);
    step.metrics["gamma_d"] = gamma_d_mean;

    const double corr = correlation(a, b);
    step.metrics["corr"] = corr;
    step.metrics["corr_mc_se"] = 1.0 / std::sqrt(static_cast<double>(r_count));
    step.checks.push_back(make_check("abs_correlation", std::abs(corr), "<",
                                     4.0 / std::sqrt(static_cast<double>(r_count))));

    // Quartile-grid factorization gap.
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double gap = 0.0;
    for (double qa : {0.25, 0.5, 0.75}) {
      for (double qb : {0.25, 0.5, 0.75}) {
        const double ta = empirical_quantile(sa, qa);
        const double tb = empirical_quantile(sb, qb);
        double joint = 0.0, fa = 0.0, fb = 0.0;
        for (std::size_t r = 0; r < r_count; ++r) {
          const bool ia = a[r] <= ta, ib = b[r] <= tb;
          joint += ia && ib ? 1.0 : 0.0;
          fa += ia ? 1.0 : 0.0;
          fb += ib ? 1.0 : 0.0;
        }
        const double rr = static_cast<double>(r_count);
        gap = std::max(gap, std::abs(joint / rr - (fa / rr) * (fb / rr)));
      }
    }
    step.metrics["grid_gap"] = gap;
    step.checks.push_back(make_check("grid_factorization_gap", gap, "<", spec.grid_tol));

    // Variance additivity.
    std::vector<double> combined(r_count);
    for (std::size_t r = 0; r < r_count; ++r) combined[r] = a[r] + std::sqrt(f) * b[r];
    const auto stats_c = SampleStats::from(combined);
    const double predicted = gamma_d_mean + f * gamma_m;
    step.metrics["var_combined"] = stats_c.variance;
    step.metrics["var_predicted"] = predicted;
    step.metrics["var_mc_se"] = stats_c.se_variance;
    step.checks.push_back(make_check("variance_additivity_gap",
                                     std::abs(stats_c.variance - predicted), "<=",
                                     3.0 * stats_c.se_variance));
    report.steps.push_back(std::move(step));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Sandwich-interval coverage for the mean estimating function. Each replicate
// realizes a population, draws a sample, solves the sample EE and forms the
// per-coordinate interval theta_hat +- z sqrt(Gamma_hat / n).
// ---------------------------------------------------------------------------

inline ExperimentReport run_ee_coverage(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  const auto moments = model_moments(spec.model);
  const Eigen::VectorXd theta0 = moments.theta_n;
  const EEFunction ee = EEFunction::mean(spec.model.dim_y());

  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step",  "replicate", "solver_ok",
                               "covered", "theta_hat", "ci_lo", "ci_hi"};
  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);

    const std::size_t r_count = static_cast<std::size_t>(spec.replicates);
    std::vector<int> ok(r_count, 0), covered(r_count, 0);
    std::vector<double> theta_col(r_count, 0.0), lo_col(r_count, 0.0), hi_col(r_count, 0.0);
    std::vector<double> fvals(r_count, 0.0);
    parallel_for(r_count, threads, [&](std::size_t r) {
      const FinitePopulation pop =
          realize_population(model, detail::exp_stream(spec.seed, t, 2, r));
      const SampleSeq s = draw_sample(design, pop, detail::exp_stream(spec.seed, t, 1, r));
      try {
        const EEResult res =
            ee_analysis(s, pop, design, ee, Eigen::VectorXd::Zero(ee.dim), spec.ci_level,
                        spec.omit_gamma_m);
        ok[r] = 1;
        bool cov = true;
        for (int c = 0; c < ee.dim; ++c)
          cov = cov && theta0(c) >= res.ci[static_cast<std::size_t>(c)].first &&
                theta0(c) <= res.ci[static_cast<std::size_t>(c)].second;
        covered[r] = cov ? 1 : 0;
        theta_col[r] = res.theta_hat(0);
        lo_col[r] = res.ci[0].first;
        hi_col[r] = res.ci[0].second;
        fvals[r] = res.f;
      } catch (const SolveError&) {
        ok[r] = 0;
      }
    });
    for (std::size_t r = 0; r < r_count; ++r)
      report.replicates.rows.push_back({static_cast<double>(t), static_cast<double>(r),
                                        static_cast<double>(ok[r]),
                                        static_cast<double>(covered[r]), theta_col[r], lo_col[r],
                                        hi_col[r]});

    double n_ok = 0.0, n_cov = 0.0;
    for (std::size_t r = 0; r < r_count; ++r) {
      n_ok += ok[r];
      n_cov += covered[r];
    }
    const double failure_rate = 1.0 - n_ok / static_cast<double>(r_count);
    const double coverage = n_ok > 0.0 ? n_cov / n_ok : 0.0;

    StepReport step;
    step.scale = factor;
    step.metrics["coverage"] = coverage;
    step.metrics["coverage_mc_se"] =
        n_ok > 0.0 ? std::sqrt(std::max(0.0, coverage * (1.0 - coverage)) / n_ok) : 0.0;
    step.metrics["solver_failure_rate"] = failure_rate;
    step.metrics["f"] = n_ok > 0.0 ? fvals[0] : 0.0;
    step.checks.push_back(make_check("solver_failure_rate", failure_rate, "<", 0.001));
    if (spec.expect == ExperimentSpec::Expect::Nominal) {
      step.checks.push_back(make_check("coverage_lower", coverage, ">=", spec.coverage_lo));
      step.checks.push_back(make_check("coverage_upper", coverage, "<=", spec.coverage_hi));
    } else {
      // Negative control: the interval must undercover.
      step.checks.push_back(make_check("undercoverage", coverage, "<", spec.coverage_lo));
    }
    report.steps.push_back(std::move(step));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Condition ladder: realized Liapunov statistic and the per-draw moment sum
// across increasing population sizes; flat (ratio <= 2 over the top half)
// passes, divergence passes only as a declared negative control.
// ---------------------------------------------------------------------------

inline ExperimentReport run_condition_ladder(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  (void)threads;
  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step", "scale",    "n_clusters", "n_draws",
                               "m1",   "c1_prime", "c1",         "c2"};
  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);
    const FinitePopulation pop =
        realize_population(model, detail::exp_stream(spec.seed, t, 0, 0));
    design.validate(pop);
    const double m1 = liapunov_m1(pop, spec.delta);
    const double c1p = check_c1_prime(pop, spec.delta);
    const double c1 = condition_c1(design, pop, spec.delta);
    const double c2 = condition_c2(design, pop);
    report.replicates.rows.push_back({static_cast<double>(t), static_cast<double>(factor),
                                      static_cast<double>(pop.total_clusters()),
                                      static_cast<double>(design.total_draws()), m1, c1p, c1,
                                      c2});
  }
  StepReport step;
  step.scale = spec.ladder.back();
  const std::size_t half = spec.ladder.size() / 2;
  auto top_half_ratio = [&](int column) {
    double lo = report.replicates.rows[half][static_cast<std::size_t>(column)];
    double hi = lo;
    for (std::size_t t = half; t < report.replicates.rows.size(); ++t) {
      lo = std::min(lo, report.replicates.rows[t][static_cast<std::size_t>(column)]);
      hi = std::max(hi, report.replicates.rows[t][static_cast<std::size_t>(column)]);
    }
    return lo > 0.0 ? hi / lo : (hi > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  };
  const double ratio = top_half_ratio(5);      // centered per-draw moment sum
  step.metrics["c1_prime_top_half_ratio"] = ratio;
  step.metrics["m1_top_half_ratio"] = top_half_ratio(4);
  step.metrics["c1_top_half_ratio"] = top_half_ratio(6);
  if (spec.expect == ExperimentSpec::Expect::Nominal) {
    step.checks.push_back(make_check("c1_prime_flat", ratio, "<=", 2.0));
  } else {
    step.checks.push_back(make_check("c1_prime_divergent", ratio, ">", 2.0));
  }
  report.steps.push_back(std::move(step));
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Monte Carlo against the exact design law: the empirical CDF of the
// estimator over R draws must stay inside the DKW band around the enumerated
// CDF.
// ---------------------------------------------------------------------------

inline ExperimentReport run_mc_vs_oracle(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  if (spec.model.dim_y() != 1) throw ConfigError("mc_vs_oracle: scalar y required");
  ExperimentReport report;
  report.kind = spec.kind;
  report.replicates.columns = {"step", "replicate", "estimate"};
  for (std::size_t t = 0; t < spec.ladder.size(); ++t) {
    const int factor = spec.ladder[t];
    const ModelSpec model = detail::scale_model(spec.model, factor);
    const DesignSpec design = detail::scale_design(spec.design, factor);
    const FinitePopulation pop =
        realize_population(model, detail::exp_stream(spec.seed, t, 0, 0));
    const DesignLaw law = design_law(pop, design, spec.estimator);

    const std::size_t r_count = static_cast<std::size_t>(spec.replicates);
    std::vector<double> estimates(r_count);
    parallel_for(r_count, threads, [&](std::size_t r) {
      const SampleSeq s = draw_sample(design, pop, detail::exp_stream(spec.seed, t, 1, r));
      estimates[r] = evaluate_estimator(spec.estimator, s, pop, design)(0);
    });
    for (std::size_t r = 0; r < r_count; ++r)
      report.replicates.rows.push_back(
          {static_cast<double>(t), static_cast<double>(r), estimates[r]});

    std::vector<double> sorted = estimates;
    std::sort(sorted.begin(), sorted.end());
    const double rr = static_cast<double>(r_count);
    double sup = 0.0, exact_cdf = 0.0;
    for (std::size_t i = 0; i < law.atoms.size(); ++i) {
      const double below =
          static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), law.atoms[i]) -
                              sorted.begin()) / rr;
      const double upto =
          static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), law.atoms[i]) -
                              sorted.begin()) / rr;
      sup = std::max(sup, std::abs(below - exact_cdf));  // just left of the atom
      exact_cdf += law.mass[i];
      sup = std::max(sup, std::abs(upto - exact_cdf));   // at the atom
    }

    StepReport step;
    step.scale = factor;
    step.metrics["sup_cdf_gap"] = sup;
    step.metrics["atoms"] = static_cast<double>(law.atoms.size());
    step.checks.push_back(make_check("dkw_band", sup, "<=", ks_band(r_count, spec.alpha)));
    report.steps.push_back(std::move(step));
  }
  report.finalize();
  return report;
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec, int threads = 1) {
  switch (spec.kind) {
    case ExperimentSpec::Kind::DesignClt: return run_design_clt(spec, threads);
    case ExperimentSpec::Kind::PosteriorClt: return run_posterior_clt(spec, threads);
    case ExperimentSpec::Kind::AsymptoticIndependence:
      return run_asymptotic_independence(spec, threads);
    case ExperimentSpec::Kind::EeCoverage: return run_ee_coverage(spec, threads);
    case ExperimentSpec::Kind::ConditionLadder: return run_condition_ladder(spec, threads);
    case ExperimentSpec::Kind::McVsOracle: return run_mc_vs_oracle(spec, threads);
  }
  throw std::logic_error("unreachable");
}

}  // namespace twophase
