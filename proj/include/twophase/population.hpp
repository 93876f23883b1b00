#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twophase/common.hpp"
#include "twophase/rng.hpp"
#include "twophase/stats.hpp"

namespace twophase {

// ---------------------------------------------------------------------------
// Distribution families for unit values, sizes and hierarchy parameters.
// Every family takes an optional affine transform: value = shift + scale * X.
// ---------------------------------------------------------------------------

struct Family {
  enum class Kind { PointMass, Bernoulli, Normal, Gamma, Pareto };

  Kind kind = Kind::PointMass;
  double a = 0.0;  // value | success prob | mean | shape | tail index
  double b = 0.0;  // unused | unused | variance | scale | minimum
  double shift = 0.0;
  double scale = 1.0;

  static Family point_mass(double c) { return {Kind::PointMass, c, 0.0, 0.0, 1.0}; }
  static Family bernoulli(double q) { return {Kind::Bernoulli, q, 0.0, 0.0, 1.0}; }
  static Family normal(double mean, double var) { return {Kind::Normal, mean, var, 0.0, 1.0}; }
  static Family gamma(double shape, double scale) { return {Kind::Gamma, shape, scale, 0.0, 1.0}; }
  static Family pareto(double alpha, double xm) { return {Kind::Pareto, alpha, xm, 0.0, 1.0}; }

  Family with_affine(double sh, double sc) const {
    Family f = *this;
    f.shift = sh;
    f.scale = sc;
    return f;
  }

  void validate() const {
    switch (kind) {
      case Kind::PointMass:
        break;
      case Kind::Bernoulli:
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("bernoulli: q must be in [0,1]");
        break;
      case Kind::Normal:
        if (!(b >= 0.0)) throw ConfigError("normal: variance must be >= 0");
        break;
      case Kind::Gamma:
        if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("gamma: shape and scale must be > 0");
        break;
      case Kind::Pareto:
        if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("pareto: alpha and minimum must be > 0");
        break;
    }
    if (!std::isfinite(shift) || !std::isfinite(scale)) throw ConfigError("family: bad affine");
  }

  double base_mean() const {
    switch (kind) {
      case Kind::PointMass: return a;
      case Kind::Bernoulli: return a;
      case Kind::Normal: return a;
      case Kind::Gamma: return a * b;
      case Kind::Pareto:
        if (!(a > 1.0)) throw UnsupportedError("pareto: mean requires alpha > 1");
        return a * b / (a - 1.0);
    }
    throw std::logic_error("unreachable");
  }

  double base_variance() const {
    switch (kind) {
      case Kind::PointMass: return 0.0;
      case Kind::Bernoulli: return a * (1.0 - a);
      case Kind::Normal: return b;
      case Kind::Gamma: return a * b * b;
      case Kind::Pareto: {
        if (!(a > 2.0)) throw UnsupportedError("pareto: variance requires alpha > 2");
        const double m = a * b / (a - 1.0);
        return a * b * b / ((a - 1.0) * (a - 1.0) * (a - 2.0)) + 0.0 * m;
      }
    }
    throw std::logic_error("unreachable");
  }

  double mean() const { return shift + scale * base_mean(); }
  double variance() const { return scale * scale * base_variance(); }

  // E|Y|^order. Closed form for discrete kinds and the (unshifted) Pareto,
  // quadrature for Normal and Gamma.
  double abs_moment(double order) const {
    if (!(order > 0.0)) throw std::invalid_argument("abs_moment: order must be > 0");
    switch (kind) {
      case Kind::PointMass:
        return std::pow(std::abs(shift + scale * a), order);
      case Kind::Bernoulli:
        return (1.0 - a) * std::pow(std::abs(shift), order) +
               a * std::pow(std::abs(shift + scale), order);
      case Kind::Normal: {
        const double mu = a, sd = std::sqrt(b);
        if (sd == 0.0) return std::pow(std::abs(shift + scale * mu), order);
        auto f = [&](double x) {
          return std::pow(std::abs(shift + scale * x), order) * normal_pdf((x - mu) / sd) / sd;
        };
        return integrate(f, mu - 14.0 * sd, mu + 14.0 * sd, 1e-13);
      }
      case Kind::Gamma: {
        const double k = a, th = b;
        const double upper = th * (20.0 * k + 200.0);
        const double lg = std::lgamma(k);
        auto f = [&](double x) {
          if (x <= 0.0) return 0.0;
          const double logpdf = (k - 1.0) * std::log(x) - x / th - lg - k * std::log(th);
          return std::pow(std::abs(shift + scale * x), order) * std::exp(logpdf);
        };
        return integrate(f, 0.0, upper, 1e-13);
      }
      case Kind::Pareto: {
        if (shift != 0.0) throw UnsupportedError("pareto: abs moments only for shift = 0");
        if (!(a > order))
          throw UnsupportedError("pareto: E|Y|^" + std::to_string(order) +
                                 " is infinite for alpha <= order");
        return std::pow(std::abs(scale) * b, order) * a / (a - order);
      }
    }
    throw std::logic_error("unreachable");
  }

  bool enumerable() const { return kind == Kind::PointMass || kind == Kind::Bernoulli; }

  // (value, probability) pairs for enumerable kinds.
  std::vector<std::pair<double, double>> support() const {
    switch (kind) {
      case Kind::PointMass:
        return {{shift + scale * a, 1.0}};
      case Kind::Bernoulli:
        return {{shift, 1.0 - a}, {shift + scale, a}};
      default:
        throw UnsupportedError("family has no finite support");
    }
  }

  double sample(Rng& rng) const {
    double x;
    switch (kind) {
      case Kind::PointMass: x = a; break;
      case Kind::Bernoulli: x = rng.bernoulli(a) ? 1.0 : 0.0; break;
      case Kind::Normal: x = rng.normal(a, std::sqrt(b)); break;
      case Kind::Gamma: x = rng.gamma(a, b); break;
      case Kind::Pareto: x = rng.pareto(a, b); break;
      default: throw std::logic_error("unreachable");
    }
    return shift + scale * x;
  }
};

// Cluster-size law. Sizes are treated as fixed configuration once realized:
// model statements about the hierarchy are conditional on them.
struct ClusterSizeLaw {
  enum class Kind { Fixed, List, Cycle, UniformInt };

  Kind kind = Kind::Fixed;
  int fixed = 1;
  std::vector<int> pattern;  // List: one entry per cluster; Cycle: repeated
  int lo = 1, hi = 1;

  static ClusterSizeLaw all_equal(int m) { return {Kind::Fixed, m, {}, 1, 1}; }
  static ClusterSizeLaw list(std::vector<int> sizes) { return {Kind::List, 1, std::move(sizes), 1, 1}; }
  static ClusterSizeLaw cycle(std::vector<int> p) { return {Kind::Cycle, 1, std::move(p), 1, 1}; }
  static ClusterSizeLaw uniform(int lo, int hi) { return {Kind::UniformInt, 1, {}, lo, hi}; }

  void validate(int n_clusters) const {
    switch (kind) {
      case Kind::Fixed:
        if (fixed < 1) throw ConfigError("cluster sizes must be >= 1");
        break;
      case Kind::List:
        if (static_cast<int>(pattern.size()) != n_clusters)
          throw ConfigError("size list length must equal the number of clusters");
        [[fallthrough]];
      case Kind::Cycle:
        if (pattern.empty()) throw ConfigError("size pattern must be non-empty");
        for (int m : pattern)
          if (m < 1) throw ConfigError("cluster sizes must be >= 1");
        break;
      case Kind::UniformInt:
        if (lo < 1 || hi < lo) throw ConfigError("uniform size law requires 1 <= lo <= hi");
        break;
    }
  }

  bool deterministic() const { return kind != Kind::UniformInt; }

  int size_for(int cluster_index, Rng& rng) const {
    switch (kind) {
      case Kind::Fixed: return fixed;
      case Kind::List: return pattern[static_cast<std::size_t>(cluster_index)];
      case Kind::Cycle: return pattern[static_cast<std::size_t>(cluster_index) % pattern.size()];
      case Kind::UniformInt:
        return lo + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }
    throw std::logic_error("unreachable");
  }

  double mean_size() const {
    switch (kind) {
      case Kind::Fixed: return fixed;
      case Kind::List:
      case Kind::Cycle: {
        double s = 0.0;
        for (int m : pattern) s += m;
        return s / static_cast<double>(pattern.size());
      }
      case Kind::UniformInt: return 0.5 * (lo + hi);
    }
    throw std::logic_error("unreachable");
  }
};

// Cluster-level (mu, sigma^2) pair drawn i.i.d. per cluster; units are then
// Normal(mu, sigma^2). gamma_h = Var(mu law), sigma_h^2 = E(sigma^2 law).
struct TwoStageHierarchy {
  Family mu_law;
  Family sigma2_law;

  void validate() const {
    mu_law.validate();
    sigma2_law.validate();
    // sigma^2 draws must be nonnegative.
    switch (sigma2_law.kind) {
      case Family::Kind::PointMass:
        if (sigma2_law.shift + sigma2_law.scale * sigma2_law.a < 0.0)
          throw ConfigError("hierarchy: sigma2 law must be nonnegative");
        break;
      case Family::Kind::Gamma:
      case Family::Kind::Pareto:
        if (sigma2_law.shift < 0.0 || sigma2_law.scale < 0.0)
          throw ConfigError("hierarchy: sigma2 law must be nonnegative");
        break;
      default:
        throw ConfigError("hierarchy: sigma2 law must have nonnegative support");
    }
  }
};

struct StratumModel {
  int n_clusters = 0;
  ClusterSizeLaw sizes;
  std::vector<Family> y;           // one family per y component; empty iff hierarchy set
  std::vector<Family> x;           // covariate families, may be empty
  std::optional<Family> z;         // one-stage size variable; default z = cluster size
  std::optional<TwoStageHierarchy> hierarchy;

  void validate() const {
    if (n_clusters < 1) throw ConfigError("stratum must contain at least one cluster");
    sizes.validate(n_clusters);
    if (hierarchy.has_value()) {
      if (!y.empty()) throw ConfigError("stratum: specify either y families or a hierarchy");
      hierarchy->validate();
    } else {
      if (y.empty()) throw ConfigError("stratum: y families missing");
      for (const auto& f : y) f.validate();
    }
    for (const auto& f : x) f.validate();
    if (z.has_value()) {
      z->validate();
      if (!(sizes.kind == ClusterSizeLaw::Kind::Fixed && sizes.fixed == 1))
        throw ConfigError("a z law is only supported for one-stage strata (all sizes 1)");
      // z must be strictly positive.
      switch (z->kind) {
        case Family::Kind::PointMass:
          if (z->shift + z->scale * z->a <= 0.0) throw ConfigError("z law must be > 0");
          break;
        case Family::Kind::Gamma:
        case Family::Kind::Pareto:
          if (z->shift < 0.0 || z->scale <= 0.0) throw ConfigError("z law must be > 0");
          break;
        default:
          throw ConfigError("z law must have strictly positive support");
      }
    }
  }

  int dim_y() const { return hierarchy.has_value() ? 1 : static_cast<int>(y.size()); }
};

struct ModelSpec {
  std::vector<StratumModel> strata;

  void validate() const {
    if (strata.empty()) throw ConfigError("model must contain at least one stratum");
    for (const auto& s : strata) s.validate();
    for (const auto& s : strata) {
      if (s.dim_y() != strata.front().dim_y())
        throw ConfigError("y dimension must be constant across strata");
      if (s.x.size() != strata.front().x.size())
        throw ConfigError("x dimension must be constant across strata");
    }
  }

  int dim_y() const { return strata.front().dim_y(); }
  int dim_x() const { return static_cast<int>(strata.front().x.size()); }
  int total_clusters() const {
    int n = 0;
    for (const auto& s : strata) n += s.n_clusters;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Realized finite population.
// ---------------------------------------------------------------------------

struct Cluster {
  Eigen::MatrixXd y;       // size x p unit values
  Eigen::MatrixXd x;       // size x k covariates
  double z = 1.0;          // size variable (q = 1)
  Eigen::VectorXd total;   // componentwise sum of unit y values

  int size() const { return static_cast<int>(y.rows()); }
  Eigen::VectorXd mean() const { return total / static_cast<double>(size()); }
};

struct Stratum {
  std::vector<Cluster> clusters;
};

class FinitePopulation {
 public:
  FinitePopulation(std::vector<Stratum> strata, int p, int k)
      : strata_(std::move(strata)), p_(p), k_(k) {
    if (strata_.empty()) throw ConfigError("population must contain at least one stratum");
    units_per_stratum_.resize(strata_.size(), 0.0);
    for (std::size_t h = 0; h < strata_.size(); ++h) {
      if (strata_[h].clusters.empty()) throw ConfigError("empty stratum in population");
      for (const auto& c : strata_[h].clusters) {
        if (c.size() < 1) throw ConfigError("cluster with no units");
        if (c.y.cols() != p_ || (k_ > 0 && c.x.cols() != k_))
          throw ConfigError("inconsistent value dimensions in population");
        if (!(c.z > 0.0)) throw ConfigError("cluster z must be > 0");
        units_per_stratum_[h] += static_cast<double>(c.size());
        total_units_ += static_cast<double>(c.size());
      }
      total_clusters_ += static_cast<int>(strata_[h].clusters.size());
    }
    double wsum = 0.0;
    for (double mh : units_per_stratum_) wsum += mh / total_units_;
    if (std::abs(wsum - 1.0) > 1e-12) throw ConfigError("stratum weights do not sum to 1");
  }

  int strata_count() const { return static_cast<int>(strata_.size()); }
  int clusters_in(int h) const { return static_cast<int>(strata_[h].clusters.size()); }
  int total_clusters() const { return total_clusters_; }          // N
  double stratum_units(int h) const { return units_per_stratum_[h]; }  // M_h
  double total_units() const { return total_units_; }             // M
  double stratum_weight(int h) const { return units_per_stratum_[h] / total_units_; }  // W_h
  int dim_y() const { return p_; }
  int dim_x() const { return k_; }

  const Cluster& cluster(int h, int i) const { return strata_[h].clusters[i]; }
  const std::vector<Stratum>& strata() const { return strata_; }

  bool one_stage() const {
    for (const auto& s : strata_)
      for (const auto& c : s.clusters)
        if (c.size() != 1) return false;
    return true;
  }

  // Flat label <-> (stratum, cluster); labels run stratum-major.
  std::pair<int, int> label(int flat) const {
    for (std::size_t h = 0; h < strata_.size(); ++h) {
      const int nh = static_cast<int>(strata_[h].clusters.size());
      if (flat < nh) return {static_cast<int>(h), flat};
      flat -= nh;
    }
    throw std::out_of_range("label out of range");
  }
  int flat_label(int h, int i) const {
    int base = 0;
    for (int g = 0; g < h; ++g) base += clusters_in(g);
    return base + i;
  }

 private:
  std::vector<Stratum> strata_;
  int p_ = 1;
  int k_ = 0;
  int total_clusters_ = 0;
  double total_units_ = 0.0;
  std::vector<double> units_per_stratum_;
};

// Realize a finite population from the model. Pure function of (model, seed).
inline FinitePopulation realize_population(const ModelSpec& model, Seed seed) {
  model.validate();
  Rng rng{seed};
  const int p = model.dim_y();
  const int k = model.dim_x();
  std::vector<Stratum> strata;
  strata.reserve(model.strata.size());
  for (const auto& sm : model.strata) {
    Stratum st;
    st.clusters.reserve(static_cast<std::size_t>(sm.n_clusters));
    for (int i = 0; i < sm.n_clusters; ++i) {
      Cluster c;
      const int m = sm.sizes.size_for(i, rng);
      c.y.resize(m, p);
      c.x.resize(m, k);
      if (sm.hierarchy.has_value()) {
        const double mu = sm.hierarchy->mu_law.sample(rng);
        const double s2 = std::max(0.0, sm.hierarchy->sigma2_law.sample(rng));
        const double sd = std::sqrt(s2);
        for (int j = 0; j < m; ++j) c.y(j, 0) = rng.normal(mu, sd);
      } else {
        for (int j = 0; j < m; ++j)
          for (int comp = 0; comp < p; ++comp) c.y(j, comp) = sm.y[comp].sample(rng);
      }
      for (int j = 0; j < m; ++j)
        for (int comp = 0; comp < k; ++comp) c.x(j, comp) = sm.x[comp].sample(rng);
      c.z = sm.z.has_value() ? sm.z->sample(rng) : static_cast<double>(m);
      c.total = c.y.colwise().sum().transpose();
      st.clusters.push_back(std::move(c));
    }
    strata.push_back(std::move(st));
  }
  return FinitePopulation(std::move(strata), p, k);
}

// ---------------------------------------------------------------------------
// Model moments.
// ---------------------------------------------------------------------------

struct StratumMoments {
  Eigen::VectorXd mu;        // unit-level mean
  Eigen::VectorXd var;       // unit-level marginal variance
  double sigma2_within = 0;  // E(sigma_hi^2) under the hierarchy, else unit variance
  double gamma_between = 0;  // Var(mu_hi) under the hierarchy, else 0
  double mean_size = 1.0;
};

struct ModelMoments {
  std::vector<StratumMoments> strata;
  Eigen::VectorXd mu_n;     // expectation of the per-cluster mean of totals
  Eigen::VectorXd theta_n;  // expectation of the size-weighted mean (unit weighted)
};

inline ModelMoments model_moments(const ModelSpec& model) {
  model.validate();
  const int p = model.dim_y();
  ModelMoments out;
  Eigen::VectorXd cluster_total_sum = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd unit_weighted = Eigen::VectorXd::Zero(p);
  double total_clusters = 0.0, total_units = 0.0;
  for (const auto& sm : model.strata) {
    StratumMoments m;
    m.mean_size = sm.sizes.mean_size();
    m.mu.resize(p);
    m.var.resize(p);
    if (sm.hierarchy.has_value()) {
      m.mu(0) = sm.hierarchy->mu_law.mean();
      m.gamma_between = sm.hierarchy->mu_law.variance();
      m.sigma2_within = sm.hierarchy->sigma2_law.mean();
      m.var(0) = m.sigma2_within + m.gamma_between;
    } else {
      for (int c = 0; c < p; ++c) {
        m.mu(c) = sm.y[c].mean();
        m.var(c) = sm.y[c].variance();
      }
      m.sigma2_within = m.var(0);
      m.gamma_between = 0.0;
    }
    const double nh = static_cast<double>(sm.n_clusters);
    cluster_total_sum += nh * m.mean_size * m.mu;
    unit_weighted += nh * m.mean_size * m.mu;
    total_clusters += nh;
    total_units += nh * m.mean_size;
    out.strata.push_back(std::move(m));
  }
  out.mu_n = cluster_total_sum / total_clusters;
  out.theta_n = unit_weighted / total_units;
  return out;
}

// ---------------------------------------------------------------------------
// Liapunov-type moment statistic: average (2+delta)-th absolute moment of the
// cluster totals. The model form needs one-stage strata (totals = units); the
// realized form is the plug-in on any population.
// ---------------------------------------------------------------------------

inline double liapunov_m1(const ModelSpec& model, double delta) {
  model.validate();
  if (!(delta > 0.0)) throw std::invalid_argument("liapunov_m1: delta must be > 0");
  if (model.dim_y() != 1) throw UnsupportedError("liapunov_m1: model form requires scalar y");
  double acc = 0.0, n = 0.0;
  for (const auto& sm : model.strata) {
    if (!(sm.sizes.kind == ClusterSizeLaw::Kind::Fixed && sm.sizes.fixed == 1))
      throw UnsupportedError("liapunov_m1: model form requires one-stage strata");
    if (sm.hierarchy.has_value())
      throw UnsupportedError("liapunov_m1: model form not available under a hierarchy");
    acc += static_cast<double>(sm.n_clusters) * sm.y[0].abs_moment(2.0 + delta);
    n += static_cast<double>(sm.n_clusters);
  }
  return acc / n;
}

inline double liapunov_m1(const FinitePopulation& pop, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("liapunov_m1: delta must be > 0");
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(pop.total_clusters()));
  for (int h = 0; h < pop.strata_count(); ++h)
    for (int i = 0; i < pop.clusters_in(h); ++i)
      terms.push_back(std::pow(pop.cluster(h, i).total.norm(), 2.0 + delta));
  return pairwise_sum(terms) / static_cast<double>(pop.total_clusters());
}

}  // namespace twophase
