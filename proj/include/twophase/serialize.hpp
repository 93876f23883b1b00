#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "twophase/common.hpp"
#include "twophase/designs.hpp"
#include "twophase/ee.hpp"
#include "twophase/estimators.hpp"
#include "twophase/experiments.hpp"
#include "twophase/oracle.hpp"
#include "twophase/population.hpp"

namespace twophase {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strict JSON access: every read names its path in error messages and every
// object rejects keys it does not know, so config typos fail loudly.
// ---------------------------------------------------------------------------

namespace jsonio {

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

inline void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  expect_object(j, path);
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(path + ": unknown key '" + key + "'");
}

inline const json& require(const json& j, const std::string& path, const std::string& key) {
  expect_object(j, path);
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + ": missing required key '" + key + "'");
  return *it;
}

inline double require_num(const json& j, const std::string& path, const std::string& key) {
  const json& v = require(j, path, key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline double opt_num(const json& j, const std::string& path, const std::string& key, double dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

inline std::int64_t require_int(const json& j, const std::string& path, const std::string& key) {
  const json& v = require(j, path, key);
  if (!v.is_number_integer()) throw ConfigError(path + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

inline std::int64_t opt_int(const json& j, const std::string& path, const std::string& key,
                            std::int64_t dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number_integer())
    throw ConfigError(path + "." + key + ": expected an integer");
  return j.at(key).get<std::int64_t>();
}

inline bool opt_bool(const json& j, const std::string& path, const std::string& key, bool dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) throw ConfigError(path + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

inline std::string require_str(const json& j, const std::string& path, const std::string& key) {
  const json& v = require(j, path, key);
  if (!v.is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<double> num_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(path + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline std::vector<int> int_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw ConfigError(path + ": expected integers");
    out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace jsonio

// ---------------------------------------------------------------------------
// Families and models.
// ---------------------------------------------------------------------------

inline Family family_from_json(const json& j, const std::string& path) {
  jsonio::check_keys(j, path, {"family", "value", "q", "mean", "var", "shape", "scale_param",
                               "alpha", "min", "shift", "scale"});
  const std::string kind = jsonio::require_str(j, path, "family");
  Family f;
  if (kind == "point_mass") {
    f = Family::point_mass(jsonio::require_num(j, path, "value"));
  } else if (kind == "bernoulli") {
    f = Family::bernoulli(jsonio::require_num(j, path, "q"));
  } else if (kind == "normal") {
    f = Family::normal(jsonio::require_num(j, path, "mean"), jsonio::require_num(j, path, "var"));
  } else if (kind == "gamma") {
    f = Family::gamma(jsonio::require_num(j, path, "shape"),
                      jsonio::require_num(j, path, "scale_param"));
  } else if (kind == "pareto") {
    f = Family::pareto(jsonio::require_num(j, path, "alpha"), jsonio::require_num(j, path, "min"));
  } else {
    throw ConfigError(path + ".family: unknown family '" + kind + "'");
  }
  f.shift = jsonio::opt_num(j, path, "shift", 0.0);
  f.scale = jsonio::opt_num(j, path, "scale", 1.0);
  f.validate();
  return f;
}

inline json family_to_json(const Family& f) {
  json j;
  switch (f.kind) {
    case Family::Kind::PointMass: j = {{"family", "point_mass"}, {"value", f.a}}; break;
    case Family::Kind::Bernoulli: j = {{"family", "bernoulli"}, {"q", f.a}}; break;
    case Family::Kind::Normal: j = {{"family", "normal"}, {"mean", f.a}, {"var", f.b}}; break;
    case Family::Kind::Gamma: j = {{"family", "gamma"}, {"shape", f.a}, {"scale_param", f.b}}; break;
    case Family::Kind::Pareto: j = {{"family", "pareto"}, {"alpha", f.a}, {"min", f.b}}; break;
  }
  if (f.shift != 0.0) j["shift"] = f.shift;
  if (f.scale != 1.0) j["scale"] = f.scale;
  return j;
}

inline ClusterSizeLaw sizes_from_json(const json& j, const std::string& path) {
  if (j.is_number_integer()) return ClusterSizeLaw::all_equal(j.get<int>());
  jsonio::check_keys(j, path, {"kind", "size", "sizes", "min", "max"});
  const std::string kind = jsonio::require_str(j, path, "kind");
  if (kind == "fixed")
    return ClusterSizeLaw::all_equal(static_cast<int>(jsonio::require_int(j, path, "size")));
  if (kind == "list")
    return ClusterSizeLaw::list(jsonio::int_array(jsonio::require(j, path, "sizes"), path + ".sizes"));
  if (kind == "cycle")
    return ClusterSizeLaw::cycle(jsonio::int_array(jsonio::require(j, path, "sizes"), path + ".sizes"));
  if (kind == "uniform")
    return ClusterSizeLaw::uniform(static_cast<int>(jsonio::require_int(j, path, "min")),
                                   static_cast<int>(jsonio::require_int(j, path, "max")));
  throw ConfigError(path + ".kind: unknown size law '" + kind + "'");
}

inline json sizes_to_json(const ClusterSizeLaw& law) {
  switch (law.kind) {
    case ClusterSizeLaw::Kind::Fixed: return {{"kind", "fixed"}, {"size", law.fixed}};
    case ClusterSizeLaw::Kind::List: return {{"kind", "list"}, {"sizes", law.pattern}};
    case ClusterSizeLaw::Kind::Cycle: return {{"kind", "cycle"}, {"sizes", law.pattern}};
    case ClusterSizeLaw::Kind::UniformInt:
      return {{"kind", "uniform"}, {"min", law.lo}, {"max", law.hi}};
  }
  throw std::logic_error("unreachable");
}

inline ModelSpec model_from_json(const json& j, const std::string& path = "model") {
  jsonio::check_keys(j, path, {"strata"});
  const json& strata = jsonio::require(j, path, "strata");
  if (!strata.is_array() || strata.empty())
    throw ConfigError(path + ".strata: expected a non-empty array");
  ModelSpec model;
  int idx = 0;
  for (const auto& sj : strata) {
    const std::string spath = path + ".strata[" + std::to_string(idx++) + "]";
    jsonio::check_keys(sj, spath, {"clusters", "sizes", "y", "x", "z", "hierarchy"});
    StratumModel sm;
    sm.n_clusters = static_cast<int>(jsonio::require_int(sj, spath, "clusters"));
    sm.sizes = sj.contains("sizes") ? sizes_from_json(sj.at("sizes"), spath + ".sizes")
                                    : ClusterSizeLaw::all_equal(1);
    if (sj.contains("hierarchy")) {
      const json& hj = sj.at("hierarchy");
      jsonio::check_keys(hj, spath + ".hierarchy", {"mu", "sigma2"});
      sm.hierarchy = TwoStageHierarchy{
          family_from_json(jsonio::require(hj, spath + ".hierarchy", "mu"),
                           spath + ".hierarchy.mu"),
          family_from_json(jsonio::require(hj, spath + ".hierarchy", "sigma2"),
                           spath + ".hierarchy.sigma2")};
    }
    if (sj.contains("y")) {
      const json& yj = sj.at("y");
      if (yj.is_array()) {
        int c = 0;
        for (const auto& fj : yj)
          sm.y.push_back(family_from_json(fj, spath + ".y[" + std::to_string(c++) + "]"));
      } else {
        sm.y.push_back(family_from_json(yj, spath + ".y"));
      }
    }
    if (sj.contains("x")) {
      const json& xj = sj.at("x");
      if (xj.is_array()) {
        int c = 0;
        for (const auto& fj : xj)
          sm.x.push_back(family_from_json(fj, spath + ".x[" + std::to_string(c++) + "]"));
      } else {
        sm.x.push_back(family_from_json(xj, spath + ".x"));
      }
    }
    if (sj.contains("z")) sm.z = family_from_json(sj.at("z"), spath + ".z");
    model.strata.push_back(std::move(sm));
  }
  model.validate();
  return model;
}

inline json model_to_json(const ModelSpec& model) {
  json strata = json::array();
  for (const auto& sm : model.strata) {
    json sj;
    sj["clusters"] = sm.n_clusters;
    sj["sizes"] = sizes_to_json(sm.sizes);
    if (sm.hierarchy.has_value())
      sj["hierarchy"] = {{"mu", family_to_json(sm.hierarchy->mu_law)},
                         {"sigma2", family_to_json(sm.hierarchy->sigma2_law)}};
    if (!sm.y.empty()) {
      json yj = json::array();
      for (const auto& f : sm.y) yj.push_back(family_to_json(f));
      sj["y"] = yj;
    }
    if (!sm.x.empty()) {
      json xj = json::array();
      for (const auto& f : sm.x) xj.push_back(family_to_json(f));
      sj["x"] = xj;
    }
    if (sm.z.has_value()) sj["z"] = family_to_json(*sm.z);
    strata.push_back(std::move(sj));
  }
  return {{"strata", strata}};
}

// ---------------------------------------------------------------------------
// Designs.
// ---------------------------------------------------------------------------

inline DesignSpec design_from_json(const json& j, const std::string& path = "design") {
  jsonio::check_keys(j, path, {"kind", "n", "draws_per_stratum", "size_source", "second_stage"});
  const std::string kind = jsonio::require_str(j, path, "kind");
  DesignSpec d;
  if (kind == "srswr" || kind == "srswor") {
    d.kind = kind == "srswr" ? DesignSpec::Kind::Srswr : DesignSpec::Kind::Srswor;
    d.n = static_cast<int>(jsonio::require_int(j, path, "n"));
    return d;
  }
  if (kind != "ppswr" && kind != "two_stage_ppswr")
    throw ConfigError(path + ".kind: unknown design '" + kind + "'");
  d.kind = kind == "ppswr" ? DesignSpec::Kind::StratPpswr : DesignSpec::Kind::StratTwoStagePpswr;
  d.draws_per_stratum =
      jsonio::int_array(jsonio::require(j, path, "draws_per_stratum"), path + ".draws_per_stratum");
  if (j.contains("size_source")) {
    const std::string src = jsonio::require_str(j, path, "size_source");
    if (src == "cluster_size") d.size_source = DesignSpec::SizeSource::ClusterSize;
    else if (src == "z") d.size_source = DesignSpec::SizeSource::ZValue;
    else throw ConfigError(path + ".size_source: expected 'cluster_size' or 'z'");
  }
  if (d.kind == DesignSpec::Kind::StratTwoStagePpswr) {
    const json& sj = jsonio::require(j, path, "second_stage");
    jsonio::check_keys(sj, path + ".second_stage", {"kind", "m"});
    const std::string sk = jsonio::require_str(sj, path + ".second_stage", "kind");
    if (sk == "all") d.second_stage.kind = SecondStageSpec::Kind::All;
    else if (sk == "fixed") d.second_stage.kind = SecondStageSpec::Kind::Fixed;
    else if (sk == "capped") d.second_stage.kind = SecondStageSpec::Kind::Capped;
    else throw ConfigError(path + ".second_stage.kind: expected all|fixed|capped");
    if (d.second_stage.kind != SecondStageSpec::Kind::All)
      d.second_stage.m = static_cast<int>(jsonio::require_int(sj, path + ".second_stage", "m"));
  }
  return d;
}

inline json design_to_json(const DesignSpec& d) {
  switch (d.kind) {
    case DesignSpec::Kind::Srswr: return {{"kind", "srswr"}, {"n", d.n}};
    case DesignSpec::Kind::Srswor: return {{"kind", "srswor"}, {"n", d.n}};
    case DesignSpec::Kind::StratPpswr:
    case DesignSpec::Kind::StratTwoStagePpswr: {
      json j;
      j["kind"] = d.kind == DesignSpec::Kind::StratPpswr ? "ppswr" : "two_stage_ppswr";
      j["draws_per_stratum"] = d.draws_per_stratum;
      j["size_source"] = d.size_source == DesignSpec::SizeSource::ClusterSize ? "cluster_size" : "z";
      if (d.kind == DesignSpec::Kind::StratTwoStagePpswr) {
        json sj;
        switch (d.second_stage.kind) {
          case SecondStageSpec::Kind::All: sj = {{"kind", "all"}}; break;
          case SecondStageSpec::Kind::Fixed: sj = {{"kind", "fixed"}, {"m", d.second_stage.m}}; break;
          case SecondStageSpec::Kind::Capped: sj = {{"kind", "capped"}, {"m", d.second_stage.m}}; break;
        }
        j["second_stage"] = sj;
      }
      return j;
    }
  }
  throw std::logic_error("unreachable");
}

inline EstimatorId estimator_from_string(const std::string& s) {
  if (s == "ppswr_mean") return EstimatorId::PpswrMean;
  if (s == "ratio") return EstimatorId::Ratio;
  if (s == "sample_mean") return EstimatorId::SampleMean;
  throw ConfigError("estimator: expected ppswr_mean|ratio|sample_mean, got '" + s + "'");
}

inline std::string estimator_to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::PpswrMean: return "ppswr_mean";
    case EstimatorId::Ratio: return "ratio";
    case EstimatorId::SampleMean: return "sample_mean";
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Discrete oracle model.
// ---------------------------------------------------------------------------

inline DiscreteModel discrete_model_from_json(const json& j, const std::string& path = "population") {
  jsonio::check_keys(j, path, {"iid_bernoulli", "units", "units_per_stratum", "z"});
  DiscreteModel m;
  if (j.contains("iid_bernoulli")) {
    const json& bj = j.at("iid_bernoulli");
    jsonio::check_keys(bj, path + ".iid_bernoulli", {"n", "q"});
    m = DiscreteModel::iid_bernoulli(
        static_cast<int>(jsonio::require_int(bj, path + ".iid_bernoulli", "n")),
        jsonio::require_num(bj, path + ".iid_bernoulli", "q"));
  } else {
    const json& units = jsonio::require(j, path, "units");
    if (!units.is_array()) throw ConfigError(path + ".units: expected an array");
    int idx = 0;
    for (const auto& uj : units) {
      const std::string upath = path + ".units[" + std::to_string(idx++) + "]";
      jsonio::check_keys(uj, upath, {"support", "probs"});
      DiscreteUnit u;
      u.support = jsonio::num_array(jsonio::require(uj, upath, "support"), upath + ".support");
      u.probs = jsonio::num_array(jsonio::require(uj, upath, "probs"), upath + ".probs");
      m.units.push_back(std::move(u));
    }
    m.units_per_stratum = {static_cast<int>(m.units.size())};
  }
  if (j.contains("units_per_stratum"))
    m.units_per_stratum =
        jsonio::int_array(j.at("units_per_stratum"), path + ".units_per_stratum");
  if (j.contains("z")) m.z = jsonio::num_array(j.at("z"), path + ".z");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Experiments.
// ---------------------------------------------------------------------------

inline ExperimentSpec experiment_from_json(const json& j, const std::string& path = "config") {
  jsonio::check_keys(j, path,
                     {"experiment", "model", "design", "estimator", "ladder", "replicates",
                      "seed", "delta", "alpha", "ci_level", "coverage_band", "grid_tol",
                      "omit_gamma_m", "expect"});
  ExperimentSpec spec;
  const std::string kind = jsonio::require_str(j, path, "experiment");
  if (kind == "design_clt") spec.kind = ExperimentSpec::Kind::DesignClt;
  else if (kind == "posterior_clt") spec.kind = ExperimentSpec::Kind::PosteriorClt;
  else if (kind == "asymptotic_independence")
    spec.kind = ExperimentSpec::Kind::AsymptoticIndependence;
  else if (kind == "ee_coverage") spec.kind = ExperimentSpec::Kind::EeCoverage;
  else if (kind == "condition_ladder") spec.kind = ExperimentSpec::Kind::ConditionLadder;
  else if (kind == "mc_vs_oracle") spec.kind = ExperimentSpec::Kind::McVsOracle;
  else throw ConfigError(path + ".experiment: unknown experiment '" + kind + "'");

  spec.model = model_from_json(jsonio::require(j, path, "model"), path + ".model");
  spec.design = design_from_json(jsonio::require(j, path, "design"), path + ".design");
  if (j.contains("estimator"))
    spec.estimator = estimator_from_string(jsonio::require_str(j, path, "estimator"));
  if (j.contains("ladder")) spec.ladder = jsonio::int_array(j.at("ladder"), path + ".ladder");
  spec.replicates = static_cast<int>(jsonio::require_int(j, path, "replicates"));
  spec.seed = static_cast<std::uint64_t>(jsonio::opt_int(j, path, "seed", 0));
  spec.delta = jsonio::opt_num(j, path, "delta", 1.0);
  spec.alpha = jsonio::opt_num(j, path, "alpha", 0.01);
  spec.ci_level = jsonio::opt_num(j, path, "ci_level", 0.95);
  if (j.contains("coverage_band")) {
    const auto band = jsonio::num_array(j.at("coverage_band"), path + ".coverage_band");
    if (band.size() != 2) throw ConfigError(path + ".coverage_band: expected [lo, hi]");
    spec.coverage_lo = band[0];
    spec.coverage_hi = band[1];
  }
  spec.grid_tol = jsonio::opt_num(j, path, "grid_tol", 0.02);
  spec.omit_gamma_m = jsonio::opt_bool(j, path, "omit_gamma_m", false);
  if (j.contains("expect")) {
    const std::string e = jsonio::require_str(j, path, "expect");
    if (e == "nominal") spec.expect = ExperimentSpec::Expect::Nominal;
    else if (e == "negative_control") spec.expect = ExperimentSpec::Expect::NegativeControl;
    else throw ConfigError(path + ".expect: expected nominal|negative_control");
  }
  spec.validate();
  return spec;
}

inline std::string experiment_kind_to_string(ExperimentSpec::Kind k) {
  switch (k) {
    case ExperimentSpec::Kind::DesignClt: return "design_clt";
    case ExperimentSpec::Kind::PosteriorClt: return "posterior_clt";
    case ExperimentSpec::Kind::AsymptoticIndependence: return "asymptotic_independence";
    case ExperimentSpec::Kind::EeCoverage: return "ee_coverage";
    case ExperimentSpec::Kind::ConditionLadder: return "condition_ladder";
    case ExperimentSpec::Kind::McVsOracle: return "mc_vs_oracle";
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Result serialization.
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json report_to_json(const ExperimentReport& report) {
  json steps = json::array();
  for (const auto& s : report.steps) {
    json sj;
    sj["scale"] = s.scale;
    sj["degenerate"] = s.degenerate;
    if (!s.variance_path.empty()) sj["variance_path"] = s.variance_path;
    sj["metrics"] = s.metrics;
    json checks = json::array();
    for (const auto& c : s.checks)
      checks.push_back({{"name", c.name},
                        {"value", c.value},
                        {"relation", c.relation},
                        {"threshold", c.threshold},
                        {"pass", c.pass}});
    sj["checks"] = checks;
    steps.push_back(std::move(sj));
  }
  return {{"experiment", experiment_kind_to_string(report.kind)},
          {"steps", steps},
          {"pass", report.pass}};
}

inline json posterior_report_to_json(const PosteriorReport& r) {
  json j;
  j["verdict"] = r.independent ? "INDEPENDENT" : "DEPENDENT";
  j["max_gap"] = r.max_gap;
  if (r.given.has_value()) {
    json labels = json::array();
    for (const auto& d : r.given->draws)
      labels.push_back({{"stratum", d.stratum + 1}, {"label", d.cluster + 1}});
    j["given"] = labels;
  }
  return j;
}

inline json ee_result_to_json(const EEResult& r) {
  json ci = json::array();
  for (const auto& [lo, hi] : r.ci) ci.push_back({lo, hi});
  return {{"theta_hat", vector_to_json(r.theta_hat)},
          {"jacobian", matrix_to_json(r.jacobian)},
          {"gamma_d", matrix_to_json(r.gamma_d)},
          {"gamma_m", matrix_to_json(r.gamma_m)},
          {"f", r.f},
          {"gamma", matrix_to_json(r.gamma)},
          {"ci", ci},
          {"components_clamped", r.components_clamped},
          {"diagnostics",
           {{"iterations", r.diagnostics.iterations},
            {"residual_norm", r.diagnostics.residual_norm},
            {"converged", r.diagnostics.converged}}}};
}

// ---------------------------------------------------------------------------
// File output. Every artifact names the config hash and master seed: JSON in
// a "meta" object, CSV in a leading comment line.
// ---------------------------------------------------------------------------

// FNV-1a over the canonical (parsed and re-dumped) config text.
inline std::string config_hash(const json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_meta_line(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

inline std::string population_csv(const FinitePopulation& pop) {
  std::string s;
  s += "h,i,j";
  for (int c = 0; c < pop.dim_y(); ++c) s += ",y" + std::to_string(c + 1);
  for (int c = 0; c < pop.dim_x(); ++c) s += ",x" + std::to_string(c + 1);
  s += ",z\n";
  for (int h = 0; h < pop.strata_count(); ++h)
    for (int i = 0; i < pop.clusters_in(h); ++i) {
      const auto& c = pop.cluster(h, i);
      for (int j = 0; j < c.size(); ++j) {
        s += std::to_string(h + 1) + "," + std::to_string(i + 1) + "," + std::to_string(j + 1);
        for (int q = 0; q < pop.dim_y(); ++q) s += "," + format_double(c.y(j, q));
        for (int q = 0; q < pop.dim_x(); ++q) s += "," + format_double(c.x(j, q));
        s += "," + format_double(c.z) + "\n";
      }
    }
  return s;
}

inline std::string sample_csv(const SampleSeq& sample) {
  std::string s = "h,k,i,second_stage_units\n";
  for (const auto& d : sample.draws) {
    s += std::to_string(d.stratum + 1) + "," + std::to_string(d.draw_index + 1) + "," +
         std::to_string(d.cluster + 1) + ",";
    for (std::size_t j = 0; j < d.units.size(); ++j) {
      if (j) s += ";";
      s += std::to_string(d.units[j] + 1);
    }
    s += "\n";
  }
  return s;
}

inline std::string joint_pmf_csv(const JointPmf& jp) {
  std::string s = "sample_id,sample,outcome_id,outcome,mass\n";
  for (std::size_t si = 0; si < jp.sample_count(); ++si) {
    std::string labels;
    for (std::size_t k = 0; k < jp.samples()[si].draws.size(); ++k) {
      if (k) labels += ";";
      labels += std::to_string(
          detail::draw_flat_label(jp, jp.samples()[si], static_cast<int>(k) + 1) + 1);
    }
    for (std::size_t w = 0; w < jp.outcome_count(); ++w) {
      std::string outcome;
      for (int u = 0; u < jp.model().total_units(); ++u) {
        if (u) outcome += ";";
        outcome += format_double(jp.unit_value(w, u));
      }
      s += std::to_string(si + 1) + "," + labels + "," + std::to_string(w + 1) + "," + outcome +
           "," + format_double(jp.cell(si, w)) + "\n";
    }
  }
  return s;
}

inline std::string replicates_csv(const ReplicateTable& table) {
  std::string s;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) s += ",";
    s += table.columns[c];
  }
  s += "\n";
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) s += ",";
      s += format_double(row[c]);
    }
    s += "\n";
  }
  return s;
}

}  // namespace twophase
