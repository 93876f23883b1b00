#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include "twophase/serialize.hpp"

namespace twophase {
namespace cli {

struct RunConfig {
  std::string subcommand;  // realize | sample | estimate | ee | oracle | experiment
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed_override;
  int threads = 0;  // 0 = hardware concurrency
  bool verbose = false;
};

namespace detail {

inline json load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  return j;
}

inline std::uint64_t resolve_seed(const json& config, const RunConfig& run, bool required) {
  if (run.seed_override.has_value()) return *run.seed_override;
  if (config.contains("seed")) {
    if (!config.at("seed").is_number_integer() ||
        (config.at("seed").is_number_integer() && !config.at("seed").is_number_unsigned() &&
         config.at("seed").get<std::int64_t>() < 0))
      throw ConfigError("seed: expected a nonnegative integer");
    return config.at("seed").get<std::uint64_t>();
  }
  if (required)
    throw ConfigError("a master seed is required (config \"seed\" or --seed); "
                      "stochastic runs are never silently entropy-seeded");
  return 0;
}

inline json meta_object(const std::string& hash, std::uint64_t seed) {
  return {{"config_hash", hash}, {"seed", seed}};
}

struct Outputs {
  std::filesystem::path dir;
  std::string hash;
  std::uint64_t seed = 0;

  void write_json(const std::string& name, json j) const {
    j["meta"] = meta_object(hash, seed);
    write_text_file((dir / name).string(), j.dump(2) + "\n");
  }
  void write_csv(const std::string& name, const std::string& body) const {
    write_text_file((dir / name).string(), csv_meta_line(hash, seed) + body);
  }
};

inline int run_realize(const json& config, const Outputs& out) {
  jsonio::check_keys(config, "config", {"model", "seed"});
  const ModelSpec model = model_from_json(jsonio::require(config, "config", "model"));
  const FinitePopulation pop = realize_population(model, Seed{out.seed, 0});
  out.write_csv("population.csv", population_csv(pop));
  const auto targets = finite_pop_mean(pop);
  json weights = json::array();
  for (int h = 0; h < pop.strata_count(); ++h) weights.push_back(pop.stratum_weight(h));
  out.write_json("population_summary.json",
                 {{"strata", pop.strata_count()},
                  {"clusters", pop.total_clusters()},
                  {"units", pop.total_units()},
                  {"stratum_weights", weights},
                  {"theta_n", vector_to_json(targets.theta_n)},
                  {"ybar_n", vector_to_json(targets.ybar_n)}});
  return 0;
}

inline int run_sample(const json& config, const Outputs& out) {
  jsonio::check_keys(config, "config", {"model", "design", "seed"});
  const ModelSpec model = model_from_json(jsonio::require(config, "config", "model"));
  const DesignSpec design = design_from_json(jsonio::require(config, "config", "design"));
  const FinitePopulation pop = realize_population(model, Seed{out.seed, 0});
  const SampleSeq sample = draw_sample(design, pop, Seed{out.seed, 1});
  out.write_csv("sample.csv", sample_csv(sample));
  return 0;
}

inline int run_estimate(const json& config, const Outputs& out) {
  jsonio::check_keys(config, "config", {"model", "design", "estimator", "seed"});
  const ModelSpec model = model_from_json(jsonio::require(config, "config", "model"));
  const DesignSpec design = design_from_json(jsonio::require(config, "config", "design"));
  const EstimatorId id = estimator_from_string(jsonio::require_str(config, "config", "estimator"));
  const FinitePopulation pop = realize_population(model, Seed{out.seed, 0});
  const SampleSeq sample = draw_sample(design, pop, Seed{out.seed, 1});
  const auto targets = finite_pop_mean(pop);

  json result;
  result["estimator"] = estimator_to_string(id);
  result["theta_n"] = vector_to_json(targets.theta_n);
  result["ybar_n"] = vector_to_json(targets.ybar_n);
  switch (id) {
    case EstimatorId::PpswrMean:
      result["estimate"] = vector_to_json(ppswr_mean_estimate(sample, pop).estimate);
      break;
    case EstimatorId::Ratio: {
      const auto r = ratio_estimate(sample, pop, design);
      result["estimate"] = vector_to_json(r.estimate);
      result["n_hat"] = r.n_hat;
      break;
    }
    case EstimatorId::SampleMean:
      result["estimate"] = vector_to_json(sample_mean_estimate(sample, pop).estimate);
      break;
  }
  try {
    const Eigen::MatrixXd v = exact_design_variance(design, pop, id);
    result["design_variance"] = matrix_to_json(v);
    result["gamma_d_n"] = matrix_to_json(
        Eigen::MatrixXd(static_cast<double>(design.total_draws()) * v));
  } catch (const EnumerationCapError& e) {
    result["design_variance_note"] =
        std::string("unavailable: ") + e.what();
  } catch (const UnsupportedError& e) {
    result["design_variance_note"] = std::string("unavailable: ") + e.what();
  }
  out.write_json("estimate.json", result);
  return 0;
}

inline int run_ee(const json& config, const Outputs& out) {
  jsonio::check_keys(config, "config",
                     {"model", "design", "ee", "seed", "ci_level", "theta_init", "omit_gamma_m"});
  const ModelSpec model = model_from_json(jsonio::require(config, "config", "model"));
  const DesignSpec design = design_from_json(jsonio::require(config, "config", "design"));
  const json& eej = jsonio::require(config, "config", "ee");
  jsonio::check_keys(eej, "config.ee", {"kind"});
  const std::string kind = jsonio::require_str(eej, "config.ee", "kind");
  EEFunction ee;
  if (kind == "mean") ee = EEFunction::mean(model.dim_y());
  else if (kind == "regression") ee = EEFunction::regression(model.dim_x());
  else throw ConfigError("config.ee.kind: expected mean|regression");

  const double ci_level = jsonio::opt_num(config, "config", "ci_level", 0.95);
  const bool omit = jsonio::opt_bool(config, "config", "omit_gamma_m", false);
  Eigen::VectorXd theta_init = Eigen::VectorXd::Zero(ee.dim);
  if (config.contains("theta_init")) {
    const auto v = jsonio::num_array(config.at("theta_init"), "config.theta_init");
    if (static_cast<int>(v.size()) != ee.dim)
      throw ConfigError("config.theta_init: wrong dimension");
    for (int c = 0; c < ee.dim; ++c) theta_init(c) = v[static_cast<std::size_t>(c)];
  }

  const FinitePopulation pop = realize_population(model, Seed{out.seed, 0});
  const SampleSeq sample = draw_sample(design, pop, Seed{out.seed, 1});
  const EEResult result = ee_analysis(sample, pop, design, ee, theta_init, ci_level, omit);

  json rj = ee_result_to_json(result);
  const auto root = solve_finite_pop_ee(pop, ee, theta_init);
  rj["theta_n"] = vector_to_json(root.theta);
  out.write_json("ee_result.json", rj);
  return 0;
}

inline int run_oracle(const json& config, const Outputs& out) {
  jsonio::check_keys(config, "config", {"population", "queries", "export_table", "seed"});
  const DiscreteModel model =
      discrete_model_from_json(jsonio::require(config, "config", "population"));
  const json& queries = jsonio::require(config, "config", "queries");
  if (!queries.is_array()) throw ConfigError("config.queries: expected an array");
  const bool export_table = jsonio::opt_bool(config, "config", "export_table", false);

  std::map<std::string, JointPmf> tables;
  auto table_for = [&](const json& dj) -> JointPmf& {
    const std::string key = dj.dump();
    auto it = tables.find(key);
    if (it == tables.end())
      it = tables.emplace(key, enumerate_product_space(model, design_from_json(dj))).first;
    return it->second;
  };

  json results;
  int qi = 0;
  for (const auto& qj : queries) {
    const std::string qpath = "config.queries[" + std::to_string(qi++) + "]";
    jsonio::check_keys(qj, qpath, {"name", "design", "query", "draws", "values", "given"});
    const std::string name = jsonio::require_str(qj, qpath, "name");
    const std::string query = jsonio::require_str(qj, qpath, "query");
    JointPmf& jp = table_for(jsonio::require(qj, qpath, "design"));
    if (query == "joint") {
      const auto draws = jsonio::int_array(jsonio::require(qj, qpath, "draws"), qpath + ".draws");
      const auto values = jsonio::num_array(jsonio::require(qj, qpath, "values"), qpath + ".values");
      results[name] = sample_variable_joint(jp, draws, values);
    } else if (query == "posterior") {
      const auto given = jsonio::int_array(jsonio::require(qj, qpath, "given"), qpath + ".given");
      const SampleSeq s0 = sequence_sample(model, given);
      EventAssignment event;
      event.draws = jsonio::int_array(jsonio::require(qj, qpath, "draws"), qpath + ".draws");
      event.values = jsonio::num_array(jsonio::require(qj, qpath, "values"), qpath + ".values");
      results[name] = posterior_given_sample(jp, s0, event);
    } else if (query == "independence" || query == "independence_report") {
      PosteriorReport rep;
      if (qj.contains("given")) {
        const auto given = jsonio::int_array(qj.at("given"), qpath + ".given");
        const SampleSeq s0 = sequence_sample(model, given);
        rep = independence_verdict(jp, &s0);
      } else {
        rep = independence_verdict(jp);
      }
      if (query == "independence")
        results[name] = rep.independent ? "INDEPENDENT" : "DEPENDENT";
      else
        results[name] = posterior_report_to_json(rep);
    } else if (query == "total_mass") {
      results[name] = jp.total_mass();
    } else {
      throw ConfigError(qpath +
                        ".query: expected joint|posterior|independence|independence_report|"
                        "total_mass");
    }
  }
  if (export_table) {
    int ti = 0;
    for (auto& [key, jp] : tables)
      out.write_csv("joint_pmf_" + std::to_string(++ti) + ".csv", joint_pmf_csv(jp));
  }
  out.write_json("oracle_results.json", results);
  return 0;
}

inline int run_experiment_cmd(const json& config, const Outputs& out, int threads) {
  ExperimentSpec spec = experiment_from_json(config);
  spec.seed = out.seed;
  const ExperimentReport report = run_experiment(spec, threads);
  out.write_json("report.json", report_to_json(report));
  out.write_csv("replicates.csv", replicates_csv(report.replicates));
  if (!report.pass) {
    std::cerr << "experiment FAILED one or more checks (see report.json)\n";
    return 2;
  }
  return 0;
}

}  // namespace detail

// Runs a subcommand. Exit status 0 on success, 1 on configuration errors
// (with a machine-readable error.json when the output directory exists),
// 2 when an experiment check fails.
inline int run(const RunConfig& run_config) {
  namespace fs = std::filesystem;
  const int threads = run_config.threads > 0
                          ? run_config.threads
                          : static_cast<int>(std::thread::hardware_concurrency());
  json config;
  try {
    config = detail::load_config(run_config.config_path);
    fs::create_directories(run_config.out_dir);

    detail::Outputs out;
    out.dir = run_config.out_dir;
    out.hash = config_hash(config);

    const bool stochastic = run_config.subcommand != "oracle";
    out.seed = detail::resolve_seed(config, run_config, stochastic);
    if (run_config.verbose)
      std::cerr << "subcommand=" << run_config.subcommand << " config_hash=" << out.hash
                << " seed=" << out.seed << " threads=" << threads << "\n";

    if (run_config.subcommand == "realize") return detail::run_realize(config, out);
    if (run_config.subcommand == "sample") return detail::run_sample(config, out);
    if (run_config.subcommand == "estimate") return detail::run_estimate(config, out);
    if (run_config.subcommand == "ee") return detail::run_ee(config, out);
    if (run_config.subcommand == "oracle") return detail::run_oracle(config, out);
    if (run_config.subcommand == "experiment")
      return detail::run_experiment_cmd(config, out, threads);
    throw ConfigError("unknown subcommand '" + run_config.subcommand + "'");
  } catch (const std::exception& e) {
    const char* type = "error";
    if (dynamic_cast<const ConfigError*>(&e)) type = "config";
    else if (dynamic_cast<const UnsupportedError*>(&e)) type = "unsupported";
    else if (dynamic_cast<const EnumerationCapError*>(&e)) type = "enumeration_cap";
    else if (dynamic_cast<const SolveError*>(&e)) type = "solve";
    std::cerr << "error: " << e.what() << "\n";
    try {
      fs::create_directories(run_config.out_dir);
      write_text_file((fs::path(run_config.out_dir) / "error.json").string(),
                      json{{"error", {{"type", type}, {"message", e.what()}}}}.dump(2) + "\n");
    } catch (...) {
      // stderr already carries the message
    }
    return 1;
  }
}

}  // namespace cli
}  // namespace twophase
