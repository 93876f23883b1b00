#include <CLI11.hpp>

#include "twophase/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"two-phase sampling-design / superpopulation-model inference toolkit"};
  app.require_subcommand(1);

  twophase::cli::RunConfig run;
  std::uint64_t seed = 0;

  const std::vector<std::string> names = {"realize", "sample", "estimate",
                                          "ee",      "oracle", "experiment"};
  const std::vector<std::string> descriptions = {
      "realize a finite population from a model",
      "draw a sample from a realized population",
      "compute a point estimate and its exact design variance",
      "solve the sample estimating equation and the sandwich variance",
      "exact product-space probabilities on a discrete instance",
      "run a Monte Carlo experiment with pass/fail checks"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("--config", run.config_path, "JSON configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", run.out_dir, "output directory")->capture_default_str();
    auto* seed_opt = sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--threads", run.threads, "worker threads (0 = all cores)")
        ->capture_default_str();
    sub->add_flag("--verbose", run.verbose, "log resolved settings to stderr");
    sub->callback([&run, &seed, seed_opt, name = names[i]]() {
      run.subcommand = name;
      if (seed_opt->count() > 0) run.seed_override = seed;
    });
  }

  CLI11_PARSE(app, argc, argv);
  return twophase::cli::run(run);
}
