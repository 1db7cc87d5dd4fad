// Command-line front end: simulate, fit, plotdata.

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "ordprior/study.hpp"

namespace {

using namespace ordprior;

int cmd_simulate(const std::string& config_path, bool desk, const std::string& filter, bool exclude_divergent,
                 std::optional<int> workers, bool resume, const std::string& output_dir) {
  StudyConfig config = load_config(config_path);
  if (desk) apply_desk_preset(config);
  if (!filter.empty()) config.filter.parse(filter);
  if (exclude_divergent) config.exclude_divergent = true;
  if (workers) config.workers = *workers;
  if (!output_dir.empty()) config.output_dir = output_dir;
  StudyOptions options;
  options.resume = resume;
  options.log = &std::cerr;
  const int computed = run_study(config, options);
  std::cerr << "computed " << computed << " cells; results in " << (config.output_dir / "results.csv").string()
            << "\n";
  return 0;
}

int cmd_fit(const std::string& data_path, const std::string& priors, std::uint64_t seed, std::optional<int> J,
            const SamplerConfig& base) {
  std::ifstream in(data_path);
  if (!in) throw std::runtime_error("cannot open " + data_path);
  const TrialData data = read_fit_data(in, J);
  SamplerConfig sampler = base;
  sampler.seed = seed;
  write_csv(std::cout, fit_table(fit_priors(data, parse_prior_list(priors), sampler)));
  return 0;
}

int cmd_plotdata(const std::string& in_path, const std::string& out_path) {
  const CsvTable long_table = plot_data(read_csv_file(in_path));
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  write_csv(out, long_table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian proportional-odds prior sensitivity simulations"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "run the scenario grid");
  std::string config_path;
  bool desk = false;
  std::string preset;
  std::string filter;
  bool exclude_divergent = false;
  int workers = 0;
  bool resume = false;
  std::string output_dir;
  sim->add_option("--config", config_path, "JSON config file (or a previous run's manifest.json)")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--preset", preset, "named preset")->check(CLI::IsMember({"desk"}));
  sim->add_option("--filter", filter, "scenario filter, e.g. \"J=4,10;shape=skewed;design=fixed;or=1.5;n=100\"");
  sim->add_flag("--exclude-divergent", exclude_divergent, "drop replicates that stayed divergent");
  sim->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  sim->add_flag("--resume", resume, "continue from the checkpoint journal");
  sim->add_option("--out", output_dir, "output directory (overrides the config)");

  auto* fit = app.add_subcommand("fit", "fit one dataset under several priors");
  std::string data_path;
  std::string priors = "normal_100:dir_1";
  std::uint64_t seed = 1;
  int categories = 0;
  SamplerConfig sampler;
  fit->add_option("--data", data_path, "CSV with header arm,category")->required()->check(CLI::ExistingFile);
  fit->add_option("--priors", priors, "comma-separated beta:cut pairs")->capture_default_str();
  fit->add_option("--seed", seed, "sampler seed")->capture_default_str();
  fit->add_option("--categories", categories, "number of categories J (default: largest observed)");
  fit->add_option("--chains", sampler.chains, "chains")->capture_default_str();
  fit->add_option("--warmup", sampler.warmup_iters, "warm-up iterations per chain")->capture_default_str();
  fit->add_option("--iter", sampler.sampling_iters, "retained iterations per chain")->capture_default_str();

  auto* plot = app.add_subcommand("plotdata", "reshape a results CSV to long format");
  std::string in_path;
  std::string out_path;
  plot->add_option("--in", in_path, "results.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out_path, "long-format CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      desk = preset == "desk";
      return cmd_simulate(config_path, desk, filter, exclude_divergent,
                          workers > 0 ? std::optional<int>(workers) : std::nullopt, resume, output_dir);
    }
    if (*fit) {
      return cmd_fit(data_path, priors, seed, categories > 0 ? std::optional<int>(categories) : std::nullopt,
                     sampler);
    }
    if (*plot) return cmd_plotdata(in_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
