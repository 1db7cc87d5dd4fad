#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ordprior/design.hpp"
#include "ordprior/dgm.hpp"
#include "ordprior/metrics.hpp"
#include "ordprior/priors.hpp"
#include "ordprior/sampler.hpp"

namespace ordprior {

/// Restricts the scenario grid. An empty list accepts every level.
struct ScenarioFilter {
  std::vector<int> categories;
  std::vector<ShapeKind> shapes;
  std::vector<DesignKind> designs;
  std::vector<double> odds_ratios;
  std::vector<int> sample_sizes;

  bool matches(const Scenario& scn) const;
  bool empty() const;
  /// "J=4,10;shape=skewed" style description (round-trips through parse).
  std::string describe() const;
  /// Parses "J=4,10;shape=skewed;design=fixed;or=1.5;n=100". Fields not
  /// mentioned stay as they were.
  void parse(std::string_view text);
};

struct PriorPair {
  BetaPriorSpec beta;
  CutpointPriorSpec cut;
};

struct PriorGrid {
  /// "A": every beta prior with `sweep_a_cut`; "B": every cut-point prior
  /// with `sweep_b_beta`.
  std::vector<std::string> sweeps{"A", "B"};
  bool full_cross = false;
  std::vector<std::string> beta{beta_prior_names()};
  std::vector<std::string> cut{cutpoint_prior_names()};
  std::string sweep_a_cut = "dir_1";
  std::string sweep_b_beta = "normal_100";
  CutpointAnchor anchor = CutpointAnchor::Auto;

  /// Resolved pairs, duplicates removed, first occurrence kept.
  std::vector<PriorPair> pairs() const;
};

struct StudyConfig {
  std::uint64_t master_seed = 20240501;
  PriorGrid priors;
  GridLevels grid;
  ScenarioFilter filter;
  SamplerConfig sampler;
  DesignSpec design;
  std::vector<int> replicate_schedule{250, 500, 1000};
  double target_mcse = 0.05;
  bool exclude_divergent = false;
  RelativeBiasKind relative_bias = RelativeBiasKind::MeanOfOr;
  int n_boot = 1000;
  std::filesystem::path output_dir = "ordprior-out";
  int workers = 1;

  void validate() const;
};

/// Desk-scale settings: 200 replicates, 2 chains of 1000 + 1000 iterations,
/// and J restricted to {4, 10} unless the filter already names J.
void apply_desk_preset(StudyConfig& config);

/// Every key is optional; unknown keys throw std::invalid_argument. A run
/// manifest is also accepted (its "config" member is used).
StudyConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const StudyConfig& config);
StudyConfig load_config(const std::filesystem::path& path);

/// FNV-1a of the canonical config JSON without `workers` and `output_dir`.
std::string config_hash(const StudyConfig& config);

struct Cell {
  int cell_id = 0;  // 1-based, in execution order
  Scenario scenario;
  PriorPair prior;
};

/// Filtered scenarios crossed with the prior pairs, scenario-major. Throws
/// naming the filter when no scenario matches.
std::vector<Cell> build_cells(const StudyConfig& config);

/// Stable key of a prior pair, used in seeding.
std::uint64_t prior_key(const PriorPair& prior);

/// Per-replicate data stream. Shared by all priors so they analyse the same
/// trials.
std::uint64_t data_seed(std::uint64_t master, const Scenario& scn, int replicate);
std::uint64_t sampler_seed(std::uint64_t master, const Scenario& scn, const PriorPair& prior, int replicate);

struct ReplicateRecord {
  ReplicateResult result;
  int divergences = 0;
  double max_rhat = 0.0;
  double min_ess_bulk = 0.0;
  double min_ess_tail = 0.0;
};

struct CellResult {
  Cell cell;
  ScenarioSummary summary;
  bool target_met = false;
  std::vector<Measure> missed;
  std::vector<ReplicateRecord> replicates;
  double max_rhat = 0.0;
  double min_ess_bulk = 0.0;
  double min_ess_tail = 0.0;
};

/// Runs one cell with replicate-level parallelism over `workers` threads.
CellResult run_cell(const StudyConfig& config, const Cell& cell);

struct StudyOptions {
  bool resume = false;
  std::ostream* log = nullptr;
};

/// Writes manifest.json, journal.jsonl, results.csv and replicates.csv to
/// config.output_dir. Returns the number of cells computed in this call.
int run_study(const StudyConfig& config, const StudyOptions& options = {});

/// Column order of results.csv.
const std::vector<std::string>& results_columns();

// CSV helpers shared by the CLI.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; throws naming it when absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);
void write_csv(std::ostream& out, const CsvTable& table);
std::string format_number(double value);

/// Results table to long format, one row per cell and measure with columns
/// key..., measure, value, mcse.
CsvTable plot_data(const CsvTable& results);
/// Inverse of plot_data.
CsvTable pivot_plot_data(const CsvTable& long_table);

/// Parses `arm,category` rows (arm 0/1, category 1..J). J is inferred from
/// the largest category unless given. Rejects an empty arm or a single
/// occupied category.
TrialData read_fit_data(std::istream& in, std::optional<int> categories = std::nullopt);

/// "normal_100:dir_1,r2_0.5,dir_0.5". A lone beta prior pairs with dir_1;
/// a lone cut-point prior pairs with normal_100.
std::vector<PriorPair> parse_prior_list(std::string_view text);

struct FitRow {
  PriorPair prior;
  FitSummary fit;
};

std::vector<FitRow> fit_priors(const TrialData& data, const std::vector<PriorPair>& priors,
                               const SamplerConfig& sampler);
CsvTable fit_table(const std::vector<FitRow>& rows);

}  // namespace ordprior
