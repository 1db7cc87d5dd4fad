#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ordprior/design.hpp"
#include "ordprior/rng.hpp"

namespace ordprior {

enum class Measure {
  Bias,
  RelativeBias,
  Coverage,
  Mse,
  MeanPSuperior,
  PropSuperior,
  PropStoppedEarly,
};

inline constexpr std::array<Measure, 7> kAllMeasures{
    Measure::Bias,          Measure::RelativeBias, Measure::Coverage,         Measure::Mse,
    Measure::MeanPSuperior, Measure::PropSuperior, Measure::PropStoppedEarly,
};

std::string to_string(Measure m);

/// MeanOfOr: mean over replicates of exp(beta_median), compared with the
/// true OR. OrOfMean: exp of the mean log-OR estimate.
enum class RelativeBiasKind { MeanOfOr, OrOfMean };

std::string to_string(RelativeBiasKind kind);
RelativeBiasKind parse_relative_bias(std::string_view name);

/// One performance measure over a set of replicates. Relative bias is in
/// percent; everything else is in its natural units.
double measure_value(std::span<const ReplicateResult> results, Measure m, double true_log_or,
                     RelativeBiasKind kind = RelativeBiasKind::MeanOfOr);

/// Textbook simulation-study MCSE (same units as measure_value).
double mcse_closed_form(std::span<const ReplicateResult> results, Measure m, double true_log_or,
                        RelativeBiasKind kind = RelativeBiasKind::MeanOfOr);

/// Jackknife-after-bootstrap MCSE: the jackknife variance of the bootstrap
/// mean of the measure, where leaving replicate i out means averaging over
/// the bootstrap samples that do not contain i. Needs >= 10 results and
/// n_boot >= 200.
double mcse_jackknife_after_bootstrap(std::span<const ReplicateResult> results, Measure m,
                                      double true_log_or, int n_boot, Rng& rng,
                                      RelativeBiasKind kind = RelativeBiasKind::MeanOfOr);

struct SummaryOptions {
  bool exclude_divergent = false;
  RelativeBiasKind relative_bias = RelativeBiasKind::MeanOfOr;
  int n_boot = 1000;
  std::uint64_t seed = 0;  // bootstrap stream
};

struct ScenarioSummary {
  double bias = 0.0;              // log-OR units
  double relative_bias_or = 0.0;  // percent
  double coverage = 0.0;
  double mse = 0.0;
  double mean_p_superior = 0.0;
  double prop_superior = 0.0;
  double prop_stopped_early = 0.0;
  /// MCSE used for decisions: jackknife-after-bootstrap when n >= 10,
  /// otherwise closed form. Indexed by Measure.
  std::array<double, 7> mcse{};
  std::array<double, 7> mcse_closed{};
  std::array<double, 7> mcse_jab{};  // NaN when not computed
  int n_sim_used = 0;
  int n_divergent_final = 0;

  double value(Measure m) const;
  double mcse_of(Measure m) const { return mcse[static_cast<std::size_t>(m)]; }
};

ScenarioSummary summarize(std::span<const ReplicateResult> results, double true_log_or,
                          const SummaryOptions& options = {});

inline ScenarioSummary summarize(std::span<const ReplicateResult> results, double true_log_or,
                                 bool exclude_divergent) {
  SummaryOptions options;
  options.exclude_divergent = exclude_divergent;
  return summarize(results, true_log_or, options);
}

/// Runs replicates [begin, end) and returns them in index order.
using ReplicateBatch = std::function<std::vector<ReplicateResult>(int begin, int end)>;

struct EscalationResult {
  ScenarioSummary summary;
  std::vector<ReplicateResult> replicates;
  bool target_met = false;
  /// Measures whose MCSE was still >= target after the last step.
  std::vector<Measure> missed;
};

/// Grows the replicate set through `schedule` until every measure's MCSE
/// is below `target_mcse`. Relative bias is compared as a fraction, not in
/// percent. Later steps extend the earlier replicates.
EscalationResult escalate_replicates(const ReplicateBatch& batch, double true_log_or,
                                     std::span<const int> schedule, double target_mcse = 0.05,
                                     const SummaryOptions& options = {});

}  // namespace ordprior
