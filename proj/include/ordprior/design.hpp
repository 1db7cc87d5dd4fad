#pragma once

#include <span>
#include <vector>

#include "ordprior/dgm.hpp"
#include "ordprior/diagnostics.hpp"
#include "ordprior/priors.hpp"
#include "ordprior/sampler.hpp"

namespace ordprior {

/// Decision rules. Whether an interim look happens is a property of the
/// scenario (Scenario::design).
struct DesignSpec {
  double interim_fraction = 0.5;
  /// A value of 1 disables early stopping.
  double interim_superiority_threshold = 0.99;
  double final_superiority_threshold = 0.95;

  void validate() const;
  /// ceil(interim_fraction * n_obs)
  int interim_n(int n_obs) const;
};

/// Posterior summary of one model fit after the divergence ladder.
struct FitSummary {
  double beta_median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_superior = 0.0;
  Diagnostics diagnostics;
  int escalations = 0;
  bool divergent_final = false;
  SamplerConfig final_config;
};

struct ReplicateResult {
  bool stopped_early = false;
  bool declared_superior = false;
  int analysis_n = 0;
  double beta_median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_superior = 0.0;
  Diagnostics diagnostics;
  bool divergent_final = false;
  /// Ladder steps taken over all analyses of the replicate.
  int escalations = 0;
};

/// Fraction of draws strictly above zero.
double posterior_superiority(std::span<const double> beta_draws);

/// Fits the model, rerunning with stricter sampler settings while
/// divergences remain and the ladder allows. Attempt a uses the seed
/// derive_seed({config.seed, a}).
FitSummary fit_posterior(const TrialData& data, const BetaPriorSpec& beta_spec,
                         const CutpointPriorSpec& cut_spec, const SamplerConfig& config);

/// Analysis tags used to derive sampler seeds inside a replicate.
inline constexpr std::uint64_t kInterimAnalysis = 0;
inline constexpr std::uint64_t kFinalAnalysis = 1;

/// Simulates and analyses one trial. All n_obs participants are drawn from
/// `rng` up front; an interim look uses the first ceil(fraction * n_obs) of
/// them. The fit at analysis t uses sampler seed
/// derive_seed({sampler.seed, t}), so a fixed design and an adaptive design
/// that never stops share their final analysis exactly.
ReplicateResult run_replicate(const Scenario& scn, const BetaPriorSpec& beta_spec,
                              const CutpointPriorSpec& cut_spec, const SamplerConfig& sampler,
                              const DesignSpec& design, Rng& rng);

}  // namespace ordprior
