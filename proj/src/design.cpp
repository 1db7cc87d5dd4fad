#include "ordprior/design.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ordprior {

void DesignSpec::validate() const {
  if (!(interim_fraction > 0.0 && interim_fraction < 1.0)) {
    throw std::invalid_argument("DesignSpec: interim_fraction must be in (0, 1)");
  }
  if (!(interim_superiority_threshold > 0.5 && interim_superiority_threshold <= 1.0)) {
    throw std::invalid_argument("DesignSpec: interim threshold must be in (0.5, 1]");
  }
  if (!(final_superiority_threshold > 0.5 && final_superiority_threshold < 1.0)) {
    throw std::invalid_argument("DesignSpec: final threshold must be in (0.5, 1)");
  }
}

int DesignSpec::interim_n(int n_obs) const {
  return static_cast<int>(std::ceil(interim_fraction * n_obs - 1e-9));
}

double posterior_superiority(std::span<const double> beta_draws) {
  if (beta_draws.empty()) throw std::invalid_argument("posterior_superiority: no draws");
  const auto above = std::count_if(beta_draws.begin(), beta_draws.end(), [](double b) { return b > 0.0; });
  return static_cast<double>(above) / static_cast<double>(beta_draws.size());
}

FitSummary fit_posterior(const TrialData& data, const BetaPriorSpec& beta_spec,
                         const CutpointPriorSpec& cut_spec, const SamplerConfig& config) {
  const LogPosterior posterior(data, beta_spec, cut_spec);
  const LogDensityFn target = [&posterior](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    return posterior(q, grad).value;
  };
  const ConstrainFn constrain = [&posterior](const Eigen::VectorXd& q) { return posterior.constrain(q); };
  const int dim = posterior.dimension();

  FitSummary out;
  SamplerConfig current = config;
  for (std::uint64_t attempt = 0;; ++attempt) {
    SamplerConfig seeded = current;
    seeded.seed = derive_seed({config.seed, attempt});
    // only the last attempt's draws are reported; earlier ones just decide escalation
    seeded.stop_at_divergence = can_escalate(current);
    const ChainSet run = nuts_run(target, dim, {}, seeded, constrain);
    const EscalationStep step = escalate_on_divergence(current, run);
    if (step.next) {
      current = *step.next;
      ++out.escalations;
      continue;
    }
    const std::vector<double> beta = run.pooled(dim - 1);
    out.beta_median = quantile(beta, 0.5);
    out.ci_low = quantile(beta, 0.025);
    out.ci_high = quantile(beta, 0.975);
    out.p_superior = posterior_superiority(beta);
    out.diagnostics = diagnose(run);
    out.divergent_final = step.divergent_final;
    out.final_config = current;
    return out;
  }
}

ReplicateResult run_replicate(const Scenario& scn, const BetaPriorSpec& beta_spec,
                              const CutpointPriorSpec& cut_spec, const SamplerConfig& sampler,
                              const DesignSpec& design, Rng& rng) {
  design.validate();
  const auto participants = simulate_participants(scn, scn.n_obs, rng);

  auto analyse = [&](std::size_t n, std::uint64_t tag) {
    SamplerConfig cfg = sampler;
    cfg.seed = derive_seed({sampler.seed, tag});
    try {
      return fit_posterior(tabulate(participants, scn.categories, n), beta_spec, cut_spec, cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario " + std::to_string(scn.id) + ", n = " + std::to_string(n) +
                               ": " + e.what());
    }
  };

  ReplicateResult out;
  auto report = [&out](const FitSummary& fit, int n) {
    out.analysis_n = n;
    out.beta_median = fit.beta_median;
    out.ci_low = fit.ci_low;
    out.ci_high = fit.ci_high;
    out.p_superior = fit.p_superior;
    out.diagnostics = fit.diagnostics;
    out.divergent_final = fit.divergent_final;
    out.escalations += fit.escalations;
  };

  if (scn.design == DesignKind::Adaptive) {
    const int n_interim = design.interim_n(scn.n_obs);
    const FitSummary interim = analyse(static_cast<std::size_t>(n_interim), kInterimAnalysis);
    report(interim, n_interim);
    if (interim.p_superior > design.interim_superiority_threshold) {
      out.stopped_early = true;
      out.declared_superior = true;
      return out;
    }
  }
  const FitSummary final_fit = analyse(participants.size(), kFinalAnalysis);
  report(final_fit, scn.n_obs);
  out.declared_superior = final_fit.p_superior > design.final_superiority_threshold;
  return out;
}

}  // namespace ordprior
