#include "ordprior/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ordprior {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Every measure is f(mean of a per-replicate quantity).
struct MeasureTerms {
  std::vector<double> x;
  bool binomial = false;
  bool or_of_mean = false;
  double true_or = 1.0;

  double finish(double mean) const {
    return or_of_mean ? 100.0 * (std::exp(mean) - true_or) / true_or : mean;
  }
  // |d finish / d mean|
  double slope(double mean) const { return or_of_mean ? 100.0 * std::exp(mean) / true_or : 1.0; }
};

MeasureTerms terms_for(std::span<const ReplicateResult> results, Measure m, double truth,
                       RelativeBiasKind kind) {
  MeasureTerms t;
  t.true_or = std::exp(truth);
  t.x.reserve(results.size());
  for (const ReplicateResult& r : results) {
    double v = 0.0;
    switch (m) {
      case Measure::Bias: v = r.beta_median - truth; break;
      case Measure::RelativeBias:
        v = kind == RelativeBiasKind::MeanOfOr ? 100.0 * (std::exp(r.beta_median) - t.true_or) / t.true_or
                                               : r.beta_median;
        break;
      case Measure::Coverage: v = (r.ci_low <= truth && truth <= r.ci_high) ? 1.0 : 0.0; break;
      case Measure::Mse: v = (r.beta_median - truth) * (r.beta_median - truth); break;
      case Measure::MeanPSuperior: v = r.p_superior; break;
      case Measure::PropSuperior: v = r.declared_superior ? 1.0 : 0.0; break;
      case Measure::PropStoppedEarly: v = r.stopped_early ? 1.0 : 0.0; break;
    }
    t.x.push_back(v);
  }
  t.binomial = m == Measure::Coverage || m == Measure::PropSuperior || m == Measure::PropStoppedEarly;
  t.or_of_mean = m == Measure::RelativeBias && kind == RelativeBiasKind::OrOfMean;
  return t;
}

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

bool all_equal(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

std::vector<ReplicateResult> kept_results(std::span<const ReplicateResult> results, bool exclude_divergent) {
  std::vector<ReplicateResult> kept;
  for (const ReplicateResult& r : results) {
    if (!(exclude_divergent && r.divergent_final)) kept.push_back(r);
  }
  return kept;
}

}  // namespace

std::string to_string(Measure m) {
  switch (m) {
    case Measure::Bias: return "bias";
    case Measure::RelativeBias: return "rel_bias_pct";
    case Measure::Coverage: return "coverage";
    case Measure::Mse: return "mse";
    case Measure::MeanPSuperior: return "mean_p_superior";
    case Measure::PropSuperior: return "prop_superior";
    case Measure::PropStoppedEarly: return "prop_stopped_early";
  }
  return "unknown";
}

std::string to_string(RelativeBiasKind kind) {
  return kind == RelativeBiasKind::MeanOfOr ? "mean_of_or" : "or_of_mean";
}

RelativeBiasKind parse_relative_bias(std::string_view name) {
  if (name == "mean_of_or") return RelativeBiasKind::MeanOfOr;
  if (name == "or_of_mean") return RelativeBiasKind::OrOfMean;
  throw std::invalid_argument("unknown relative bias definition '" + std::string(name) + "'");
}

double measure_value(std::span<const ReplicateResult> results, Measure m, double true_log_or,
                     RelativeBiasKind kind) {
  if (results.empty()) throw std::invalid_argument("measure_value: no replicates");
  const MeasureTerms t = terms_for(results, m, true_log_or, kind);
  return t.finish(mean_of(t.x));
}

double mcse_closed_form(std::span<const ReplicateResult> results, Measure m, double true_log_or,
                        RelativeBiasKind kind) {
  if (results.size() < 2) return kNaN;
  const MeasureTerms t = terms_for(results, m, true_log_or, kind);
  const auto n = static_cast<double>(t.x.size());
  if (t.binomial) {
    const double p = mean_of(t.x);
    return std::sqrt(p * (1.0 - p) / n);
  }
  if (all_equal(t.x)) return 0.0;
  return t.slope(mean_of(t.x)) * sd_of(t.x) / std::sqrt(n);
}

double mcse_jackknife_after_bootstrap(std::span<const ReplicateResult> results, Measure m,
                                      double true_log_or, int n_boot, Rng& rng, RelativeBiasKind kind) {
  if (results.size() < 10) throw std::invalid_argument("mcse_jackknife_after_bootstrap: need >= 10 replicates");
  if (n_boot < 200) throw std::invalid_argument("mcse_jackknife_after_bootstrap: need n_boot >= 200");
  const MeasureTerms t = terms_for(results, m, true_log_or, kind);
  if (all_equal(t.x)) return 0.0;
  const std::size_t n = t.x.size();

  std::vector<int> counts(n);
  std::vector<double> left_out_sum(n, 0.0);
  std::vector<int> left_out_count(n, 0);
  for (int b = 0; b < n_boot; ++b) {
    std::fill(counts.begin(), counts.end(), 0);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      ++counts[i];
      sum += t.x[i];
    }
    const double theta = t.finish(sum / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (counts[i] == 0) {
        left_out_sum[i] += theta;
        ++left_out_count[i];
      }
    }
  }

  std::vector<double> loo;
  for (std::size_t i = 0; i < n; ++i) {
    if (left_out_count[i] > 0) loo.push_back(left_out_sum[i] / left_out_count[i]);
  }
  if (loo.size() < 2) return kNaN;
  const double center = mean_of(loo);
  double ss = 0.0;
  for (double v : loo) ss += (v - center) * (v - center);
  const auto g = static_cast<double>(loo.size());
  return std::sqrt((g - 1.0) / g * ss);
}

double ScenarioSummary::value(Measure m) const {
  switch (m) {
    case Measure::Bias: return bias;
    case Measure::RelativeBias: return relative_bias_or;
    case Measure::Coverage: return coverage;
    case Measure::Mse: return mse;
    case Measure::MeanPSuperior: return mean_p_superior;
    case Measure::PropSuperior: return prop_superior;
    case Measure::PropStoppedEarly: return prop_stopped_early;
  }
  return kNaN;
}

ScenarioSummary summarize(std::span<const ReplicateResult> results, double true_log_or,
                          const SummaryOptions& options) {
  if (results.size() < 2) throw std::invalid_argument("summarize: need at least 2 replicates");
  const std::vector<ReplicateResult> kept = kept_results(results, options.exclude_divergent);
  if (kept.empty()) throw std::invalid_argument("summarize: every replicate was excluded as divergent");

  ScenarioSummary s;
  s.n_sim_used = static_cast<int>(kept.size());
  s.n_divergent_final = static_cast<int>(
      std::count_if(results.begin(), results.end(), [](const ReplicateResult& r) { return r.divergent_final; }));
  s.bias = measure_value(kept, Measure::Bias, true_log_or);
  s.relative_bias_or = measure_value(kept, Measure::RelativeBias, true_log_or, options.relative_bias);
  s.coverage = measure_value(kept, Measure::Coverage, true_log_or);
  s.mse = measure_value(kept, Measure::Mse, true_log_or);
  s.mean_p_superior = measure_value(kept, Measure::MeanPSuperior, true_log_or);
  s.prop_superior = measure_value(kept, Measure::PropSuperior, true_log_or);
  s.prop_stopped_early = measure_value(kept, Measure::PropStoppedEarly, true_log_or);

  for (Measure m : kAllMeasures) {
    const auto k = static_cast<std::size_t>(m);
    s.mcse_closed[k] = mcse_closed_form(kept, m, true_log_or, options.relative_bias);
    s.mcse_jab[k] = kNaN;
    if (kept.size() >= 10) {
      Rng rng(derive_seed({options.seed, static_cast<std::uint64_t>(k)}));
      s.mcse_jab[k] = mcse_jackknife_after_bootstrap(kept, m, true_log_or, options.n_boot, rng,
                                                     options.relative_bias);
    }
    s.mcse[k] = kept.size() >= 10 ? s.mcse_jab[k] : s.mcse_closed[k];
  }
  return s;
}

EscalationResult escalate_replicates(const ReplicateBatch& batch, double true_log_or,
                                     std::span<const int> schedule, double target_mcse,
                                     const SummaryOptions& options) {
  if (schedule.empty()) throw std::invalid_argument("escalate_replicates: empty schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] < 2 || (i > 0 && schedule[i] <= schedule[i - 1])) {
      throw std::invalid_argument("escalate_replicates: schedule must be increasing and >= 2");
    }
  }
  EscalationResult out;
  for (int target_n : schedule) {
    const int begin = static_cast<int>(out.replicates.size());
    std::vector<ReplicateResult> more = batch(begin, target_n);
    if (static_cast<int>(more.size()) != target_n - begin) {
      throw std::runtime_error("escalate_replicates: batch returned the wrong number of replicates");
    }
    out.replicates.insert(out.replicates.end(), more.begin(), more.end());
    out.summary = summarize(out.replicates, true_log_or, options);
    out.missed.clear();
    for (Measure m : kAllMeasures) {
      double se = out.summary.mcse_of(m);
      if (m == Measure::RelativeBias) se /= 100.0;
      if (!(se < target_mcse)) out.missed.push_back(m);
    }
    out.target_met = out.missed.empty();
    if (out.target_met) break;
  }
  return out;
}

}  // namespace ordprior
