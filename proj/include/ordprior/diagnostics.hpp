#pragma once

#include <optional>
#include <vector>

#include "ordprior/sampler.hpp"

namespace ordprior {

/// Draws of one parameter, one inner vector per chain (equal lengths).
using ChainDraws = std::vector<std::vector<double>>;

/// Rank-normalized split-R-hat: the larger of the bulk value (ranks mapped
/// through the Normal quantile function) and the same statistic on the
/// folded draws |x - median|. Empty when the draws are constant or the input
/// is too short (< 2 chains or < 4 draws per chain).
std::optional<double> split_rhat(const ChainDraws& draws);

/// Rank-normalized split bulk ESS.
std::optional<double> ess_bulk(const ChainDraws& draws);

/// Minimum ESS of the 5% and 95% quantile indicators.
std::optional<double> ess_tail(const ChainDraws& draws);

/// Classic R-hat on the given (already split) chains, no rank transform.
std::optional<double> rhat_basic(const ChainDraws& chains);

/// ESS with Geyer's initial monotone sequence on the given chains.
std::optional<double> ess_basic(const ChainDraws& chains);

/// Each chain cut into two halves (the middle draw of odd chains dropped).
ChainDraws split_chains(const ChainDraws& draws);

/// Ranks over all draws (ties averaged) mapped to Normal scores with
/// Blom's offset, (r - 3/8) / (S + 1/4).
ChainDraws rank_normalize(const ChainDraws& draws);

struct Diagnostics {
  std::vector<std::optional<double>> rhat;
  std::vector<std::optional<double>> ess_bulk;
  std::vector<std::optional<double>> ess_tail;
  int divergences_total = 0;

  /// Largest defined R-hat (NaN if none defined).
  double max_rhat() const;
  double min_ess_bulk() const;
  double min_ess_tail() const;
};

Diagnostics diagnose(const ChainSet& run);

/// Type-7 (linear interpolation) sample quantile.
double quantile(std::vector<double> values, double prob);

}  // namespace ordprior
