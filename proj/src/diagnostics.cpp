#include "ordprior/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace ordprior {

namespace {

bool well_formed(const ChainDraws& draws, std::size_t min_chains, std::size_t min_length) {
  if (draws.size() < min_chains) return false;
  const std::size_t n = draws.front().size();
  if (n < min_length) return false;
  for (const auto& chain : draws) {
    if (chain.size() != n) return false;
    for (double x : chain) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

bool is_constant(const ChainDraws& draws) {
  const double first = draws.front().front();
  for (const auto& chain : draws) {
    for (double x : chain) {
      if (x != first) return false;
    }
  }
  return true;
}

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(const std::vector<double>& x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

// Biased autocovariance at one lag.
double autocovariance(const std::vector<double>& x, double mean, std::size_t lag) {
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
  return s / static_cast<double>(n);
}

ChainDraws fold(const ChainDraws& draws) {
  std::vector<double> all;
  for (const auto& c : draws) all.insert(all.end(), c.begin(), c.end());
  const double med = quantile(all, 0.5);
  ChainDraws out = draws;
  for (auto& c : out) {
    for (double& x : c) x = std::abs(x - med);
  }
  return out;
}

ChainDraws indicator_at_most(const ChainDraws& draws, double threshold) {
  ChainDraws out = draws;
  for (auto& c : out) {
    for (double& x : c) x = x <= threshold ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace

double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

ChainDraws split_chains(const ChainDraws& draws) {
  ChainDraws out;
  out.reserve(draws.size() * 2);
  for (const auto& c : draws) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

ChainDraws rank_normalize(const ChainDraws& draws) {
  std::vector<double> all;
  for (const auto& c : draws) all.insert(all.end(), c.begin(), c.end());
  const std::size_t S = all.size();
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  std::vector<double> rank(S);
  for (std::size_t i = 0; i < S;) {
    std::size_t j = i;
    while (j + 1 < S && all[order[j + 1]] == all[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal standard;
  ChainDraws out = draws;
  std::size_t idx = 0;
  for (auto& c : out) {
    for (double& x : c) {
      x = boost::math::quantile(standard, (rank[idx++] - 0.375) / (static_cast<double>(S) + 0.25));
    }
  }
  return out;
}

std::optional<double> rhat_basic(const ChainDraws& chains) {
  if (!well_formed(chains, 2, 2) || is_constant(chains)) return std::nullopt;
  const auto n = static_cast<double>(chains.front().size());
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(sample_variance(c));
  }
  const double within = mean_of(vars);
  const double between = n * sample_variance(means);
  if (within == 0.0) return std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

std::optional<double> ess_basic(const ChainDraws& chains) {
  if (!well_formed(chains, 1, 4) || is_constant(chains)) return std::nullopt;
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) means[c] = mean_of(chains[c]);

  auto mean_acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += autocovariance(chains[c], means[c], lag);
    return s / static_cast<double>(m);
  };

  const double nd = static_cast<double>(n);
  const double mean_var = mean_acov(0) * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += sample_variance(means);
  if (!(var_plus > 0.0)) return std::nullopt;

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t t = 0;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    t += 2;
    rho_even = 1.0 - (mean_var - mean_acov(t)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t] = rho_even;
      rho[t + 1] = rho_odd;
    }
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho[max_t] = rho_even;

  // Geyer's initial monotone sequence
  for (std::size_t s = 2; s + 2 <= max_t; s += 2) {
    if (rho[s] + rho[s + 1] > rho[s - 2] + rho[s - 1]) {
      rho[s] = 0.5 * (rho[s - 2] + rho[s - 1]);
      rho[s + 1] = rho[s];
    }
  }

  const double total = static_cast<double>(m) * nd;
  double tau = -1.0 + rho[max_t];
  for (std::size_t s = 0; s < max_t; ++s) tau += 2.0 * rho[s];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

std::optional<double> split_rhat(const ChainDraws& draws) {
  if (!well_formed(draws, 2, 4) || is_constant(draws)) return std::nullopt;
  const auto bulk = rhat_basic(rank_normalize(split_chains(draws)));
  const auto tail = rhat_basic(rank_normalize(split_chains(fold(draws))));
  if (!bulk) return tail;
  if (!tail) return bulk;
  return std::max(*bulk, *tail);
}

std::optional<double> ess_bulk(const ChainDraws& draws) {
  if (!well_formed(draws, 1, 4) || is_constant(draws)) return std::nullopt;
  return ess_basic(rank_normalize(split_chains(draws)));
}

std::optional<double> ess_tail(const ChainDraws& draws) {
  if (!well_formed(draws, 1, 4) || is_constant(draws)) return std::nullopt;
  std::vector<double> all;
  for (const auto& c : draws) all.insert(all.end(), c.begin(), c.end());
  const auto lower = ess_basic(split_chains(indicator_at_most(draws, quantile(all, 0.05))));
  const auto upper = ess_basic(split_chains(indicator_at_most(draws, quantile(all, 0.95))));
  if (!lower || !upper) return std::nullopt;
  return std::min(*lower, *upper);
}

namespace {

double extreme(const std::vector<std::optional<double>>& values, bool want_max) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& v : values) {
    if (!v) continue;
    if (std::isnan(best) || (want_max ? *v > best : *v < best)) best = *v;
  }
  return best;
}

}  // namespace

double Diagnostics::max_rhat() const { return extreme(rhat, true); }
double Diagnostics::min_ess_bulk() const { return extreme(ess_bulk, false); }
double Diagnostics::min_ess_tail() const { return extreme(ess_tail, false); }

Diagnostics diagnose(const ChainSet& run) {
  Diagnostics d;
  d.divergences_total = run.divergences_total();
  for (int k = 0; k < run.dim(); ++k) {
    const ChainDraws draws = run.parameter(k);
    d.rhat.push_back(run.chains() >= 2 ? split_rhat(draws) : std::nullopt);
    d.ess_bulk.push_back(ess_bulk(draws));
    d.ess_tail.push_back(ess_tail(draws));
  }
  return d;
}

}  // namespace ordprior
