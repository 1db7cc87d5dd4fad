#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace ordprior {

struct SamplerConfig {
  int chains = 4;
  int warmup_iters = 5000;
  int sampling_iters = 5000;
  double target_accept = 0.80;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double divergence_energy_threshold = 1000.0;
  /// Run chains on separate threads. Results do not depend on this flag.
  bool parallel_chains = false;
  /// End the run at the first post-warm-up divergence. The draws are then
  /// incomplete and only good for deciding whether to escalate.
  bool stop_at_divergence = false;

  void validate() const;
};

/// Log density with gradient. Must return -inf (and may leave the gradient
/// arbitrary) outside the support. Must be safe to call concurrently.
using LogDensityFn = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd& grad)>;

/// Maps an unconstrained point to the stored representation.
using ConstrainFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& q)>;

/// Post-warm-up draws, chain-major: draw(c, i, k).
class ChainSet {
 public:
  ChainSet(int chains, int iters, int dim);

  int chains() const noexcept { return chains_; }
  int iters() const noexcept { return iters_; }
  int dim() const noexcept { return dim_; }

  double draw(int chain, int iter, int k) const { return draws_[index(chain, iter, k)]; }
  double& draw(int chain, int iter, int k) { return draws_[index(chain, iter, k)]; }

  /// One parameter as chains x iters.
  std::vector<std::vector<double>> parameter(int k) const;
  /// One parameter, all chains concatenated.
  std::vector<double> pooled(int k) const;

  int divergences_total() const;

  std::vector<int> divergence_count;
  std::vector<int> treedepth_saturation_count;
  std::vector<double> step_size;
  std::vector<double> acceptance_mean;
  std::vector<std::int64_t> leapfrog_steps;
  /// Set when `stop_at_divergence` ended the run early.
  bool truncated = false;

 private:
  std::size_t index(int chain, int iter, int k) const {
    return (static_cast<std::size_t>(chain) * static_cast<std::size_t>(iters_) +
            static_cast<std::size_t>(iter)) *
               static_cast<std::size_t>(dim_) +
           static_cast<std::size_t>(k);
  }

  int chains_;
  int iters_;
  int dim_;
  std::vector<double> draws_;
};

/// Multinomial No-U-Turn sampler with a diagonal metric.
///
/// Warm-up runs dual-averaging step-size adaptation toward
/// `target_accept` and estimates the metric in doubling windows (75-step
/// initial buffer, 25-step base window, 50-step terminal buffer, shrunk
/// proportionally for short warm-ups). A transition is divergent when the
/// Hamiltonian error exceeds `divergence_energy_threshold`; its sampled
/// state is kept.
///
/// `inits` may be empty, in which case every chain starts from a
/// uniform(-2, 2) draw. Non-finite starting points are re-drawn up to 100
/// times before std::runtime_error is thrown.
ChainSet nuts_run(const LogDensityFn& target, int dim, const std::vector<Eigen::VectorXd>& inits,
                  const SamplerConfig& config, const ConstrainFn& constrain = {});

struct EscalationStep {
  std::optional<SamplerConfig> next;
  bool divergent_final = false;
};

/// False once target_accept has reached the top of the divergence ladder.
bool can_escalate(const SamplerConfig& config);

/// Divergence ladder: target_accept 0.80 -> 0.95 -> 0.99 with max tree depth
/// raised from 10 to 12 on the first step. Returns no config when the run
/// had no divergences or the ladder is exhausted (then divergent_final).
EscalationStep escalate_on_divergence(const SamplerConfig& config, const ChainSet& run);

}  // namespace ordprior
