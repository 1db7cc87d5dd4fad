#include "ordprior/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

#include "ordprior/math.hpp"
#include "ordprior/rng.hpp"

namespace ordprior {

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("SamplerConfig: chains must be >= 1");
  if (warmup_iters < 0) throw std::invalid_argument("SamplerConfig: warmup_iters must be >= 0");
  if (sampling_iters < 1) throw std::invalid_argument("SamplerConfig: sampling_iters must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw std::invalid_argument("SamplerConfig: target_accept must lie in (0, 1)");
  }
  if (max_tree_depth < 1 || max_tree_depth > 15) {
    throw std::invalid_argument("SamplerConfig: max_tree_depth must lie in [1, 15]");
  }
  if (!(divergence_energy_threshold > 0.0)) {
    throw std::invalid_argument("SamplerConfig: divergence threshold must be > 0");
  }
}

ChainSet::ChainSet(int chains, int iters, int dim)
    : divergence_count(static_cast<std::size_t>(chains), 0),
      treedepth_saturation_count(static_cast<std::size_t>(chains), 0),
      step_size(static_cast<std::size_t>(chains), 0.0),
      acceptance_mean(static_cast<std::size_t>(chains), 0.0),
      leapfrog_steps(static_cast<std::size_t>(chains), 0),
      chains_(chains),
      iters_(iters),
      dim_(dim),
      draws_(static_cast<std::size_t>(chains) * static_cast<std::size_t>(iters) *
             static_cast<std::size_t>(dim)) {}

std::vector<std::vector<double>> ChainSet::parameter(int k) const {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(chains_),
                                       std::vector<double>(static_cast<std::size_t>(iters_)));
  for (int c = 0; c < chains_; ++c) {
    for (int i = 0; i < iters_; ++i) out[c][i] = draw(c, i, k);
  }
  return out;
}

std::vector<double> ChainSet::pooled(int k) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(chains_) * static_cast<std::size_t>(iters_));
  for (int c = 0; c < chains_; ++c) {
    for (int i = 0; i < iters_; ++i) out.push_back(draw(c, i, k));
  }
  return out;
}

int ChainSet::divergences_total() const {
  int total = 0;
  for (int d : divergence_count) total += d;
  return total;
}

namespace {

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

struct TransitionStats {
  double accept_stat = 0.0;
  bool divergent = false;
  int depth = 0;
  int n_leapfrog = 0;
};

// Nesterov dual averaging of log(step size).
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double target) : target_(target) {}

  void restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    counter_ += 1.0;
    accept_stat = std::min(accept_stat, 1.0);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / kGamma;
    const double x_eta = std::pow(counter_, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kKappa = 0.75;
  static constexpr double kT0 = 10.0;
  double target_;
  double mu_ = 0.0;
  double counter_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Welford accumulator plus the doubling-window schedule.
class MetricAdapter {
 public:
  MetricAdapter(int warmup, int dim) : warmup_(warmup), mean_(Eigen::VectorXd::Zero(dim)),
                                       m2_(Eigen::VectorXd::Zero(dim)) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_end_ = init_buffer_ + window_size_ - 1;
  }

  // Returns true when a new metric was written into inv_metric.
  bool learn(const Eigen::VectorXd& q, Eigen::VectorXd& inv_metric) {
    if (!enabled_) return false;
    if (in_window()) add_sample(q);
    if (at_window_end()) {
      compute_next_window();
      const double n = static_cast<double>(count_);
      Eigen::VectorXd var = m2_ / (n - 1.0);
      // regularize toward 1e-3 with weight 5 / (n + 5)
      var = (n / ((n + 5.0) * (n + 5.0))) * var +
            1e-3 * (5.0 / (n + 5.0)) * Eigen::VectorXd::Ones(var.size());
      if (!var.allFinite()) throw std::runtime_error("metric adaptation produced non-finite variance");
      inv_metric = var;
      count_ = 0;
      mean_.setZero();
      m2_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
  }
  bool at_window_end() const { return counter_ == next_window_end_ && counter_ != warmup_; }

  void compute_next_window() {
    if (next_window_end_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_end_ = counter_ + window_size_;
    if (next_window_end_ != warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_end_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_end_ = warmup_ - term_buffer_ - 1;
    }
  }

  void add_sample(const Eigen::VectorXd& q) {
    ++count_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  bool enabled_ = true;
  int warmup_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_end_ = 0;
  int counter_ = 0;
  long count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

class NutsChain {
 public:
  NutsChain(const LogDensityFn& target, int dim, const SamplerConfig& config, Rng& rng)
      : target_(target),
        inv_metric_(Eigen::VectorXd::Ones(dim)),
        max_depth_(config.max_tree_depth),
        max_delta_h_(config.divergence_energy_threshold),
        rng_(rng) {}

  void set_max_depth(int depth) { max_depth_ = depth; }
  double step_size() const { return step_size_; }
  void set_step_size(double eps) { step_size_ = eps; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }

  void evaluate(PhasePoint& z) const {
    z.log_density = target_(z.q, z.grad);
    if (std::isnan(z.log_density)) z.log_density = -math::kInf;
  }

  void sample_momentum(PhasePoint& z) {
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
  }

  double hamiltonian(const PhasePoint& z) const {
    if (z.log_density == -math::kInf) return math::kInf;
    return -z.log_density + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
  }

  Eigen::VectorXd sharp(const PhasePoint& z) const { return inv_metric_.cwiseProduct(z.p); }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    evaluate(z);
    z.p += 0.5 * eps * z.grad;
  }

  // Doubling/halving heuristic toward a one-step acceptance of 0.8.
  void init_step_size(const PhasePoint& start) {
    if (step_size_ == 0.0 || step_size_ > 1e7 || std::isnan(step_size_)) return;
    const double log_target = std::log(0.8);
    auto one_step_delta = [&]() {
      PhasePoint z = start;
      sample_momentum(z);
      const double h0 = hamiltonian(z);
      leapfrog(z, step_size_);
      double h = hamiltonian(z);
      if (std::isnan(h)) h = math::kInf;
      return h0 - h;
    };
    const int direction = one_step_delta() > log_target ? 1 : -1;
    while (true) {
      const double delta = one_step_delta();
      if (direction == 1 && !(delta > log_target)) break;
      if (direction == -1 && !(delta < log_target)) break;
      step_size_ = direction == 1 ? 2.0 * step_size_ : 0.5 * step_size_;
      if (step_size_ > 1e7) throw std::runtime_error("step size diverged to infinity; posterior may be improper");
      if (step_size_ == 0.0) throw std::runtime_error("step size collapsed to zero");
    }
  }

  TransitionStats transition(PhasePoint& current) {
    PhasePoint z = current;
    sample_momentum(z);

    PhasePoint z_fwd = z;
    PhasePoint z_bck = z;
    PhasePoint z_sample = z;
    PhasePoint z_propose = z;

    Eigen::VectorXd p_fwd_fwd = z.p;
    Eigen::VectorXd p_sharp_fwd_fwd = sharp(z);
    Eigen::VectorXd p_fwd_bck = z.p;
    Eigen::VectorXd p_sharp_fwd_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_fwd = z.p;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_bck = z.p;
    Eigen::VectorXd p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd rho = z.p;

    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    divergent_ = false;
    int depth = 0;

    const Eigen::Index n = z.q.size();
    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(n);
      bool valid_subtree = false;
      double log_sum_weight_subtree = -math::kInf;

      if (rng_.uniform() > 0.5) {
        working_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid_subtree = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                   p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_fwd = working_;
      } else {
        working_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid_subtree = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                   p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_bck = working_;
      }

      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = math::log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_extended = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      rho_extended = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }

    current = z_sample;
    TransitionStats stats;
    stats.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    stats.divergent = divergent_;
    stats.depth = depth;
    stats.n_leapfrog = n_leapfrog;
    return stats;
  }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(working_, sign * step_size_);
      ++n_leapfrog;
      double h = hamiltonian(working_);
      if (std::isnan(h)) h = math::kInf;
      if (h - h0 > max_delta_h_) divergent_ = true;
      log_sum_weight = math::log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = working_;
      p_sharp_beg = sharp(working_);
      p_sharp_end = p_sharp_beg;
      rho += working_.p;
      p_beg = working_.p;
      p_end = p_beg;
      return !divergent_;
    }

    const Eigen::Index n = working_.q.size();
    double log_sum_weight_init = -math::kInf;
    Eigen::VectorXd p_init_end(n);
    Eigen::VectorXd p_sharp_init_end(n);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(n);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob)) {
      return false;
    }

    PhasePoint z_propose_final = working_;
    double log_sum_weight_final = -math::kInf;
    Eigen::VectorXd p_final_beg(n);
    Eigen::VectorXd p_sharp_final_beg(n);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(n);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, n_leapfrog, log_sum_weight_final,
                    sum_metro_prob)) {
      return false;
    }

    const double log_sum_weight_subtree = math::log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = math::log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_extended = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_extended);
    rho_extended = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  const LogDensityFn& target_;
  Eigen::VectorXd inv_metric_;
  double step_size_ = 1.0;
  int max_depth_;
  double max_delta_h_;
  Rng& rng_;
  PhasePoint working_;
  bool divergent_ = false;
};

void run_chain(const LogDensityFn& target, int dim, const Eigen::VectorXd* init,
               const SamplerConfig& config, const ConstrainFn& constrain, int chain, ChainSet& out,
               std::atomic<bool>& stop) {
  Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(chain)}));

  PhasePoint z;
  z.q = init ? *init : Eigen::VectorXd::NullaryExpr(dim, [&] { return rng.uniform(-2.0, 2.0); });
  z.p = Eigen::VectorXd::Zero(dim);
  z.grad = Eigen::VectorXd::Zero(dim);
  NutsChain sampler(target, dim, config, rng);
  sampler.evaluate(z);
  for (int attempt = 0; !(std::isfinite(z.log_density) && z.grad.allFinite()); ++attempt) {
    if (attempt == 100) {
      throw std::runtime_error("nuts_run: chain " + std::to_string(chain) +
                               " found no finite starting point after 100 re-draws");
    }
    for (int i = 0; i < dim; ++i) z.q[i] = rng.uniform(-2.0, 2.0);
    sampler.evaluate(z);
  }

  sampler.init_step_size(z);
  StepSizeAdapter step_adapter(config.target_accept);
  step_adapter.restart(sampler.step_size());
  MetricAdapter metric_adapter(config.warmup_iters, dim);

  for (int it = 0; it < config.warmup_iters; ++it) {
    if (stop.load(std::memory_order_relaxed)) return;
    const TransitionStats s = sampler.transition(z);
    sampler.set_step_size(step_adapter.learn(s.accept_stat));
    if (metric_adapter.learn(z.q, sampler.inv_metric())) {
      sampler.init_step_size(z);
      step_adapter.restart(sampler.step_size());
    }
  }
  if (config.warmup_iters > 0) sampler.set_step_size(step_adapter.final_step_size());

  const auto c = static_cast<std::size_t>(chain);
  double accept_sum = 0.0;
  for (int it = 0; it < config.sampling_iters; ++it) {
    if (stop.load(std::memory_order_relaxed)) return;
    const TransitionStats s = sampler.transition(z);
    accept_sum += s.accept_stat;
    if (s.divergent) {
      ++out.divergence_count[c];
      if (config.stop_at_divergence) {
        stop.store(true, std::memory_order_relaxed);
        return;
      }
    }
    if (s.depth >= config.max_tree_depth) ++out.treedepth_saturation_count[c];
    out.leapfrog_steps[c] += s.n_leapfrog;
    const Eigen::VectorXd stored = constrain ? constrain(z.q) : z.q;
    for (int k = 0; k < dim; ++k) out.draw(chain, it, k) = stored[k];
  }
  out.step_size[c] = sampler.step_size();
  out.acceptance_mean[c] = accept_sum / config.sampling_iters;
}

}  // namespace

ChainSet nuts_run(const LogDensityFn& target, int dim, const std::vector<Eigen::VectorXd>& inits,
                  const SamplerConfig& config, const ConstrainFn& constrain) {
  config.validate();
  if (dim < 1) throw std::invalid_argument("nuts_run: dimension must be >= 1");
  if (!inits.empty() && static_cast<int>(inits.size()) != config.chains) {
    throw std::invalid_argument("nuts_run: need one initial point per chain");
  }
  ChainSet out(config.chains, config.sampling_iters, dim);
  auto init_for = [&](int c) { return inits.empty() ? nullptr : &inits[static_cast<std::size_t>(c)]; };
  std::atomic<bool> stop{false};

  if (!config.parallel_chains || config.chains == 1) {
    for (int c = 0; c < config.chains && !stop; ++c) {
      run_chain(target, dim, init_for(c), config, constrain, c, out, stop);
    }
    out.truncated = stop;
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.chains));
  {
    std::vector<std::jthread> workers;
    for (int c = 0; c < config.chains; ++c) {
      workers.emplace_back([&, c] {
        try {
          run_chain(target, dim, init_for(c), config, constrain, c, out, stop);
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  out.truncated = stop;
  return out;
}

bool can_escalate(const SamplerConfig& config) { return config.target_accept < 0.99; }

EscalationStep escalate_on_divergence(const SamplerConfig& config, const ChainSet& run) {
  if (run.divergences_total() == 0) return {};
  SamplerConfig next = config;
  if (config.target_accept < 0.95) {
    next.target_accept = 0.95;
  } else if (can_escalate(config)) {
    next.target_accept = 0.99;
  } else {
    return {std::nullopt, true};
  }
  next.max_tree_depth = std::max(config.max_tree_depth, 12);
  return {next, false};
}

}  // namespace ordprior
