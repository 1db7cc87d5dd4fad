#pragma once

// Proportional-odds (cumulative-logit) model for a two-arm trial.
//
// Orientation: cut-points model the UPPER tail,
//
//     logit P(Y >= j | x) = alpha_j + beta * x,   j = 2..J,
//
// so alpha is strictly DECREASING in j, higher categories are the favourable
// end of the scale and beta > 0 favours the intervention arm. Many packages
// use logit P(Y <= j) instead; their cut-points are the negated, reversed
// vector of ours. The boundary terms alpha_1 = +inf and alpha_{J+1} = -inf are
// implicit and never stored.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ordprior {

enum class Arm : int { Control = 0, Intervention = 1 };

/// Category probabilities of one arm. Always a strictly positive simplex.
class CategoryProbs {
 public:
  explicit CategoryProbs(std::vector<double> probs);

  int categories() const noexcept { return static_cast<int>(probs_.size()); }
  double operator[](int j) const { return probs_[static_cast<std::size_t>(j)]; }
  const std::vector<double>& values() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

/// Strictly decreasing, finite cut-points alpha_2..alpha_J (stored 0-based).
class Cutpoints {
 public:
  explicit Cutpoints(Eigen::VectorXd alpha);

  static bool is_valid(const Eigen::VectorXd& alpha) noexcept;

  int categories() const noexcept { return static_cast<int>(alpha_.size()) + 1; }
  double operator[](int k) const { return alpha_[k]; }
  const Eigen::VectorXd& values() const noexcept { return alpha_; }

 private:
  Eigen::VectorXd alpha_;
};

struct ModelParams {
  Cutpoints alpha;
  double beta = 0.0;

  int categories() const noexcept { return alpha.categories(); }
};

/// J x 2 table of outcome counts by arm. Sufficient statistic for the model.
class TrialData {
 public:
  explicit TrialData(int categories);

  int categories() const noexcept { return static_cast<int>(counts_.size()); }
  std::int64_t count(int category, Arm arm) const {
    return counts_[static_cast<std::size_t>(category)][static_cast<std::size_t>(arm)];
  }
  std::int64_t arm_total(Arm arm) const noexcept;
  std::int64_t n_total() const noexcept { return n_total_; }

  /// Adds n participants with outcome `category` (0-based) to `arm`.
  void add(int category, Arm arm, std::int64_t n = 1);

  /// Every count multiplied by `factor`.
  TrialData scaled(std::int64_t factor) const;

  bool operator==(const TrialData&) const = default;

 private:
  std::vector<std::array<std::int64_t, 2>> counts_;
  std::int64_t n_total_ = 0;
};

CategoryProbs probs_from_params(const ModelParams& params, Arm arm);

/// Inverse of the control-arm map: alpha[k] = logit(sum_{j >= k+1} probs[j]).
Cutpoints cutpoints_from_probs(const CategoryProbs& probs);

double log_likelihood(const TrialData& data, const ModelParams& params);

/// Gradient with respect to (alpha_2..alpha_J, beta).
Eigen::VectorXd grad_log_likelihood(const TrialData& data, const ModelParams& params);

namespace detail {

/// Unchecked kernel: sum_j weights[j] * log pi_j(alpha + shift).
///
/// When `grad_eta` is non-null, d/d(alpha_k + shift) is ADDED to
/// (*grad_eta)[k]. Returns -inf if the cut-points are not strictly ordered at
/// an occupied category. Categories with zero weight are skipped entirely.
double weighted_log_probs(std::span<const double> weights, const Eigen::VectorXd& alpha,
                          double shift, Eigen::VectorXd* grad_eta);

/// Both arms in one pass: `control` weights at alpha and `treated` weights at
/// alpha + beta, sharing the cut-point gap terms. Adds d/d alpha to
/// `grad_alpha` and sets `grad_beta`. With `simplex_jacobian` it also adds
/// sum_k log sigmoid(alpha_k) + log sigmoid(-alpha_k) and its gradient.
double two_arm_log_probs(std::span<const double> control, std::span<const double> treated,
                         const Eigen::VectorXd& alpha, double beta, bool simplex_jacobian,
                         Eigen::VectorXd& grad_alpha, double& grad_beta);

/// Log-likelihood plus gradient (alpha block then beta) for unchecked alpha.
double log_likelihood(const TrialData& data, const Eigen::VectorXd& alpha, double beta,
                      Eigen::VectorXd* grad);

}  // namespace detail

}  // namespace ordprior
