#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ordprior/ordmodel.hpp"

namespace ordprior {

enum class BetaPriorKind { NormalWide, NormalNarrow, Cauchy, LaplaceWide, LaplaceNarrow, RSquared };

/// Prior on the treatment log-OR. `scale_sd` is a standard deviation for the
/// Normal and Laplace kinds (Laplace scale b = scale_sd / sqrt(2)).
struct BetaPriorSpec {
  BetaPriorKind kind = BetaPriorKind::NormalWide;
  double location = 0.0;
  double scale_sd = 100.0;
  double r2_shape1 = 0.5;
  double r2_shape2 = 0.5;
  std::string name = "normal_100";
};

enum class CutpointPriorKind { Dirichlet, IndependentNormal };

/// Covariate value at which the cut-point prior is placed. Reference puts it
/// on the control arm (x = 0); CovariateMean puts it at the observed
/// fraction of intervention participants, i.e. on the cut-points
/// alpha + beta * mean(x). Auto picks CovariateMean for the R-squared
/// beta prior and Reference otherwise.
enum class CutpointAnchor { Auto, Reference, CovariateMean };

std::string to_string(CutpointAnchor anchor);
CutpointAnchor parse_anchor(std::string_view name);

/// Prior on the cut-points. For the Dirichlet kind `reciprocal` selects the
/// per-category concentration 1/J, resolved once J is known.
struct CutpointPriorSpec {
  CutpointPriorKind kind = CutpointPriorKind::Dirichlet;
  double concentration = 1.0;
  bool reciprocal = false;
  double normal_sd = 100.0;
  std::string name = "dir_1";
  CutpointAnchor anchor = CutpointAnchor::Auto;

  double concentration_for(int categories) const {
    return reciprocal ? 1.0 / categories : concentration;
  }
};

/// Registered identifiers: normal_100, normal_2.5, cauchy, laplace_100,
/// laplace_2.5, r2_0.5. Throws std::invalid_argument on anything else.
BetaPriorSpec beta_prior_by_name(std::string_view name);

/// Registered identifiers: dir_1, dir_0.5, dir_0.001, dir_recip, normal_cuts_100.
CutpointPriorSpec cutpoint_prior_by_name(std::string_view name);

const std::vector<std::string>& beta_prior_names();
const std::vector<std::string>& cutpoint_prior_names();

struct ScalarDensity {
  double value;
  double derivative;
};

struct VectorDensity {
  double value;
  Eigen::VectorXd gradient;
};

/// Latent variance of the standard logistic distribution, pi^2 / 3.
inline constexpr double kLogisticLatentVariance = 3.2898681336964528;

/// Normalized log density and derivative. The R-squared kind uses
/// `x_variance` (variance of the treatment indicator).
ScalarDensity log_prior_beta(const BetaPriorSpec& spec, double beta, double x_variance = 0.25);

/// Density of beta induced by R^2 = b^2 v / (b^2 v + pi^2/3) ~ Beta(a1, a2),
/// symmetrized over the sign of beta.
ScalarDensity log_prior_beta_r2(const BetaPriorSpec& spec, double beta, double x_variance);

/// Proper log density over alpha. For the Dirichlet kind this is the
/// Dirichlet density of the implied control simplex plus log|d pi / d alpha|.
VectorDensity log_prior_cutpoints(const CutpointPriorSpec& spec, const Cutpoints& alpha);

using UnconstrainedState = Eigen::VectorXd;

struct ConstrainedState {
  ModelParams params;
  double log_jacobian;
};

/// Maps (alpha, beta) to R^J: J-1 cut-point coordinates followed by beta.
UnconstrainedState to_unconstrained(const ModelParams& params, const CutpointPriorSpec& spec);

/// Inverse of to_unconstrained plus log|d alpha / d raw|. Throws
/// std::domain_error if the cut-points are not representable in double
/// precision (adjacent cut-points collapse).
ConstrainedState from_unconstrained(const UnconstrainedState& raw, const CutpointPriorSpec& spec);

struct PosteriorValue {
  double value;
  bool finite;
};

/// Anchor with Auto resolved against the beta prior.
CutpointAnchor resolve_anchor(const CutpointPriorSpec& cut_spec, const BetaPriorSpec& beta_spec);

/// Log posterior over the unconstrained state, including the transform
/// log-Jacobian. Non-finite intermediate values give {-inf, false}.
///
/// The cut-point block of the state is mapped by the same transform as
/// to_unconstrained uses, but onto zeta = alpha + beta * anchor, where anchor
/// is 0 or the intervention fraction (see CutpointAnchor). The shift has unit
/// Jacobian.
class LogPosterior {
 public:
  LogPosterior(TrialData data, BetaPriorSpec beta_spec, CutpointPriorSpec cut_spec);

  int dimension() const noexcept { return data_.categories(); }
  const TrialData& data() const noexcept { return data_; }
  double x_variance() const noexcept { return x_variance_; }
  /// Covariate value the cut-point prior is placed at.
  double anchor() const noexcept { return anchor_; }

  PosteriorValue operator()(const UnconstrainedState& raw, Eigen::VectorXd& grad) const;

  /// Cut-points followed by beta, without validity checks.
  Eigen::VectorXd constrain(const UnconstrainedState& raw) const;

 private:
  TrialData data_;
  BetaPriorSpec beta_spec_;
  CutpointPriorSpec cut_spec_;
  double x_variance_;
  double anchor_;
  std::vector<double> control_weights_;
  std::vector<double> treated_weights_;
  // A Dirichlet prior placed at x = 0 is folded into the control-arm weights.
  bool fused_dirichlet_ = false;
  double dirichlet_log_normalizer_ = 0.0;
  std::vector<double> fused_weights_;
};

PosteriorValue log_posterior(const TrialData& data, const UnconstrainedState& raw,
                             const BetaPriorSpec& beta_spec, const CutpointPriorSpec& cut_spec,
                             Eigen::VectorXd& grad);

/// Centered variance of the treatment indicator, p(1-p) with p the
/// intervention fraction. Falls back to 0.25 when an arm is empty.
double treatment_indicator_variance(const TrialData& data);

}  // namespace ordprior
