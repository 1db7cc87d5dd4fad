#include "ordprior/priors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "ordprior/math.hpp"

namespace ordprior {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kLogSqrtTwoPi - std::log(sd) - 0.5 * z * z;
}

double log_beta_fn(double a, double b) {
  return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

// Unconstrained cut-point block -> alpha, with what the chain rule needs.
struct CutTransform {
  Eigen::VectorXd alpha;
  double log_jacobian = 0.0;
  Eigen::ArrayXd stick_fraction;  // Dirichlet kind: z_k
  Eigen::ArrayXd odds;            // Dirichlet kind: exp(alpha_k)
  Eigen::ArrayXd offset, w, e, u, l, log_stick, stick, rest, log_rest;  // scratch
  Eigen::VectorXd increment;       // ordered kind: exp(raw_k)
};

// Stick-breaking offsets log(J - k - 1) put raw = 0 at the uniform simplex.
double stick_offset(int categories, int k) { return std::log(static_cast<double>(categories - k - 1)); }

void transform_cutpoints(const Eigen::VectorXd& raw, const CutpointPriorSpec& spec, CutTransform& t) {
  const int K = static_cast<int>(raw.size()) - 1;  // number of cut-points
  const int J = K + 1;
  t.alpha.resize(K);
  t.log_jacobian = 0.0;
  if (spec.kind == CutpointPriorKind::Dirichlet) {
    // z_k = sigmoid(w_k) with w_k = raw_k - log(J - k - 1)
    if (t.offset.size() != K) {
      t.offset.resize(K);
      for (int k = 0; k < K; ++k) t.offset[k] = stick_offset(J, k);
    }
    t.w = raw.head(K).array() - t.offset;
    t.e = (-t.w.abs()).exp();
    t.u = 1.0 + t.e;
    t.l = t.u.log() * t.e / (t.u - 1.0);  // log1p(e)
    t.l = (t.u == 1.0).select(t.e, t.l);
    t.stick_fraction = (t.w >= 0.0).select(t.u.inverse(), t.e / t.u);
    // log S_{k+1}, the stick left after k + 1 breaks
    t.log_stick = (t.w >= 0.0).select(-t.w - t.l, -t.l);
    for (int k = 1; k < K; ++k) t.log_stick[k] += t.log_stick[k - 1];
    // alpha_k = logit(S_{k+1}) where S_{k+1} = P(Y >= k+2)
    t.stick = t.log_stick.exp();
    t.rest = 1.0 - t.stick;
    for (int k = 0; k < K; ++k) {
      if (t.stick[k] > 0.5) {
        t.rest[k] = -std::expm1(t.log_stick[k]);
        t.stick[k] = 1.0 - t.rest[k];
      }
    }
    t.log_rest = t.rest.log();
    t.odds = t.stick / t.rest;
    t.alpha = (t.log_stick - t.log_rest).matrix();
    // log z_k - log(1 - S_{k+1})
    t.log_jacobian = ((t.w >= 0.0).select(-t.l, t.w - t.l) - t.log_rest).sum();
  } else {
    t.increment.resize(K);
    t.alpha[0] = raw[0];
    t.increment[0] = 0.0;
    for (int k = 1; k < K; ++k) {
      t.increment[k] = std::exp(raw[k]);
      t.alpha[k] = t.alpha[k - 1] - t.increment[k];
      t.log_jacobian += raw[k];
    }
  }
}

CutTransform transform_cutpoints(const Eigen::VectorXd& raw, const CutpointPriorSpec& spec) {
  CutTransform t;
  transform_cutpoints(raw, spec, t);
  return t;
}

// log|d pi / d alpha| = sum_k log sigmoid(alpha_k) + log sigmoid(-alpha_k)
double add_simplex_log_jacobian(const Eigen::VectorXd& a, Eigen::VectorXd& grad) {
  double value = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double e = std::exp(-std::abs(a[k]));
    value += -std::abs(a[k]) - 2.0 * std::log1p(e);
    grad[k] -= std::copysign((1.0 - e) / (1.0 + e), a[k]);
  }
  return value;
}

// Pulls a gradient over alpha back to the raw cut-point block and adds the
// gradient of the transform's log-Jacobian.
void pull_back(const CutTransform& t, const CutpointPriorSpec& spec, const Eigen::VectorXd& g_alpha,
               Eigen::VectorXd& g_raw) {
  const int K = static_cast<int>(t.alpha.size());
  if (spec.kind == CutpointPriorKind::Dirichlet) {
    // d alpha_k / d raw_i = -z_i (1 + e^{alpha_k}) for i <= k
    double suffix_chain = 0.0;
    double suffix_odds = 0.0;
    for (int i = K - 1; i >= 0; --i) {
      const double odds = t.odds[i];
      suffix_chain += g_alpha[i] * (1.0 + odds);
      const double z = t.stick_fraction[i];
      suffix_odds += odds;
      g_raw[i] = -z * suffix_chain + (1.0 - z) - z * suffix_odds;
    }
  } else {
    double suffix = 0.0;
    for (int i = K - 1; i >= 1; --i) {
      suffix += g_alpha[i];
      g_raw[i] = -t.increment[i] * suffix + 1.0;
    }
    g_raw[0] = suffix + g_alpha[0];
  }
}

double dirichlet_normalizer(double concentration, int categories) {
  return boost::math::lgamma(categories * concentration) -
         categories * boost::math::lgamma(concentration);
}

}  // namespace

BetaPriorSpec beta_prior_by_name(std::string_view name) {
  BetaPriorSpec s;
  s.name = std::string(name);
  if (name == "normal_100") {
    s.kind = BetaPriorKind::NormalWide;
    s.scale_sd = 100.0;
  } else if (name == "normal_2.5") {
    s.kind = BetaPriorKind::NormalNarrow;
    s.scale_sd = 2.5;
  } else if (name == "cauchy") {
    s.kind = BetaPriorKind::Cauchy;
    s.scale_sd = 1.0;
  } else if (name == "laplace_100") {
    s.kind = BetaPriorKind::LaplaceWide;
    s.scale_sd = 100.0;
  } else if (name == "laplace_2.5") {
    s.kind = BetaPriorKind::LaplaceNarrow;
    s.scale_sd = 2.5;
  } else if (name == "r2_0.5") {
    s.kind = BetaPriorKind::RSquared;
    s.r2_shape1 = 0.5;
    s.r2_shape2 = 0.5;
  } else {
    throw std::invalid_argument("unknown beta prior '" + std::string(name) + "'");
  }
  return s;
}

CutpointPriorSpec cutpoint_prior_by_name(std::string_view name) {
  CutpointPriorSpec s;
  s.name = std::string(name);
  if (name == "dir_1") {
    s.concentration = 1.0;
  } else if (name == "dir_0.5") {
    s.concentration = 0.5;
  } else if (name == "dir_0.001") {
    s.concentration = 0.001;
  } else if (name == "dir_recip") {
    s.reciprocal = true;
  } else if (name == "normal_cuts_100") {
    s.kind = CutpointPriorKind::IndependentNormal;
    s.normal_sd = 100.0;
  } else {
    throw std::invalid_argument("unknown cut-point prior '" + std::string(name) + "'");
  }
  return s;
}

std::string to_string(CutpointAnchor anchor) {
  switch (anchor) {
    case CutpointAnchor::Auto: return "auto";
    case CutpointAnchor::Reference: return "reference";
    case CutpointAnchor::CovariateMean: return "covariate_mean";
  }
  return "unknown";
}

CutpointAnchor parse_anchor(std::string_view name) {
  if (name == "auto") return CutpointAnchor::Auto;
  if (name == "reference") return CutpointAnchor::Reference;
  if (name == "covariate_mean") return CutpointAnchor::CovariateMean;
  throw std::invalid_argument("unknown cut-point anchor '" + std::string(name) + "'");
}

CutpointAnchor resolve_anchor(const CutpointPriorSpec& cut_spec, const BetaPriorSpec& beta_spec) {
  if (cut_spec.anchor != CutpointAnchor::Auto) return cut_spec.anchor;
  return beta_spec.kind == BetaPriorKind::RSquared ? CutpointAnchor::CovariateMean
                                                   : CutpointAnchor::Reference;
}

const std::vector<std::string>& beta_prior_names() {
  static const std::vector<std::string> names{"normal_100",  "normal_2.5",  "cauchy",
                                              "laplace_100", "laplace_2.5", "r2_0.5"};
  return names;
}

const std::vector<std::string>& cutpoint_prior_names() {
  static const std::vector<std::string> names{"dir_1", "dir_0.5", "dir_0.001", "dir_recip",
                                              "normal_cuts_100"};
  return names;
}

ScalarDensity log_prior_beta_r2(const BetaPriorSpec& spec, double beta, double x_variance) {
  if (spec.kind != BetaPriorKind::RSquared) {
    throw std::invalid_argument("log_prior_beta_r2: spec is not an R-squared prior");
  }
  if (!std::isfinite(beta)) throw std::invalid_argument("log_prior_beta_r2: non-finite beta");
  if (!(x_variance > 0.0)) throw std::invalid_argument("log_prior_beta_r2: x_variance must be > 0");
  const double a = spec.r2_shape1;
  const double b = spec.r2_shape2;
  const double v = x_variance;
  const double L = kLogisticLatentVariance;
  const double b2 = beta * beta;
  const double denom = b2 * v + L;
  // With R2 = b^2 v / D and D = b^2 v + L, the half-Beta density times
  // |dR2/db| collapses to
  //   -lbeta(a,b) + (2a-1) log|b| + a log v + b log L - (a+b) log D
  // which stays finite at beta = 0 for a = 1/2.
  double value = -log_beta_fn(a, b) + a * std::log(v) + b * std::log(L) - (a + b) * std::log(denom);
  double deriv = -(a + b) * 2.0 * beta * v / denom;
  const double power = 2.0 * a - 1.0;
  if (power != 0.0) {
    value += power * std::log(std::abs(beta));
    deriv += power / beta;
  }
  return {value, deriv};
}

ScalarDensity log_prior_beta(const BetaPriorSpec& spec, double beta, double x_variance) {
  const double centered = beta - spec.location;
  switch (spec.kind) {
    case BetaPriorKind::NormalWide:
    case BetaPriorKind::NormalNarrow: {
      const double var = spec.scale_sd * spec.scale_sd;
      return {normal_log_pdf(beta, spec.location, spec.scale_sd), -centered / var};
    }
    case BetaPriorKind::Cauchy: {
      const double s = spec.scale_sd;
      const double z = centered / s;
      return {-std::log(std::numbers::pi * s) - std::log1p(z * z), -2.0 * z / (s * (1.0 + z * z))};
    }
    case BetaPriorKind::LaplaceWide:
    case BetaPriorKind::LaplaceNarrow: {
      const double scale = spec.scale_sd / std::numbers::sqrt2;
      const double sign = centered > 0.0 ? 1.0 : (centered < 0.0 ? -1.0 : 0.0);
      return {-std::log(2.0 * scale) - std::abs(centered) / scale, -sign / scale};
    }
    case BetaPriorKind::RSquared:
      return log_prior_beta_r2(spec, beta, x_variance);
  }
  throw std::logic_error("log_prior_beta: unhandled prior kind");
}

VectorDensity log_prior_cutpoints(const CutpointPriorSpec& spec, const Cutpoints& alpha) {
  const Eigen::VectorXd& a = alpha.values();
  const int K = static_cast<int>(a.size());
  const int J = K + 1;
  VectorDensity out{0.0, Eigen::VectorXd::Zero(K)};
  if (spec.kind == CutpointPriorKind::IndependentNormal) {
    const double var = spec.normal_sd * spec.normal_sd;
    for (int k = 0; k < K; ++k) {
      out.value += normal_log_pdf(a[k], 0.0, spec.normal_sd);
      out.gradient[k] = -a[k] / var;
    }
    return out;
  }
  const double c = spec.concentration_for(J);
  if (!(c > 0.0)) throw std::invalid_argument("log_prior_cutpoints: concentration must be > 0");
  const std::vector<double> ones(static_cast<std::size_t>(J), 1.0);
  Eigen::VectorXd g_log_probs = Eigen::VectorXd::Zero(K);
  const double sum_log_probs = detail::weighted_log_probs(ones, a, 0.0, &g_log_probs);
  out.value = dirichlet_normalizer(c, J) + (c - 1.0) * sum_log_probs;
  out.gradient = (c - 1.0) * g_log_probs;
  out.value += add_simplex_log_jacobian(a, out.gradient);
  return out;
}

UnconstrainedState to_unconstrained(const ModelParams& params, const CutpointPriorSpec& spec) {
  const Eigen::VectorXd& a = params.alpha.values();
  const int K = static_cast<int>(a.size());
  const int J = K + 1;
  UnconstrainedState raw(J);
  if (spec.kind == CutpointPriorKind::Dirichlet) {
    double log_stick = 0.0;
    for (int k = 0; k < K; ++k) {
      const double next = math::log_sigmoid(a[k]);
      const double log_keep = next - log_stick;  // log(1 - z_k) < 0
      raw[k] = math::log1m_exp(log_keep) - log_keep + stick_offset(J, k);
      log_stick = next;
    }
  } else {
    raw[0] = a[0];
    for (int k = 1; k < K; ++k) raw[k] = std::log(a[k - 1] - a[k]);
  }
  raw[K] = params.beta;
  return raw;
}

ConstrainedState from_unconstrained(const UnconstrainedState& raw, const CutpointPriorSpec& spec) {
  if (raw.size() < 2) throw std::invalid_argument("from_unconstrained: need at least 2 coordinates");
  if (!raw.allFinite()) throw std::invalid_argument("from_unconstrained: non-finite coordinate");
  CutTransform t = transform_cutpoints(raw, spec);
  if (!Cutpoints::is_valid(t.alpha)) {
    throw std::domain_error("from_unconstrained: cut-points collapse in double precision");
  }
  return {ModelParams{Cutpoints(std::move(t.alpha)), raw[raw.size() - 1]}, t.log_jacobian};
}

double treatment_indicator_variance(const TrialData& data) {
  const auto treated = static_cast<double>(data.arm_total(Arm::Intervention));
  const auto n = static_cast<double>(data.n_total());
  if (treated <= 0.0 || treated >= n) return 0.25;
  const double p = treated / n;
  return p * (1.0 - p);
}

LogPosterior::LogPosterior(TrialData data, BetaPriorSpec beta_spec, CutpointPriorSpec cut_spec)
    : data_(std::move(data)),
      beta_spec_(std::move(beta_spec)),
      cut_spec_(std::move(cut_spec)),
      x_variance_(treatment_indicator_variance(data_)),
      anchor_(0.0) {
  if (resolve_anchor(cut_spec_, beta_spec_) == CutpointAnchor::CovariateMean && data_.n_total() > 0) {
    anchor_ = static_cast<double>(data_.arm_total(Arm::Intervention)) / static_cast<double>(data_.n_total());
  }
  const int J = data_.categories();
  control_weights_.resize(static_cast<std::size_t>(J));
  treated_weights_.resize(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    control_weights_[static_cast<std::size_t>(j)] = static_cast<double>(data_.count(j, Arm::Control));
    treated_weights_[static_cast<std::size_t>(j)] =
        static_cast<double>(data_.count(j, Arm::Intervention));
  }
  if (cut_spec_.kind == CutpointPriorKind::Dirichlet && anchor_ == 0.0) {
    const double c = cut_spec_.concentration_for(J);
    if (!(c > 0.0)) throw std::invalid_argument("LogPosterior: concentration must be > 0");
    fused_dirichlet_ = true;
    dirichlet_log_normalizer_ = dirichlet_normalizer(c, J);
    fused_weights_ = control_weights_;
    for (double& w : fused_weights_) w += c - 1.0;
  }
}

Eigen::VectorXd LogPosterior::constrain(const UnconstrainedState& raw) const {
  const int J = dimension();
  Eigen::VectorXd out(J);
  out.head(J - 1) = transform_cutpoints(raw, cut_spec_).alpha.array() - raw[J - 1] * anchor_;
  out[J - 1] = raw[J - 1];
  return out;
}

PosteriorValue LogPosterior::operator()(const UnconstrainedState& raw, Eigen::VectorXd& grad) const {
  constexpr PosteriorValue kRejected{-math::kInf, false};
  const int J = dimension();
  const int K = J - 1;
  grad.setZero(J);
  if (raw.size() != J || !raw.allFinite()) return kRejected;

  // Per-thread scratch space; the sampler calls this in a tight loop.
  thread_local CutTransform t;
  thread_local Eigen::VectorXd alpha;
  thread_local Eigen::VectorXd g_alpha;
  thread_local Eigen::VectorXd g_raw;

  // t.alpha holds the anchored cut-points zeta; the model's are zeta - beta * anchor
  transform_cutpoints(raw, cut_spec_, t);
  if (!Cutpoints::is_valid(t.alpha)) return kRejected;
  const double beta = raw[K];
  alpha = t.alpha.array() - beta * anchor_;
  if (!Cutpoints::is_valid(alpha)) return kRejected;

  g_alpha.setZero(K);
  double value = 0.0;
  double g_beta = 0.0;
  if (fused_dirichlet_) {
    value += detail::two_arm_log_probs(fused_weights_, treated_weights_, alpha, beta, true, g_alpha, g_beta);
    value += dirichlet_log_normalizer_;
  } else {
    value += detail::two_arm_log_probs(control_weights_, treated_weights_, alpha, beta, false, g_alpha, g_beta);
    g_beta -= anchor_ * g_alpha.sum();
    const VectorDensity cut_prior = log_prior_cutpoints(cut_spec_, Cutpoints(t.alpha));
    value += cut_prior.value;
    g_alpha += cut_prior.gradient;
  }
  value += t.log_jacobian;

  const ScalarDensity beta_prior = log_prior_beta(beta_spec_, beta, x_variance_);
  value += beta_prior.value;
  g_beta += beta_prior.derivative;

  g_raw.resize(K);
  pull_back(t, cut_spec_, g_alpha, g_raw);
  grad.head(K) = g_raw;
  grad[K] = g_beta;

  if (!std::isfinite(value) || !grad.allFinite()) {
    grad.setZero(J);
    return kRejected;
  }
  return {value, true};
}

PosteriorValue log_posterior(const TrialData& data, const UnconstrainedState& raw,
                             const BetaPriorSpec& beta_spec, const CutpointPriorSpec& cut_spec,
                             Eigen::VectorXd& grad) {
  return LogPosterior(data, beta_spec, cut_spec)(raw, grad);
}

}  // namespace ordprior
