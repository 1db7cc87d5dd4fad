#include "ordprior/ordmodel.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ordprior/math.hpp"

namespace ordprior {

CategoryProbs::CategoryProbs(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    throw std::invalid_argument("CategoryProbs: need at least 2 categories");
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("CategoryProbs: every probability must be positive, got " +
                                  std::to_string(p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("CategoryProbs: probabilities sum to " + std::to_string(sum));
  }
}

bool Cutpoints::is_valid(const Eigen::VectorXd& alpha) noexcept {
  if (alpha.size() < 1) return false;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    if (!std::isfinite(alpha[k])) return false;
    if (k > 0 && !(alpha[k - 1] > alpha[k])) return false;
  }
  return true;
}

Cutpoints::Cutpoints(Eigen::VectorXd alpha) : alpha_(std::move(alpha)) {
  if (!is_valid(alpha_)) {
    throw std::invalid_argument("Cutpoints: must be finite and strictly decreasing");
  }
}

TrialData::TrialData(int categories) {
  if (categories < 2) throw std::invalid_argument("TrialData: need at least 2 categories");
  counts_.assign(static_cast<std::size_t>(categories), {0, 0});
}

std::int64_t TrialData::arm_total(Arm arm) const noexcept {
  std::int64_t total = 0;
  for (const auto& row : counts_) total += row[static_cast<std::size_t>(arm)];
  return total;
}

void TrialData::add(int category, Arm arm, std::int64_t n) {
  if (category < 0 || category >= categories()) {
    throw std::out_of_range("TrialData: category " + std::to_string(category) + " out of range");
  }
  if (n < 0) throw std::invalid_argument("TrialData: negative count");
  counts_[static_cast<std::size_t>(category)][static_cast<std::size_t>(arm)] += n;
  n_total_ += n;
}

TrialData TrialData::scaled(std::int64_t factor) const {
  TrialData out(categories());
  for (int j = 0; j < categories(); ++j) {
    out.add(j, Arm::Control, count(j, Arm::Control) * factor);
    out.add(j, Arm::Intervention, count(j, Arm::Intervention) * factor);
  }
  return out;
}

namespace detail {

namespace {

// log sigmoid(+-eta_k) and sigmoid(+-eta_k) for eta = alpha + shift.
struct SigmoidTerms {
  Eigen::ArrayXd eta, t, u, l, log_up, log_down, up, down;

  void fill(const Eigen::VectorXd& alpha, double shift) {
    eta = alpha.array() + shift;
    t = (-eta.abs()).exp();
    u = 1.0 + t;
    // log1p(t) = log(u) * t / (u - 1), exact when u rounds to 1
    l = u.log() * t / (u - 1.0);
    l = (u == 1.0).select(t, l);
    u = u.inverse();
    log_up = (eta >= 0.0).select(-l, eta - l);
    log_down = (eta >= 0.0).select(-eta - l, -l);
    up = (eta >= 0.0).select(u, t * u);
    down = (eta >= 0.0).select(t * u, u);
  }
};

// log(1 - exp(-gap_k)) and 1 / expm1(gap_k) for gap_k = alpha_k - alpha_{k+1}.
struct GapTerms {
  Eigen::ArrayXd gap, e, keep, log_keep, inv_gap;

  // False if some gap is not positive.
  bool fill(const Eigen::VectorXd& alpha) {
    const Eigen::Index K = alpha.size();
    const Eigen::Index n = K > 1 ? K - 1 : 0;
    gap = alpha.head(n).array() - alpha.tail(n).array();
    if (!(gap > 0.0).all()) return false;
    e = (-gap).exp();
    keep = 1.0 - e;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (e[k] > 0.5) keep[k] = -std::expm1(-gap[k]);
    }
    log_keep = keep.log();
    inv_gap = e / keep;
    return true;
  }
};

}  // namespace

double weighted_log_probs(std::span<const double> weights, const Eigen::VectorXd& alpha,
                          double shift, Eigen::VectorXd* grad_eta) {
  const int K = static_cast<int>(alpha.size());
  const int J = K + 1;
  thread_local SigmoidTerms s;
  s.fill(alpha, shift);

  double total = 0.0;
  for (int j = 0; j < J; ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    if (w == 0.0) continue;
    if (j == 0) {
      total += w * s.log_down[0];
      if (grad_eta) (*grad_eta)[0] -= w * s.up[0];
    } else if (j == J - 1) {
      total += w * s.log_up[K - 1];
      if (grad_eta) (*grad_eta)[K - 1] += w * s.down[K - 1];
    } else {
      // pi_j = sigmoid(a) - sigmoid(b) = sigmoid(a) * sigmoid(-b) * (1 - exp(b - a))
      const double gap = alpha[j - 1] - alpha[j];
      if (!(gap > 0.0)) return -math::kInf;
      const double keep = -std::expm1(-gap);
      total += w * (s.log_up[j - 1] + s.log_down[j] + std::log(keep));
      if (grad_eta) {
        const double inv_gap = std::exp(-gap) / keep;
        (*grad_eta)[j - 1] += w * (s.down[j - 1] + inv_gap);
        (*grad_eta)[j] -= w * (s.up[j] + inv_gap);
      }
    }
  }
  return std::isnan(total) ? -math::kInf : total;
}

double two_arm_log_probs(std::span<const double> control, std::span<const double> treated,
                         const Eigen::VectorXd& alpha, double beta, bool simplex_jacobian,
                         Eigen::VectorXd& grad_alpha, double& grad_beta) {
  const int K = static_cast<int>(alpha.size());
  const int J = K + 1;
  thread_local SigmoidTerms c;
  thread_local SigmoidTerms t;
  thread_local GapTerms g;
  c.fill(alpha, 0.0);
  t.fill(alpha, beta);
  const bool ordered = g.fill(alpha);

  double total = 0.0;
  grad_beta = 0.0;
  for (int j = 0; j < J; ++j) {
    const double w = control[static_cast<std::size_t>(j)];
    const double v = treated[static_cast<std::size_t>(j)];
    if (w == 0.0 && v == 0.0) continue;
    if (j == 0) {
      total += w * c.log_down[0] + v * t.log_down[0];
      grad_alpha[0] -= w * c.up[0] + v * t.up[0];
      grad_beta -= v * t.up[0];
    } else if (j == J - 1) {
      total += w * c.log_up[K - 1] + v * t.log_up[K - 1];
      grad_alpha[K - 1] += w * c.down[K - 1] + v * t.down[K - 1];
      grad_beta += v * t.down[K - 1];
    } else {
      double log_keep = 0.0;
      double inv_gap = 0.0;
      if (ordered) {
        log_keep = g.log_keep[j - 1];
        inv_gap = g.inv_gap[j - 1];
      } else {
        const double gap = alpha[j - 1] - alpha[j];
        if (!(gap > 0.0)) return -math::kInf;
        const double keep = -std::expm1(-gap);
        log_keep = std::log(keep);
        inv_gap = std::exp(-gap) / keep;
      }
      total += w * (c.log_up[j - 1] + c.log_down[j] + log_keep) + v * (t.log_up[j - 1] + t.log_down[j] + log_keep);
      grad_alpha[j - 1] += w * (c.down[j - 1] + inv_gap) + v * (t.down[j - 1] + inv_gap);
      grad_alpha[j] -= w * (c.up[j] + inv_gap) + v * (t.up[j] + inv_gap);
      grad_beta += v * (t.down[j - 1] - t.up[j]);
    }
  }
  if (simplex_jacobian) {
    total += (c.log_up + c.log_down).sum();
    grad_alpha.array() += c.down - c.up;
  }
  return std::isnan(total) ? -math::kInf : total;
}

double log_likelihood(const TrialData& data, const Eigen::VectorXd& alpha, double beta,
                      Eigen::VectorXd* grad) {
  const int J = data.categories();
  std::vector<double> control(static_cast<std::size_t>(J));
  std::vector<double> treated(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    control[static_cast<std::size_t>(j)] = static_cast<double>(data.count(j, Arm::Control));
    treated[static_cast<std::size_t>(j)] = static_cast<double>(data.count(j, Arm::Intervention));
  }
  if (grad == nullptr) {
    return weighted_log_probs(control, alpha, 0.0, nullptr) +
           weighted_log_probs(treated, alpha, beta, nullptr);
  }
  grad->setZero(J);
  Eigen::VectorXd g_alpha = Eigen::VectorXd::Zero(J - 1);
  double g_beta = 0.0;
  const double value = two_arm_log_probs(control, treated, alpha, beta, false, g_alpha, g_beta);
  grad->head(J - 1) = g_alpha;
  (*grad)[J - 1] = g_beta;
  return value;
}

}  // namespace detail

CategoryProbs probs_from_params(const ModelParams& params, Arm arm) {
  const Eigen::VectorXd& alpha = params.alpha.values();
  const int J = params.categories();
  const double shift = arm == Arm::Intervention ? params.beta : 0.0;
  std::vector<double> probs(static_cast<std::size_t>(J));
  std::vector<double> one_hot(static_cast<std::size_t>(J), 0.0);
  for (int j = 0; j < J; ++j) {
    one_hot[static_cast<std::size_t>(j)] = 1.0;
    probs[static_cast<std::size_t>(j)] =
        std::exp(detail::weighted_log_probs(one_hot, alpha, shift, nullptr));
    one_hot[static_cast<std::size_t>(j)] = 0.0;
  }
  return CategoryProbs(std::move(probs));
}

Cutpoints cutpoints_from_probs(const CategoryProbs& probs) {
  const int J = probs.categories();
  Eigen::VectorXd alpha(J - 1);
  // Accumulate the upper and lower tails separately so neither is formed by
  // cancellation against 1.
  std::vector<double> upper(static_cast<std::size_t>(J) + 1, 0.0);
  for (int j = J - 1; j >= 0; --j) upper[static_cast<std::size_t>(j)] = upper[j + 1] + probs[j];
  double lower = 0.0;
  for (int k = 0; k < J - 1; ++k) {
    lower += probs[k];
    alpha[k] = std::log(upper[static_cast<std::size_t>(k) + 1]) - std::log(lower);
  }
  return Cutpoints(std::move(alpha));
}

double log_likelihood(const TrialData& data, const ModelParams& params) {
  if (data.categories() != params.categories()) {
    throw std::invalid_argument("log_likelihood: category count mismatch");
  }
  return detail::log_likelihood(data, params.alpha.values(), params.beta, nullptr);
}

Eigen::VectorXd grad_log_likelihood(const TrialData& data, const ModelParams& params) {
  if (data.categories() != params.categories()) {
    throw std::invalid_argument("grad_log_likelihood: category count mismatch");
  }
  Eigen::VectorXd grad;
  detail::log_likelihood(data, params.alpha.values(), params.beta, &grad);
  return grad;
}

}  // namespace ordprior
