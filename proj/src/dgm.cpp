#include "ordprior/dgm.hpp"

#include <cmath>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>

namespace ordprior {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Skewed: return "skewed";
    case ShapeKind::UShaped: return "u_shaped";
    case ShapeKind::Uniform: return "uniform";
  }
  return "unknown";
}

std::string to_string(DesignKind kind) {
  return kind == DesignKind::Fixed ? "fixed" : "adaptive";
}

ShapeKind parse_shape(std::string_view name) {
  if (name == "skewed") return ShapeKind::Skewed;
  if (name == "u_shaped") return ShapeKind::UShaped;
  if (name == "uniform") return ShapeKind::Uniform;
  throw std::invalid_argument("unknown control shape '" + std::string(name) + "'");
}

DesignKind parse_design(std::string_view name) {
  if (name == "fixed") return DesignKind::Fixed;
  if (name == "adaptive") return DesignKind::Adaptive;
  throw std::invalid_argument("unknown design '" + std::string(name) + "'");
}

CategoryProbs control_probs(const ControlShape& shape, int categories) {
  if (categories < 2) throw std::invalid_argument("control_probs: need J >= 2");
  const auto J = static_cast<std::size_t>(categories);
  std::vector<double> probs(J);
  if (shape.kind == ShapeKind::Uniform) {
    probs.assign(J, 1.0 / categories);
    return CategoryProbs(std::move(probs));
  }
  if (!(shape.beta_a > 0.0) || !(shape.beta_b > 0.0)) {
    throw std::invalid_argument("control_probs: Beta parameters must be positive");
  }
  const double a = shape.beta_a;
  const double b = shape.beta_b;
  // Difference the CDF below the median and the survival function above it so
  // small tail masses do not cancel against 1.
  for (std::size_t j = 0; j < J; ++j) {
    const double lo = static_cast<double>(j) / categories;
    const double hi = static_cast<double>(j + 1) / categories;
    const double cdf_hi = boost::math::ibeta(a, b, hi);
    const double sf_lo = boost::math::ibetac(a, b, lo);
    if (cdf_hi <= 0.5) {
      probs[j] = cdf_hi - boost::math::ibeta(a, b, lo);
    } else if (sf_lo <= 0.5) {
      probs[j] = sf_lo - boost::math::ibetac(a, b, hi);
    } else {
      probs[j] = 1.0 - boost::math::ibeta(a, b, lo) - boost::math::ibetac(a, b, hi);
    }
  }
  return CategoryProbs(std::move(probs));
}

CategoryProbs treatment_probs(const CategoryProbs& control, double log_or) {
  if (!std::isfinite(log_or)) throw std::invalid_argument("treatment_probs: non-finite log OR");
  if (log_or == 0.0) return control;
  return probs_from_params(ModelParams{cutpoints_from_probs(control), log_or}, Arm::Intervention);
}

Scenario make_scenario(int id, int categories, const ControlShape& shape, double true_log_or,
                       int n_obs, DesignKind design) {
  Scenario s;
  s.id = id;
  s.categories = categories;
  s.shape = shape;
  s.true_log_or = true_log_or;
  s.n_obs = n_obs;
  s.design = design;
  s.control_probs = control_probs(shape, categories);
  s.treatment_probs = treatment_probs(s.control_probs, true_log_or);
  return s;
}

std::vector<Participant> simulate_participants(const Scenario& scn, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("simulate_participants: n must be >= 1");
  std::vector<Participant> out;
  out.reserve(static_cast<std::size_t>(n));
  const int J = scn.categories;
  for (int i = 0; i < n; ++i) {
    const Arm arm = rng.uniform() < 0.5 ? Arm::Intervention : Arm::Control;
    const CategoryProbs& probs = scn.probs(arm);
    double u = rng.uniform();
    int category = J - 1;
    for (int j = 0; j < J - 1; ++j) {
      u -= probs[j];
      if (u < 0.0) {
        category = j;
        break;
      }
    }
    out.push_back({arm, category});
  }
  return out;
}

TrialData tabulate(const std::vector<Participant>& participants, int categories, std::size_t n) {
  if (n > participants.size()) throw std::out_of_range("tabulate: prefix longer than participant list");
  TrialData data(categories);
  for (std::size_t i = 0; i < n; ++i) data.add(participants[i].category, participants[i].arm);
  return data;
}

TrialData simulate_trial(const Scenario& scn, int n, Rng& rng) {
  const auto participants = simulate_participants(scn, n, rng);
  return tabulate(participants, scn.categories, participants.size());
}

std::vector<Scenario> scenario_grid(const GridLevels& levels) {
  const ControlShape shapes[] = {levels.skewed, levels.u_shaped, ControlShape::uniform()};
  const DesignKind designs[] = {DesignKind::Fixed, DesignKind::Adaptive};
  std::vector<Scenario> grid;
  int id = 0;
  for (double odds_ratio : levels.odds_ratios) {
    for (int n : levels.sample_sizes) {
      for (int J : levels.categories) {
        for (const ControlShape& shape : shapes) {
          for (DesignKind design : designs) {
            grid.push_back(make_scenario(++id, J, shape, std::log(odds_ratio), n, design));
          }
        }
      }
    }
  }
  return grid;
}

}  // namespace ordprior
