#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ordprior/ordmodel.hpp"
#include "ordprior/rng.hpp"

namespace ordprior {

enum class ShapeKind { Skewed, UShaped, Uniform };
enum class DesignKind { Fixed, Adaptive };

std::string to_string(ShapeKind kind);
std::string to_string(DesignKind kind);
ShapeKind parse_shape(std::string_view name);
DesignKind parse_design(std::string_view name);

/// Control-arm shape. Non-uniform shapes partition a Beta(beta_a, beta_b)
/// distribution into J equal-width intervals.
struct ControlShape {
  ShapeKind kind = ShapeKind::Uniform;
  double beta_a = 1.0;
  double beta_b = 1.0;

  static ControlShape skewed(double a = 1.0, double b = 4.0) { return {ShapeKind::Skewed, a, b}; }
  static ControlShape u_shaped(double a = 0.5, double b = 0.5) { return {ShapeKind::UShaped, a, b}; }
  static ControlShape uniform() { return {ShapeKind::Uniform, 1.0, 1.0}; }
};

struct Scenario {
  int id = 0;  // 1-based position in the grid
  int categories = 4;
  ControlShape shape;
  double true_log_or = 0.0;
  int n_obs = 100;
  DesignKind design = DesignKind::Fixed;
  CategoryProbs control_probs{std::vector<double>{0.5, 0.5}};
  CategoryProbs treatment_probs{std::vector<double>{0.5, 0.5}};

  const CategoryProbs& probs(Arm arm) const {
    return arm == Arm::Control ? control_probs : treatment_probs;
  }
};

/// Builds a scenario and derives both arms' probabilities.
Scenario make_scenario(int id, int categories, const ControlShape& shape, double true_log_or,
                       int n_obs, DesignKind design);

CategoryProbs control_probs(const ControlShape& shape, int categories);

/// Multiplies the cumulative odds of P(Y >= j) at every cut by exp(log_or).
CategoryProbs treatment_probs(const CategoryProbs& control, double log_or);

struct Participant {
  Arm arm;
  int category;  // 0-based
};

/// Participants in enrolment order: arm ~ Bernoulli(1/2) (simple
/// randomisation), outcome ~ Categorical(arm probabilities).
std::vector<Participant> simulate_participants(const Scenario& scn, int n, Rng& rng);

/// Count table of the first `n` participants.
TrialData tabulate(const std::vector<Participant>& participants, int categories, std::size_t n);

TrialData simulate_trial(const Scenario& scn, int n, Rng& rng);

/// Factor levels of the simulation grid.
struct GridLevels {
  std::vector<double> odds_ratios{1.0, 1.10, 1.50};
  std::vector<int> sample_sizes{100, 500};
  std::vector<int> categories{4, 10, 30};
  ControlShape skewed = ControlShape::skewed();
  ControlShape u_shaped = ControlShape::u_shaped();
};

/// Full cross ordered lexicographically by (effect, n, J, shape, design) with
/// shapes ordered skewed, U-shaped, uniform and designs fixed, adaptive.
std::vector<Scenario> scenario_grid(const GridLevels& levels = {});

}  // namespace ordprior
