#include <doctest.h>

#include <cmath>
#include <numbers>

#include <boost/math/distributions/chi_squared.hpp>

#include "ordprior/dgm.hpp"

using namespace ordprior;

TEST_SUITE("dgm") {
  TEST_CASE("control shapes") {
    const CategoryProbs u = control_probs(ControlShape::uniform(), 4);
    for (int j = 0; j < 4; ++j) CHECK(u[j] == 0.25);

    const auto arcsine_cdf = [](double x) { return 2.0 / std::numbers::pi * std::asin(std::sqrt(x)); };
    const CategoryProbs a = control_probs(ControlShape::u_shaped(), 4);
    CHECK(a[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(a[2] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(a[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    const CategoryProbs a10 = control_probs(ControlShape::u_shaped(), 10);
    for (int j = 0; j < 10; ++j) {
      CHECK(a10[j] == doctest::Approx(arcsine_cdf((j + 1) / 10.0) - arcsine_cdf(j / 10.0)).epsilon(1e-12));
    }

    const CategoryProbs s = control_probs(ControlShape::skewed(), 4);
    CHECK(s[0] == doctest::Approx(0.68359375).epsilon(1e-14));
    CHECK(s[1] == doctest::Approx(0.25390625).epsilon(1e-14));
    CHECK(s[2] == doctest::Approx(0.05859375).epsilon(1e-14));
    CHECK(s[3] == doctest::Approx(0.00390625).epsilon(1e-14));
  }

  TEST_CASE("shape sanity") {
    for (int J : {4, 10, 30}) {
      const CategoryProbs s = control_probs(ControlShape::skewed(), J);
      for (int j = 1; j < J; ++j) CHECK(s[j] < s[j - 1]);
      const CategoryProbs u = control_probs(ControlShape::u_shaped(), J);
      for (int j = 0; j < J; ++j) CHECK(std::abs(u[j] - u[J - 1 - j]) <= 1e-12);
    }
  }

  TEST_CASE("control probabilities are valid for stress parameters") {
    for (double a : {0.002, 0.01, 0.5, 1.0, 7.0, 40.0}) {
      for (double b : {0.002, 0.05, 1.0, 4.0, 60.0}) {
        for (int J : {2, 4, 10, 30}) {
          CHECK_NOTHROW(control_probs({ShapeKind::Skewed, a, b}, J));
        }
      }
    }
  }

  TEST_CASE("treatment probabilities") {
    const CategoryProbs c({0.25, 0.25, 0.25, 0.25});
    CHECK(treatment_probs(c, 0.0).values() == c.values());
    const CategoryProbs t = treatment_probs(c, std::log(1.5));
    CHECK(t[0] == doctest::Approx(2.0 / 11.0).epsilon(1e-12));
    CHECK(t[1] == doctest::Approx(0.2181818).epsilon(1e-7));
    CHECK(t[2] == doctest::Approx(4.0 / 15.0).epsilon(1e-12));
    CHECK(t[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const CategoryProbs s = control_probs(ControlShape::skewed(), 10);
    for (double lor : {-1.3, 0.2, std::log(1.1), 2.0}) {
      const CategoryProbs back = treatment_probs(treatment_probs(s, lor), -lor);
      for (int j = 0; j < 10; ++j) CHECK(std::abs(back[j] - s[j]) <= 1e-12);
      // cumulative odds scale by exp(lor) at every cut
      const CategoryProbs shifted = treatment_probs(s, lor);
      double up_c = 0.0;
      double up_t = 0.0;
      for (int j = 9; j >= 1; --j) {
        up_c += s[j];
        up_t += shifted[j];
        const double ratio = (up_t / (1.0 - up_t)) / (up_c / (1.0 - up_c));
        CHECK(ratio == doctest::Approx(std::exp(lor)).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("single participant") {
    const Scenario scn = make_scenario(1, 4, ControlShape::uniform(), 0.0, 100, DesignKind::Fixed);
    Rng rng(61);
    const TrialData d = simulate_trial(scn, 1, rng);
    int nonzero = 0;
    for (int j = 0; j < 4; ++j) {
      for (Arm a : {Arm::Control, Arm::Intervention}) {
        if (d.count(j, a) != 0) {
          ++nonzero;
          CHECK(d.count(j, a) == 1);
        }
      }
    }
    CHECK(nonzero == 1);
    CHECK(d.n_total() == 1);
  }

  TEST_CASE("simulation is reproducible and prefix consistent") {
    const Scenario scn = make_scenario(1, 10, ControlShape::skewed(), 0.4, 500, DesignKind::Adaptive);
    Rng r1(62);
    Rng r2(62);
    CHECK(simulate_trial(scn, 500, r1) == simulate_trial(scn, 500, r2));

    Rng r3(63);
    const std::vector<Participant> people = simulate_participants(scn, 500, r3);
    const TrialData half = tabulate(people, 10, 250);
    CHECK(half.n_total() == 250);
    TrialData manual(10);
    for (std::size_t i = 0; i < 250; ++i) manual.add(people[i].category, people[i].arm);
    CHECK(half == manual);
  }

  TEST_CASE("large-sample cell frequencies") {
    const Scenario scn = make_scenario(1, 4, ControlShape::uniform(), 0.0, 100, DesignKind::Fixed);
    Rng rng(64);
    const int n = 1000000;
    const TrialData d = simulate_trial(scn, n, rng);
    for (int j = 0; j < 4; ++j) {
      for (Arm a : {Arm::Control, Arm::Intervention}) {
        CHECK(std::abs(static_cast<double>(d.count(j, a)) / n - 0.125) < 0.003);
      }
    }
  }

  TEST_CASE("goodness of fit across seeds") {
    const Scenario scn = make_scenario(1, 10, ControlShape::skewed(), std::log(1.5), 100, DesignKind::Fixed);
    const int n = 1000000;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(derive_seed({65, seed}));
      const TrialData d = simulate_trial(scn, n, rng);
      double chi2 = 0.0;
      for (Arm a : {Arm::Control, Arm::Intervention}) {
        for (int j = 0; j < 10; ++j) {
          const double expected = 0.5 * n * scn.probs(a)[j];
          const double diff = static_cast<double>(d.count(j, a)) - expected;
          chi2 += diff * diff / expected;
        }
      }
      const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(19.0), chi2));
      INFO("seed " << seed);
      CHECK(p > 0.001);
    }
  }

  TEST_CASE("scenario grid") {
    const std::vector<Scenario> grid = scenario_grid();
    CHECK(grid.size() == 108);
    int adaptive_small = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Scenario& s = grid[i];
      CHECK(s.id == static_cast<int>(i) + 1);
      if (s.design == DesignKind::Adaptive && s.n_obs == 100) ++adaptive_small;
      if (s.true_log_or == 0.0) CHECK(s.treatment_probs.values() == s.control_probs.values());
      CHECK(s.control_probs.categories() == s.categories);
    }
    // 3 effects x 3 category counts x 3 shapes
    CHECK(adaptive_small == 27);

    // lexicographic in (effect, n, J, shape, design)
    CHECK(grid[0].true_log_or == 0.0);
    CHECK(grid[0].n_obs == 100);
    CHECK(grid[0].categories == 4);
    CHECK(grid[0].shape.kind == ShapeKind::Skewed);
    CHECK(grid[0].design == DesignKind::Fixed);
    CHECK(grid[1].design == DesignKind::Adaptive);
    CHECK(grid[2].shape.kind == ShapeKind::UShaped);
    CHECK(grid[4].shape.kind == ShapeKind::Uniform);
    CHECK(grid[6].categories == 10);
    CHECK(grid[18].n_obs == 500);
    CHECK(grid[36].true_log_or == doctest::Approx(std::log(1.1)));
    CHECK(grid[107].true_log_or == doctest::Approx(std::log(1.5)));
  }

  TEST_CASE("names") {
    CHECK(parse_shape("u_shaped") == ShapeKind::UShaped);
    CHECK(to_string(ShapeKind::Skewed) == "skewed");
    CHECK(parse_design("adaptive") == DesignKind::Adaptive);
    CHECK(to_string(DesignKind::Fixed) == "fixed");
    CHECK_THROWS(parse_shape("bimodal"));
    CHECK_THROWS(parse_design("sequential"));
  }
}
