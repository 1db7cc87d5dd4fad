#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "ordprior/priors.hpp"
#include "ordprior/rng.hpp"

using namespace ordprior;

namespace {

Eigen::VectorXd random_raw(Rng& rng, int J) {
  Eigen::VectorXd raw(J);
  for (int i = 0; i < J; ++i) raw[i] = rng.uniform(-2.0, 2.0);
  return raw;
}

TrialData random_counts(Rng& rng, int J, int max_count) {
  TrialData d(J);
  for (int j = 0; j < J; ++j) {
    d.add(j, Arm::Control, static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_count) + 1)));
    d.add(j, Arm::Intervention, static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_count) + 1)));
  }
  return d;
}

double r2_oracle(double beta, double v, double a1, double a2) {
  const double L = std::numbers::pi * std::numbers::pi / 3.0;
  const double q = beta * beta * v + L;
  const double r = beta * beta * v / q;
  const double dr = std::abs(2.0 * beta * v * L / (q * q));
  const double log_beta_pdf = (a1 - 1.0) * std::log(r) + (a2 - 1.0) * std::log1p(-r) -
                              (std::lgamma(a1) + std::lgamma(a2) - std::lgamma(a1 + a2));
  return std::log(0.5) + log_beta_pdf + std::log(dr);
}

}  // namespace

TEST_SUITE("priors") {
  TEST_CASE("registered names") {
    CHECK(beta_prior_names().size() == 6);
    CHECK(cutpoint_prior_names().size() == 5);
    for (const auto& n : beta_prior_names()) CHECK(beta_prior_by_name(n).name == n);
    for (const auto& n : cutpoint_prior_names()) CHECK(cutpoint_prior_by_name(n).name == n);
    CHECK_THROWS_AS(beta_prior_by_name("normal_1"), std::invalid_argument);
    CHECK_THROWS_AS(cutpoint_prior_by_name("dir_2"), std::invalid_argument);
    CHECK(beta_prior_by_name("laplace_2.5").kind == BetaPriorKind::LaplaceNarrow);
    CHECK(cutpoint_prior_by_name("dir_recip").concentration_for(10) == doctest::Approx(0.1));
    CHECK(cutpoint_prior_by_name("normal_cuts_100").kind == CutpointPriorKind::IndependentNormal);
    CHECK(parse_anchor("covariate_mean") == CutpointAnchor::CovariateMean);
    CHECK(to_string(CutpointAnchor::Reference) == "reference");
    CHECK_THROWS(parse_anchor("middle"));
  }

  TEST_CASE("beta prior values at zero") {
    const ScalarDensity n = log_prior_beta(beta_prior_by_name("normal_100"), 0.0);
    CHECK(n.value == doctest::Approx(-5.5241087).epsilon(1e-7));
    CHECK(n.derivative == 0.0);
    const ScalarDensity c = log_prior_beta(beta_prior_by_name("cauchy"), 0.0);
    CHECK(c.value == doctest::Approx(-1.1447299).epsilon(1e-7));
    CHECK(c.derivative == 0.0);
    const ScalarDensity l = log_prior_beta(beta_prior_by_name("laplace_2.5"), 0.0);
    CHECK(l.value == doctest::Approx(-1.2628643).epsilon(1e-7));
    CHECK(l.derivative == 0.0);
  }

  TEST_CASE("beta priors are symmetric") {
    Rng rng(21);
    for (const auto& name : beta_prior_names()) {
      const BetaPriorSpec s = beta_prior_by_name(name);
      for (int rep = 0; rep < 200; ++rep) {
        const double b = rng.uniform(-40, 40);
        const ScalarDensity pos = log_prior_beta(s, b);
        const ScalarDensity neg = log_prior_beta(s, -b);
        CHECK(pos.value == neg.value);
        CHECK(pos.derivative == -neg.derivative);
      }
    }
  }

  TEST_CASE("beta priors integrate to one") {
    for (const auto& name : beta_prior_names()) {
      const BetaPriorSpec s = beta_prior_by_name(name);
      const double total = oracle::integrate_symmetric([&](double b) { return log_prior_beta(s, b).value; });
      INFO(name);
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    BetaPriorSpec other = beta_prior_by_name("r2_0.5");
    other.r2_shape1 = 2.0;
    other.r2_shape2 = 3.0;
    const double total = oracle::integrate_symmetric([&](double b) { return log_prior_beta_r2(other, b, 0.21).value; });
    CHECK(std::abs(total - 1.0) < 1e-6);
  }

  TEST_CASE("beta prior derivatives match central differences") {
    Rng rng(22);
    for (const auto& name : beta_prior_names()) {
      const BetaPriorSpec s = beta_prior_by_name(name);
      for (int rep = 0; rep < 100; ++rep) {
        const double b = rng.uniform(-10, 10);
        if (std::abs(b) < 1e-3) continue;
        const auto f = [&](const Eigen::VectorXd& x) { return log_prior_beta(s, x[0], 0.24).value; };
        const Eigen::VectorXd fd = oracle::central_gradient(f, Eigen::VectorXd::Constant(1, b));
        Eigen::VectorXd an(1);
        an[0] = log_prior_beta(s, b, 0.24).derivative;
        CHECK(oracle::max_relative_error(an, fd) < 1e-6);
      }
    }
  }

  TEST_CASE("R-squared prior matches the induced density") {
    const double v = 0.25;
    const double r = v / (v + kLogisticLatentVariance);
    CHECK(r == doctest::Approx(0.0706241).epsilon(1e-7));
    const double arcsine = 1.0 / (std::numbers::pi * std::sqrt(r * (1.0 - r)));
    const double L = kLogisticLatentVariance;
    const double dr = 2.0 * v * L / ((v + L) * (v + L));
    const BetaPriorSpec s = beta_prior_by_name("r2_0.5");
    CHECK(log_prior_beta_r2(s, 1.0, v).value == doctest::Approx(std::log(0.5 * arcsine * dr)).epsilon(1e-12));

    Rng rng(23);
    BetaPriorSpec custom = s;
    custom.r2_shape1 = 1.5;
    custom.r2_shape2 = 4.0;
    for (int rep = 0; rep < 100; ++rep) {
      const double b = rng.uniform(-20, 20);
      const double xv = rng.uniform(0.05, 0.25);
      CHECK(log_prior_beta_r2(s, b, xv).value == doctest::Approx(r2_oracle(b, xv, 0.5, 0.5)).epsilon(1e-10));
      CHECK(log_prior_beta_r2(custom, b, xv).value == doctest::Approx(r2_oracle(b, xv, 1.5, 4.0)).epsilon(1e-10));
    }
    CHECK_THROWS(log_prior_beta_r2(s, NAN, v));
    CHECK_THROWS(log_prior_beta_r2(s, INFINITY, v));
  }

  TEST_CASE("Dirichlet cut-point prior equals the simplex density plus Jacobian") {
    Rng rng(24);
    for (const char* name : {"dir_1", "dir_0.5", "dir_0.001", "dir_recip"}) {
      const CutpointPriorSpec s = cutpoint_prior_by_name(name);
      for (int J : {2, 4, 10, 30}) {
        for (int rep = 0; rep < 20; ++rep) {
          const Eigen::VectorXd raw = random_raw(rng, J);
          const Eigen::VectorXd alpha = from_unconstrained(raw, s).params.alpha.values();
          const double expect = oracle::dirichlet_log_density(oracle::probs(alpha, 0.0), s.concentration_for(J)) +
                                oracle::simplex_log_jacobian(alpha);
          CHECK(log_prior_cutpoints(s, Cutpoints(alpha)).value == doctest::Approx(expect).epsilon(1e-9));
        }
      }
    }
  }

  TEST_CASE("Dirichlet(1) density term is constant") {
    const CutpointPriorSpec s = cutpoint_prior_by_name("dir_1");
    Rng rng(25);
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd alpha = from_unconstrained(random_raw(rng, 4), s).params.alpha.values();
      const double density_term = log_prior_cutpoints(s, Cutpoints(alpha)).value - oracle::simplex_log_jacobian(alpha);
      CHECK(density_term == doctest::Approx(std::log(6.0)).epsilon(1e-10));
      CHECK(std::log(6.0) == doctest::Approx(1.7917595).epsilon(1e-7));
    }
  }

  TEST_CASE("Dirichlet differences do not depend on the normalizer") {
    Rng rng(26);
    for (double c : {0.3, 1.0, 2.5}) {
      CutpointPriorSpec s = cutpoint_prior_by_name("dir_1");
      s.concentration = c;
      const Eigen::VectorXd a1 = from_unconstrained(random_raw(rng, 5), s).params.alpha.values();
      const Eigen::VectorXd a2 = from_unconstrained(random_raw(rng, 5), s).params.alpha.values();
      double dlog = 0.0;
      for (double p : oracle::probs(a1, 0.0)) dlog += std::log(p);
      for (double p : oracle::probs(a2, 0.0)) dlog -= std::log(p);
      const double djac = oracle::simplex_log_jacobian(a1) - oracle::simplex_log_jacobian(a2);
      const double diff = log_prior_cutpoints(s, Cutpoints(a1)).value - log_prior_cutpoints(s, Cutpoints(a2)).value;
      CHECK(diff == doctest::Approx((c - 1.0) * dlog + djac).epsilon(1e-9));
    }
  }

  TEST_CASE("independent Normal cut-point prior") {
    const CutpointPriorSpec s = cutpoint_prior_by_name("normal_cuts_100");
    Eigen::VectorXd a(2);
    a << 1.0, -1.0;
    CHECK(log_prior_cutpoints(s, Cutpoints(a)).value == doctest::Approx(-11.0483174).epsilon(1e-7));
  }

  TEST_CASE("cut-point prior gradients match central differences") {
    Rng rng(27);
    for (const auto& name : cutpoint_prior_names()) {
      const CutpointPriorSpec s = cutpoint_prior_by_name(name);
      for (int J : {3, 10}) {
        for (int rep = 0; rep < 20; ++rep) {
          const Eigen::VectorXd alpha = from_unconstrained(random_raw(rng, J), s).params.alpha.values();
          const auto f = [&](const Eigen::VectorXd& x) { return log_prior_cutpoints(s, Cutpoints(x)).value; };
          const VectorDensity d = log_prior_cutpoints(s, Cutpoints(alpha));
          INFO(name << " J=" << J);
          CHECK(oracle::max_relative_error(d.gradient, oracle::central_gradient(f, alpha)) < 1e-6);
        }
      }
    }
  }

  TEST_CASE("transform fixed points") {
    const CutpointPriorSpec dir = cutpoint_prior_by_name("dir_1");
    const ConstrainedState c = from_unconstrained(Eigen::VectorXd::Zero(4), dir);
    const CategoryProbs p = probs_from_params(c.params, Arm::Control);
    for (int j = 0; j < 4; ++j) CHECK(p[j] == doctest::Approx(0.25).epsilon(1e-14));

    const CutpointPriorSpec ord = cutpoint_prior_by_name("normal_cuts_100");
    Eigen::VectorXd raw(4);
    raw << 0.5, 0.0, 0.0, 0.7;
    const ConstrainedState o = from_unconstrained(raw, ord);
    CHECK(o.params.alpha[0] == doctest::Approx(0.5));
    CHECK(o.params.alpha[1] == doctest::Approx(-0.5));
    CHECK(o.params.alpha[2] == doctest::Approx(-1.5));
    CHECK(o.params.beta == 0.7);
    CHECK(o.log_jacobian == 0.0);
  }

  TEST_CASE("transform round trips") {
    Rng rng(28);
    for (const char* name : {"dir_1", "normal_cuts_100"}) {
      const CutpointPriorSpec s = cutpoint_prior_by_name(name);
      for (int rep = 0; rep < 1000; ++rep) {
        const int J = 2 + static_cast<int>(rng.below(29));
        Eigen::VectorXd a(J - 1);
        a[0] = rng.uniform(-3, 3);
        for (int k = 1; k < J - 1; ++k) a[k] = a[k - 1] - rng.uniform(0.05, 1.0);
        const ModelParams p{Cutpoints(a), rng.uniform(-5, 5)};
        const ConstrainedState back = from_unconstrained(to_unconstrained(p, s), s);
        for (int k = 0; k < J - 1; ++k) REQUIRE(std::abs(back.params.alpha[k] - a[k]) < 1e-10);
        REQUIRE(back.params.beta == p.beta);

        const Eigen::VectorXd raw = random_raw(rng, J);
        const Eigen::VectorXd again = to_unconstrained(from_unconstrained(raw, s).params, s);
        REQUIRE((again - raw).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }

  TEST_CASE("transform log-Jacobian matches a numerical determinant") {
    Rng rng(29);
    for (const char* name : {"dir_1", "normal_cuts_100"}) {
      const CutpointPriorSpec s = cutpoint_prior_by_name(name);
      for (int J : {2, 4, 10}) {
        for (int rep = 0; rep < 20; ++rep) {
          const Eigen::VectorXd raw = random_raw(rng, J).head(J - 1);
          const auto alpha_of = [&](const Eigen::VectorXd& r) {
            Eigen::VectorXd full(J);
            full << r, 0.0;
            return Eigen::VectorXd(from_unconstrained(full, s).params.alpha.values());
          };
          const double numeric = std::log(std::abs(oracle::central_jacobian(alpha_of, raw).determinant()));
          Eigen::VectorXd full(J);
          full << raw, 0.0;
          CHECK(from_unconstrained(full, s).log_jacobian == doctest::Approx(numeric).epsilon(1e-6));
        }
      }
    }
  }

  TEST_CASE("modular Dirichlet route equals the direct stick-breaking density") {
    Rng rng(30);
    for (const char* name : {"dir_1", "dir_0.5", "dir_0.001", "dir_recip"}) {
      const CutpointPriorSpec s = cutpoint_prior_by_name(name);
      for (int J : {2, 4, 10, 30}) {
        for (int rep = 0; rep < 20; ++rep) {
          const Eigen::VectorXd raw = random_raw(rng, J);
          const ConstrainedState c = from_unconstrained(raw, s);
          const double modular = log_prior_cutpoints(s, c.params.alpha).value + c.log_jacobian;
          const double direct = oracle::stick_breaking_log_density(raw.head(J - 1), s.concentration_for(J));
          INFO(name << " J=" << J);
          CHECK(modular == doctest::Approx(direct).epsilon(1e-9));
        }
      }
    }
  }

  TEST_CASE("log posterior without data is the prior") {
    Rng rng(31);
    for (const auto& bn : beta_prior_names()) {
      for (const auto& cn : cutpoint_prior_names()) {
        const BetaPriorSpec b = beta_prior_by_name(bn);
        const CutpointPriorSpec c = cutpoint_prior_by_name(cn);
        const Eigen::VectorXd raw = random_raw(rng, 5);
        Eigen::VectorXd grad(5);
        const PosteriorValue v = log_posterior(TrialData(5), raw, b, c, grad);
        const ConstrainedState st = from_unconstrained(raw, c);
        const double expect = log_prior_beta(b, st.params.beta, 0.25).value +
                              log_prior_cutpoints(c, st.params.alpha).value + st.log_jacobian;
        CHECK(v.finite);
        CHECK(v.value == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("log posterior gradient matches central differences") {
    Rng rng(32);
    for (const auto& bn : beta_prior_names()) {
      for (const auto& cn : cutpoint_prior_names()) {
        const TrialData d = random_counts(rng, 4, 25);
        const LogPosterior post(d, beta_prior_by_name(bn), cutpoint_prior_by_name(cn));
        for (int rep = 0; rep < 10; ++rep) {
          const Eigen::VectorXd raw = random_raw(rng, 4);
          Eigen::VectorXd grad(4);
          REQUIRE(post(raw, grad).finite);
          const auto f = [&](const Eigen::VectorXd& x) {
            Eigen::VectorXd g(4);
            return post(x, g).value;
          };
          INFO(bn << "/" << cn);
          CHECK(oracle::max_relative_error(grad, oracle::central_gradient(f, raw)) < 1e-6);
        }
      }
    }
  }

  TEST_CASE("cut-point prior anchor") {
    TrialData d(3);
    d.add(0, Arm::Control, 30);
    d.add(2, Arm::Intervention, 10);
    const CutpointPriorSpec auto_cut = cutpoint_prior_by_name("dir_1");
    CHECK(resolve_anchor(auto_cut, beta_prior_by_name("r2_0.5")) == CutpointAnchor::CovariateMean);
    CHECK(resolve_anchor(auto_cut, beta_prior_by_name("normal_100")) == CutpointAnchor::Reference);
    CHECK(LogPosterior(d, beta_prior_by_name("r2_0.5"), auto_cut).anchor() == doctest::Approx(0.25));
    CHECK(LogPosterior(d, beta_prior_by_name("cauchy"), auto_cut).anchor() == 0.0);

    CutpointPriorSpec forced = auto_cut;
    forced.anchor = CutpointAnchor::CovariateMean;
    const LogPosterior post(d, beta_prior_by_name("normal_100"), forced);
    Eigen::VectorXd raw(3);
    raw << 0.3, -0.2, 1.2;
    const Eigen::VectorXd q = post.constrain(raw);
    const Eigen::VectorXd zeta = from_unconstrained(raw, forced).params.alpha.values();
    CHECK(q[0] == doctest::Approx(zeta[0] - 1.2 * 0.25));
    CHECK(q[1] == doctest::Approx(zeta[1] - 1.2 * 0.25));
    CHECK(q[2] == 1.2);
    CHECK(treatment_indicator_variance(d) == doctest::Approx(0.1875));
    CHECK(treatment_indicator_variance(TrialData(3)) == 0.25);
  }

  TEST_CASE("more data moves the posterior mode toward the maximum likelihood estimate") {
    TrialData d(4);
    const int counts[4][2] = {{9, 4}, {6, 5}, {3, 7}, {2, 6}};
    for (int j = 0; j < 4; ++j) {
      d.add(j, Arm::Control, counts[j][0]);
      d.add(j, Arm::Intervention, counts[j][1]);
    }
    const BetaPriorSpec b = beta_prior_by_name("normal_2.5");
    const CutpointPriorSpec c = cutpoint_prior_by_name("dir_1");
    const LogPosterior small(d, b, c);
    const LogPosterior large(d.scaled(10), b, c);

    const auto loglik = [&](const Eigen::VectorXd& raw) {
      const Eigen::VectorXd q = small.constrain(raw);
      if (!Cutpoints::is_valid(q.head(3))) return -std::numeric_limits<double>::infinity();
      return log_likelihood(d, {Cutpoints(q.head(3)), q[3]});
    };
    const auto mle_objective = [&](const Eigen::VectorXd& raw, Eigen::VectorXd& g) {
      g = oracle::central_gradient(loglik, raw, 1e-6);
      return loglik(raw);
    };
    const auto mode_of = [](const LogPosterior& post) {
      return [&post](const Eigen::VectorXd& raw, Eigen::VectorXd& g) { return post(raw, g).value; };
    };
    const Eigen::VectorXd start = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd mle = small.constrain(oracle::maximize(mle_objective, start));
    const Eigen::VectorXd mode_small = small.constrain(oracle::maximize(mode_of(small), start));
    const Eigen::VectorXd mode_large = large.constrain(oracle::maximize(mode_of(large), start));
    CHECK((mode_large - mle).norm() < (mode_small - mle).norm());
  }
}
