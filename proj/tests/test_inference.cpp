#include <doctest.h>

#include <cmath>

#include "hivaug/error.hpp"
#include "hivaug/inference.hpp"
#include "hivaug/stats.hpp"
#include "hivaug/synthetic.hpp"
#include "oracles.hpp"

using namespace hivaug;

using oracle::conjugate_target;

TEST_CASE("IMIS recovers the conjugate normal posterior mean") {
  const Eigen::Vector2d y(1.5, -0.7);
  const double tau2 = 4.0, s2 = 0.5;
  const Eigen::Vector2d truth = y * tau2 / (tau2 + s2);
  ImisBudget b;
  b.n_initial = 500;
  b.n_per_stage = 200;
  b.n_stages = 20;
  b.n_resample = 1000;
  int within = 0;
  for (int seed = 1; seed <= 20; ++seed) {
    Philox rng(static_cast<std::uint64_t>(seed));
    const auto res = imis(conjugate_target(y, tau2, s2), b, rng);
    const auto m = res.sample.weighted_mean();
    const auto se = res.sample.mean_standard_error();
    within += (std::abs(m(0) - truth(0)) < 3 * se(0) && std::abs(m(1) - truth(1)) < 3 * se(1));
    double total = 0;
    for (double w : res.sample.weights) {
      CHECK(w >= 0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    CHECK(res.resample_index.size() == 1000);
  }
  CHECK(within >= 19);
}

TEST_CASE("expected unique fraction") {
  std::vector<double> uniform(1000, 1e-3);
  CHECK(expected_unique_fraction(uniform, 1000) == doctest::Approx(1 - std::pow(1 - 1e-3, 1000)).epsilon(1e-10));
  CHECK(expected_unique_fraction({1.0, 0.0, 0.0}, 10) == doctest::Approx(0.1));
}

TEST_CASE("all-zero weights are a numerical error") {
  WeightedSample s;
  s.draws = Eigen::MatrixXd::Zero(1, 3);
  s.log_weights = {-INFINITY, -INFINITY, -INFINITY};
  CHECK_THROWS_AS(normalize_weights(s), NumericalError);
}

TEST_CASE("zero adaptive stages is the prior stage alone") {
  ImisBudget b;
  b.n_initial = 300;
  b.n_stages = 0;
  b.n_resample = 100;
  Philox rng(3);
  const auto res = imis(conjugate_target({0.2, 0.1}, 1.0, 1.0), b, rng);
  CHECK(res.diagnostics.stages_run == 0);
  CHECK(res.sample.size() == 300);
  CHECK(res.diagnostics.ess_by_stage.size() == 1);
}

TEST_CASE("invalid budgets are rejected") {
  ImisBudget b;
  b.n_initial = 0;
  Philox rng(1);
  CHECK_THROWS_AS(imis(conjugate_target({0, 0}, 1, 1), b, rng), ValidationError);
}

TEST_CASE("IMIS is deterministic per seed and worker count") {
  ImisBudget b;
  b.n_initial = 200;
  b.n_per_stage = 100;
  b.n_stages = 5;
  b.n_resample = 200;
  Philox r1(9), r2(9);
  const auto a = imis(conjugate_target({1, 1}, 2, 1), b, r1, 1);
  const auto c = imis(conjugate_target({1, 1}, 2, 1), b, r2, 3);
  CHECK(a.sample.log_weights == c.sample.log_weights);
  CHECK(a.resample_index == c.resample_index);
}

TEST_CASE("parameter vector round trip") {
  RTrendParams p{1979, 1994, 0.9, 0.4, 0.2, -1.2, -0.4, 0.05};
  const RTrendParams q = from_vector(to_vector(p));
  CHECK(q.t0 == doctest::Approx(p.t0));
  CHECK(q.t1 == doctest::Approx(p.t1));
  CHECK(q.r0 == doctest::Approx(p.r0));
  CHECK(q.alpha == doctest::Approx(p.alpha));
}

TEST_CASE("priors") {
  const auto u = ParamPrior::uniform(2, 4);
  CHECK(u.log_density(3) == doctest::Approx(-std::log(2.0)));
  CHECK(u.log_density(5) == -INFINITY);
  const auto n = ParamPrior::normal(0, 1, 0, INFINITY);
  CHECK(n.log_density(0.5) == doctest::Approx(normal_log_pdf(0.5, 0, 1) + std::log(2.0)));
  CHECK_THROWS_AS(ParamPrior::uniform(3, 2).validate("x"), ValidationError);
}

TEST_CASE("summaries use type-7 quantiles") {
  std::vector<Trajectory> trajs;
  std::vector<RTrendParams> draws;
  for (double v : {0.1, 0.5, 0.2, 0.4, 0.3}) {
    Trajectory t;
    t.first_year = 2000;
    t.prevalence = {v};
    t.incidence = {v / 10};
    t.hiv_mortality = {v * 100};
    t.infection_rate = {0};
    trajs.push_back(t);
    draws.push_back({});
  }
  const auto s = summarize(trajs, draws);
  CHECK(s.prevalence.median[0] == doctest::Approx(0.3));
  // h = 0.025 * 4 = 0.1 between 0.1 and 0.2
  CHECK(s.prevalence.q025[0] == doctest::Approx(0.11));
  CHECK(s.prevalence.q975[0] == doctest::Approx(0.49));
}

TEST_CASE("fit_epp tracks a synthetic area") {
  SyntheticSpec spec;
  spec.n_areas = 1;
  const auto syn = generate_synthetic(spec, DemographicSchedule::flat_default(), 11);
  EppFitOptions opt;
  opt.budget.n_initial = 640;
  opt.budget.n_per_stage = 300;
  opt.budget.n_stages = 30;
  opt.budget.n_resample = 500;
  const auto fit = fit_epp(syn.data, DemographicSchedule::flat_default(), 1994, 2007, opt, Philox(4));
  REQUIRE(fit.summary.size() == 14);
  const auto& truth = syn.truth.trajectories[0];
  int covered = 0;
  for (int y = 1994; y <= 2007; ++y) {
    const std::size_t i = y - 1994;
    const double t = truth.prevalence_at(y);
    covered += fit.summary.prevalence.q025[i] <= t && t <= fit.summary.prevalence.q975[i];
  }
  CHECK(covered >= 11);
  CHECK(fit.resampled.size() == 500);
}
