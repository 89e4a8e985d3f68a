#include <doctest.h>

#include <cmath>

#include "hivaug/dynamics.hpp"
#include "hivaug/error.hpp"
#include "hivaug/rng.hpp"
#include "hivaug/stats.hpp"
#include "oracles.hpp"

using namespace hivaug;

using oracle::euler_prevalence;

TEST_CASE("rtrend_step matches a hand calculation") {
  RTrendParams p;
  p.t1 = 1985;
  p.beta0 = 0.2;
  p.beta1 = 0.3;
  p.beta2 = -1.0;
  p.beta3 = -0.5;
  // gamma = 0.02 * 5 / 0.1 = 1
  CHECK(*rtrend_step(0.5, 0.1, 0.12, 1990, p) == doctest::Approx(0.25078803453302784).epsilon(1e-14));
  // before t1: no stabilisation term
  CHECK(*rtrend_step(0.4, 0.05, 0.9, 1980, p) == doctest::Approx(0.3583336541186113).epsilon(1e-14));
  CHECK(stabilization_term(0.1, 0.5, 1985, 1985) == 0.0);
  CHECK(stabilization_term(0.1, 0.5, 1984, 1985) == 0.0);
}

TEST_CASE("rtrend_step flags overflow") {
  RTrendParams p;
  p.beta1 = 1e6;
  p.beta0 = 1e6;
  CHECK_FALSE(rtrend_step(1.0, 0.1, 0.1, 1980, p).has_value());
}

TEST_CASE("closed population is conserved over 40 years") {
  RTrendParams p{1970, 1990, 0.8, 0.3, 0.2, -1.0, -0.3, 0};
  const auto d = DemographicSchedule::closed(1e6);
  const auto res = simulate(p, d, 1970, 2010, {0.1, true});
  REQUIRE(res.usable());
  double worst = 0;
  for (std::size_t i = 0; i < res.state.time_grid.size(); ++i)
    worst = std::max(worst, std::abs(res.state.susceptible[i] + res.state.infected[i] - 1e6) / 1e6);
  CHECK(worst < 1e-6);
}

TEST_CASE("step 0.1 agrees with a fine Euler oracle") {
  RTrendParams p{1978, 1992, 1.2, 0.45, 0.15, -1.5, -0.5, 0};
  const auto d = DemographicSchedule::flat_default();
  const auto res = simulate(p, d, 1985, 2010);
  REQUIRE(res.usable());
  const auto oracle = euler_prevalence(p, d, 1985, 2010, 20000);
  for (std::size_t i = 0; i < oracle.size(); ++i)
    CHECK(std::abs(res.trajectory.prevalence[i] - oracle[i]) / oracle[i] < 1e-3);
}

TEST_CASE("years before t0 report zero and seed prevalence appears at t0") {
  RTrendParams p{1980, 1995, 0.35, 0.2, 0.3, -1, -0.5, 0};
  const auto res = simulate(p, DemographicSchedule::flat_default(), 1975, 1985);
  CHECK(res.trajectory.prevalence_at(1979) == 0.0);
  CHECK(res.trajectory.prevalence_at(1980) == doctest::Approx(kSeedPrevalence).epsilon(1e-12));
  CHECK(res.trajectory.prevalence_at(1985) > kSeedPrevalence);
}

TEST_CASE("no epidemic when r0 is zero") {
  RTrendParams p{1980, 1995, 0.0, 0.2, 0.3, -1, -0.5, 0};
  const auto res = simulate(p, DemographicSchedule::closed(), 1980, 2000);
  for (double rho : res.trajectory.prevalence) CHECK(rho == doctest::Approx(kSeedPrevalence).epsilon(1e-9));
}

TEST_CASE("schedule gaps are validation errors") {
  RTrendParams p{1940, 1955, 0.35, 0.2, 0.3, -1, -0.5, 0};
  CHECK_THROWS_AS(simulate(p, DemographicSchedule::flat_default(), 1940, 1960), ValidationError);
  RTrendParams q;
  CHECK_THROWS_AS(simulate(q, DemographicSchedule::flat_default(), 1990, 1980), ValidationError);
  CHECK_THROWS_AS(simulate(q, DemographicSchedule::flat_default(), 1980, 1990, {0.3, false}), ValidationError);
}

TEST_CASE("philox substreams are deterministic and distinct") {
  Philox a = substream(42, "area:A01/stage:imis/rep:0");
  Philox b = substream(42, "area:A01/stage:imis/rep:0");
  Philox c = substream(42, "area:A02/stage:imis/rep:0");
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
  }
  CHECK(stream_name("A01", "imis", 2) == "area:A01/stage:imis/rep:2");
}

TEST_CASE("normal quantile table values") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.1) == doctest::Approx(-1.2815515655446004).epsilon(1e-12));
  CHECK(normal_quantile(1e-6) == doctest::Approx(-4.753424308822899).epsilon(1e-10));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("gauss-hermite rule integrates polynomial moments of N(0,1)") {
  const auto gh = gauss_hermite_normal(16);
  double m0 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    m0 += gh.weights[i];
    m2 += gh.weights[i] * gh.nodes[i] * gh.nodes[i];
    m4 += gh.weights[i] * std::pow(gh.nodes[i], 4);
  }
  CHECK(m0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
}
