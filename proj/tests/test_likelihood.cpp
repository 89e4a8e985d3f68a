#include <doctest.h>

#include <cmath>
#include <random>

#include "hivaug/error.hpp"
#include "hivaug/likelihood.hpp"
#include "hivaug/rng.hpp"
#include "hivaug/stats.hpp"
#include "oracles.hpp"

using namespace hivaug;
using oracle::dense_marginal;
using oracle::npdf;
using oracle::Obs;

namespace {

Trajectory flat_traj(int first, std::vector<double> prev) {
  Trajectory t;
  t.first_year = first;
  t.prevalence = prev;
  t.incidence.assign(prev.size(), 0);
  t.hiv_mortality.assign(prev.size(), 0);
  t.infection_rate.assign(prev.size(), 0);
  return t;
}

}  // namespace

TEST_CASE("probit transform uses the continuity-corrected proportion") {
  const auto o = probit_transform(12, 100);
  const double p = 12.5 / 101.0;
  CHECK(o.w == doctest::Approx(normal_quantile(p)).epsilon(1e-14));
  const double phi = npdf(o.w, 0, 1);
  CHECK(o.nu == doctest::Approx(p * (1 - p) / (101.0 * phi * phi)).epsilon(1e-12));
  CHECK(std::isfinite(probit_transform(0, 1).w));
  CHECK(std::isfinite(probit_transform(1, 1).w));
  CHECK_THROWS_AS(probit_transform(5, 4), ValidationError);
  CHECK_THROWS_AS(probit_transform(0, 0), ValidationError);
}

TEST_CASE("one site, two years: closed form matches dense quadrature on 50 random cases") {
  std::mt19937_64 gen(20240611);
  std::uniform_int_distribution<int> tested(20, 500);
  std::uniform_real_distribution<double> prev(0.01, 0.35), unit(0, 1);
  std::normal_distribution<double> alpha_d(0, 0.3);
  InverseGammaSpec prior;
  int cases = 0;
  for (int c = 0; c < 50; ++c) {
    const double r1 = prev(gen), r2 = prev(gen), alpha = alpha_d(gen);
    const int n1 = tested(gen), n2 = tested(gen);
    const int y1 = static_cast<int>(std::floor(n1 * std::clamp(r1 * (0.6 + 0.8 * unit(gen)), 0.0, 1.0)));
    const int y2 = static_cast<int>(std::floor(n2 * std::clamp(r2 * (0.6 + 0.8 * unit(gen)), 0.0, 1.0)));
    SurveillanceDataset d;
    d.records = {{"A", "S1", 2000, n1, y1}, {"A", "S1", 2001, n2, y2}};
    const AreaLikelihood lik(d, prior);
    const auto traj = flat_traj(2000, {r1, r2});
    const auto o1 = probit_transform(y1, n1), o2 = probit_transform(y2, n2);
    const double oracle = dense_marginal(
        {{{o1.w, o1.nu, normal_quantile(r1) + alpha}, {o2.w, o2.nu, normal_quantile(r2) + alpha}}}, prior);
    const double got = lik.log_likelihood(traj, alpha);
    CHECK(std::abs(got - oracle) < 1e-4);
    cases += std::abs(got - oracle) < 1e-4;
  }
  CHECK(cases == 50);
}

TEST_CASE("two sites share sigma^2") {
  InverseGammaSpec prior;
  SurveillanceDataset d;
  d.records = {{"A", "S1", 2000, 200, 30}, {"A", "S1", 2001, 150, 12}, {"A", "S2", 2000, 300, 70}};
  const auto traj = flat_traj(2000, {0.12, 0.1});
  const double alpha = 0.1;
  auto obs = [&](int y, int n, double rho) {
    const auto o = probit_transform(y, n);
    return Obs{o.w, o.nu, normal_quantile(rho) + alpha};
  };
  const double oracle = dense_marginal({{obs(30, 200, 0.12), obs(12, 150, 0.1)}, {obs(70, 300, 0.12)}}, prior);
  CHECK(AreaLikelihood(d, prior).log_likelihood(traj, alpha) == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("NPBS term is a probit-scale normal without bias") {
  SurveillanceDataset d;
  d.npbs = {{"A", 2001, 0.1, 0.01}};
  const auto traj = flat_traj(2000, {0.12, 0.11});
  const double target = normal_quantile(0.1);
  const double se = 0.01 / npdf(target, 0, 1);
  const double expect = std::log(npdf(target, normal_quantile(0.11), se * se));
  const AreaLikelihood lik(d);
  CHECK(lik.log_likelihood(traj, 0.7) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(lik.log_likelihood(traj, -0.7) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("auxiliary records carry alpha but no site effect under bias routing") {
  SurveillanceDataset d;
  d.records = {{"A", "aux:A", 2000, 500, 60, true}};
  const auto traj = flat_traj(2000, {0.11});
  const auto o = probit_transform(60, 500);
  const double alpha = -0.05;
  const double expect = std::log(npdf(o.w, normal_quantile(0.11) + alpha, o.nu));
  CHECK(AreaLikelihood(d).log_likelihood(traj, alpha) == doctest::Approx(expect).epsilon(1e-12));
  // As an extra site the record gets its own b, so the value changes.
  CHECK(AreaLikelihood(d, {}, AuxRouting::PseudoSite).log_likelihood(traj, alpha) != doctest::Approx(expect));
}

TEST_CASE("conditional likelihood integrates to the marginal over the prior nodes") {
  SurveillanceDataset d;
  d.records = {{"A", "S1", 2000, 200, 30}, {"A", "S2", 2000, 300, 40}};
  const auto traj = flat_traj(2000, {0.12});
  const AreaLikelihood lik(d);
  const auto post = lik.site_posterior(traj, 0.0);
  double total = 0;
  for (double p : post.node_probabilities) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(post.sites.size() == 2);
  CHECK(post.sites[0].precision_sum > 0);
}

TEST_CASE("trajectory must cover data years") {
  SurveillanceDataset d;
  d.records = {{"A", "S1", 1999, 200, 30}};
  CHECK_THROWS_AS(AreaLikelihood(d).log_likelihood(flat_traj(2000, {0.1}), 0.0), ValidationError);
}

TEST_CASE("prior validation") {
  InverseGammaSpec bad;
  bad.upper = bad.lower;
  SurveillanceDataset d;
  CHECK_THROWS_AS(AreaLikelihood(d, bad), ValidationError);
}
