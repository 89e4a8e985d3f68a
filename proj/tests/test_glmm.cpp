#include <doctest.h>

#include <cmath>
#include <random>

#include "hivaug/error.hpp"
#include "hivaug/glmm.hpp"
#include "hivaug/mcmc_diagnostics.hpp"
#include "hivaug/spline.hpp"
#include "hivaug/stats.hpp"
#include "hivaug/synthetic.hpp"

using namespace hivaug;

namespace {

// Textbook Cox-de Boor recursion, right-closed at the last knot.
double cox_de_boor(const std::vector<double>& t, int i, int k, double x) {
  if (k == 0) {
    const bool last = x == t.back() && t[i] < t[i + 1] && t[i + 1] == t.back();
    return ((t[i] <= x && x < t[i + 1]) || last) ? 1.0 : 0.0;
  }
  double a = 0, b = 0;
  if (t[i + k] != t[i]) a = (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x);
  if (t[i + k + 1] != t[i + 1]) b = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x);
  return a + b;
}

ChainSet normal_chains(int m, int n, std::uint64_t seed, std::vector<double> offsets = {}) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> z;
  ChainSet c(m, std::vector<double>(n));
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) c[j][i] = z(g) + (offsets.empty() ? 0.0 : offsets[j]);
  return c;
}

}  // namespace

TEST_CASE("basis matches a naive Cox-de Boor evaluation") {
  const auto b = build_basis(1994, 2007, knots_for_basis_size(7));
  REQUIRE(b.n_basis() == 7);
  std::vector<double> knots;
  for (int i = 0; i < 3; ++i) knots.push_back(1994);
  for (int i = 0; i < 5; ++i) knots.push_back(1994 + 13.0 * i / 4);
  for (int i = 0; i < 3; ++i) knots.push_back(2007);
  for (int y = 1994; y <= 2007; ++y) {
    double sum = 0;
    for (int d = 0; d < 7; ++d) {
      CHECK(b.basis_matrix(y - 1994, d) == doctest::Approx(cox_de_boor(knots, d, 3, y)).epsilon(1e-12));
      sum += b.basis_matrix(y - 1994, d);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto mid = b.evaluate(2000.5);
  for (int d = 0; d < 7; ++d) CHECK(mid[d] == doctest::Approx(cox_de_boor(knots, d, 3, 2000.5)).epsilon(1e-12));
}

TEST_CASE("basis preconditions") {
  CHECK_THROWS_AS(build_basis(2000, 2000, 5), ValidationError);
  CHECK_THROWS_AS(build_basis(2000, 2010, 1), ValidationError);
  CHECK(knots_for_basis_size(7) == 5);
}

TEST_CASE("second-difference penalty by hand") {
  const std::vector<double> beta{1, 2, 4, 8};
  // differences 1 and 2
  CHECK(penalty(beta, 2.0) == doctest::Approx(10.0));
  const Eigen::MatrixXd k = second_difference_matrix(4);
  Eigen::Vector4d v(1, 2, 4, 8);
  CHECK((k * v).squaredNorm() * 2.0 == doctest::Approx(10.0));
  // linear trends are free
  CHECK(penalty(std::vector<double>{1, 3, 5, 7, 9}, 100) == doctest::Approx(0.0));
}

TEST_CASE("split R-hat near one for well-mixed chains, large for separated chains") {
  CHECK(split_rhat(normal_chains(4, 1000, 1)) < 1.01);
  const double bad = split_rhat(normal_chains(4, 1000, 2, {-3, -3, 3, 3}));
  CHECK(bad > 1.5);
  // drift inside one chain is caught by splitting
  ChainSet drift = normal_chains(1, 1000, 3);
  for (int i = 0; i < 1000; ++i) drift[0][i] += i < 500 ? -2 : 2;
  CHECK(split_rhat(drift) > 1.3);
}

TEST_CASE("ESS of iid draws is close to the number of draws, AR(1) close to theory") {
  CHECK(effective_sample_size(normal_chains(4, 1000, 5)) > 3000);
  std::mt19937_64 g(7);
  std::normal_distribution<double> z;
  const double phi = 0.5;
  ChainSet ar(4, std::vector<double>(5000));
  for (auto& c : ar) {
    double x = 0;
    for (auto& v : c) v = x = phi * x + std::sqrt(1 - phi * phi) * z(g);
  }
  const double theory = 20000.0 * (1 - phi) / (1 + phi);
  CHECK(effective_sample_size(ar) == doctest::Approx(theory).epsilon(0.15));
}

TEST_CASE("rank normalisation is invariant to monotone transforms") {
  ChainSet c = normal_chains(4, 300, 11, {0, 0.1, 0, -0.1});
  ChainSet e = c;
  for (auto& ch : e)
    for (auto& v : ch) v = std::exp(3 * v);
  CHECK(split_rhat(rank_normalize(c)) == doctest::Approx(split_rhat(rank_normalize(e))).epsilon(1e-12));
  const auto z = rank_normalize({{1, 1, 2}, {3, 4, 5}});
  CHECK(z[0][0] == z[0][1]);
  CHECK(z[0][0] < z[0][2]);
}

TEST_CASE("binomial logit log likelihood") {
  const double eta = -1.3;
  const double p = 1 / (1 + std::exp(-eta));
  CHECK(binomial_logit_log_lik(7, 50, eta) == doctest::Approx(7 * std::log(p) + 43 * std::log1p(-p)).epsilon(1e-12));
  CHECK(std::isfinite(binomial_logit_log_lik(0, 50, 40.0)));
}

TEST_CASE("moments from draws") {
  Eigen::MatrixXd d(3, 2);
  d << 1, 2, 2, 4, 3, 9;
  const auto m = moments_from_draws("A", {2000, 2001}, d);
  CHECK(m.mu(0) == doctest::Approx(2));
  CHECK(m.mu(1) == doctest::Approx(5));
  CHECK(m.sigma(0, 0) == doctest::Approx(1));
  CHECK(m.sigma(0, 1) == doctest::Approx(3.5));
  CHECK(m.sigma(1, 1) == doctest::Approx(13));
}

TEST_CASE("spline mixed model on its own generative data") {
  GlmmSyntheticSpec spec;
  spec.n_areas = 3;
  const auto syn = generate_glmm_synthetic(spec, 3);
  McmcOptions opt;
  const auto fit = fit_glmm(syn.data, syn.basis, opt, Philox(8));
  CHECK(fit.converged());
  CHECK(fit.diagnostics.max_rhat < 1.05);
  CHECK(fit.draws.columns.front() == "beta0");
  CHECK(fit.draws.size() == static_cast<std::size_t>(opt.n_chains * (opt.n_iter - opt.warmup)));
  int covered = 0, cells = 0;
  for (std::size_t a = 0; a < syn.area_ids.size(); ++a) {
    const auto draws = area_prevalence_draws(fit, syn.area_ids[a]);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) {
      std::vector<double> col(draws.rows());
      for (Eigen::Index i = 0; i < draws.rows(); ++i) col[i] = draws(i, t);
      std::sort(col.begin(), col.end());
      const double truth = syn.area_prevalence(static_cast<Eigen::Index>(a), t);
      covered += quantile_sorted(col, 0.025) <= truth && truth <= quantile_sorted(col, 0.975);
      ++cells;
    }
  }
  CHECK(covered >= 0.8 * cells);
}

TEST_CASE("fits are reproducible across worker counts") {
  GlmmSyntheticSpec spec;
  spec.n_areas = 2;
  const auto syn = generate_glmm_synthetic(spec, 5);
  McmcOptions opt;
  opt.n_iter = 300;
  opt.warmup = 100;
  const auto a = fit_glmm(syn.data, syn.basis, opt, Philox(1));
  opt.workers = 4;
  const auto b = fit_glmm(syn.data, syn.basis, opt, Philox(1));
  CHECK((a.draws.values.array() == b.draws.values.array()).all());
}

TEST_CASE("unconverged fits are refused") {
  GlmmSyntheticSpec spec;
  spec.n_areas = 2;
  const auto syn = generate_glmm_synthetic(spec, 6);
  McmcOptions opt;
  opt.n_iter = 24;
  opt.warmup = 12;
  const auto fit = fit_glmm(syn.data, syn.basis, opt, Philox(2));
  REQUIRE_FALSE(fit.converged());
  CHECK_THROWS_AS(extract_area_posterior(fit, syn.area_ids[0]), NumericalError);
  CHECK_NOTHROW(extract_area_posterior(fit, syn.area_ids[0], PosteriorScale::Natural, 32, true));
}

TEST_CASE("a single area degenerates gracefully") {
  GlmmSyntheticSpec spec;
  spec.n_areas = 1;
  const auto syn = generate_glmm_synthetic(spec, 9);
  McmcOptions opt;
  opt.n_iter = 600;
  opt.warmup = 300;
  const auto fit = fit_glmm(syn.data, syn.basis, opt, Philox(3));
  CHECK(fit.draws.n_areas == 1);
  CHECK(std::isfinite(fit.diagnostics.max_rhat));
}

TEST_CASE("invalid MCMC options") {
  GlmmSyntheticSpec spec;
  const auto syn = generate_glmm_synthetic(spec, 1);
  McmcOptions opt;
  opt.warmup = opt.n_iter;
  CHECK_THROWS_AS(fit_glmm(syn.data, syn.basis, opt, Philox(1)), ValidationError);
}
