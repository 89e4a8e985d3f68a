#include <doctest.h>

#include <cmath>
#include <random>

#include "hivaug/augmentation.hpp"
#include "hivaug/error.hpp"
#include "hivaug/synthetic.hpp"

using namespace hivaug;

namespace {

Eigen::MatrixXd random_psd(std::mt19937_64& g, int d) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = z(g);
  return a * a.transpose() + 1e-3 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("KL of a distribution with itself is zero") {
  std::mt19937_64 g(1);
  for (int d : {1, 3, 14}) {
    const Eigen::MatrixXd s = random_psd(g, d);
    const Eigen::VectorXd m = Eigen::VectorXd::LinSpaced(d, -1, 1);
    CHECK(std::abs(gaussian_kl(m, s, m, s)) < 1e-10);
  }
}

TEST_CASE("one-dimensional closed form") {
  Eigen::VectorXd m(1);
  m << 0.3;
  Eigen::MatrixXd p(1, 1), q(1, 1);
  p << 1.0;
  q << 2.0;
  // 0.5 * (1/2 - 1 + ln 2)
  CHECK(std::abs(gaussian_kl(m, p, m, q) - 0.09657359027997264) < 1e-6);
}

TEST_CASE("diagonal covariances reduce to a sum of univariate terms") {
  Eigen::Vector3d mp(0.1, 0.2, 0.3), mq(0.0, 0.25, 0.5);
  Eigen::Vector3d vp(0.5, 1.0, 2.0), vq(1.0, 0.8, 3.0);
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    const double dm = mq(i) - mp(i);
    expect += 0.5 * (vp(i) / vq(i) + dm * dm / vq(i) - 1 + std::log(vq(i) / vp(i)));
  }
  CHECK(gaussian_kl(mp, vp.asDiagonal().toDenseMatrix(), mq, vq.asDiagonal().toDenseMatrix()) ==
        doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("KL is non-negative on random PSD pairs") {
  std::mt19937_64 g(99);
  std::uniform_int_distribution<int> dim(1, 8);
  std::normal_distribution<double> z;
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const int d = dim(g);
    Eigen::VectorXd a(d), b(d);
    for (int j = 0; j < d; ++j) {
      a(j) = z(g);
      b(j) = z(g);
    }
    worst = std::min(worst, gaussian_kl(a, random_psd(g, d), b, random_psd(g, d)));
  }
  CHECK(worst >= -1e-9);
}

TEST_CASE("KL input errors") {
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(2), m3 = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(gaussian_kl(m2, i2, m3, i2), ValidationError);
  CHECK_THROWS_AS(gaussian_kl(m2, i2, m2, -i2), NumericalError);
  Eigen::MatrixXd singular(2, 2);
  singular << 1, 1, 1, 1;
  const auto r = gaussian_kl_report(m2, singular, m2, i2);
  CHECK(std::isfinite(r.divergence));
  CHECK(r.condition_p > 1e6);
}

TEST_CASE("auxiliary pseudo-records round half to even") {
  AreaPosterior post;
  post.area_id = "A07";
  post.years = {2000, 2001, 2002};
  post.mu = Eigen::Vector3d(0.125, 0.375, 0.625);
  post.sigma = Eigen::Matrix3d::Identity();
  const auto aux = make_auxiliary(post, 4);
  REQUIRE(aux.records.size() == 3);
  CHECK(aux.records[0].positive == 0);
  CHECK(aux.records[1].positive == 2);
  CHECK(aux.records[2].positive == 2);
  for (const auto& r : aux.records) {
    CHECK(r.tested == 4);
    CHECK(r.is_auxiliary);
    CHECK(r.site_id == "aux:A07");
    CHECK(r.area_id == "A07");
  }
  CHECK(make_auxiliary(post, 1000).records[1].positive == 375);
  CHECK_THROWS_AS(make_auxiliary(post, 0), ValidationError);
}

TEST_CASE("select_k reports the baseline and picks the argmin over the grid") {
  GlmmSyntheticSpec spec;
  spec.n_areas = 3;
  const auto syn = generate_glmm_synthetic(spec, 21);
  const auto fit = fit_glmm(syn.data, syn.basis, McmcOptions{}, Philox(2));
  REQUIRE(fit.converged());
  const std::string area = syn.area_ids[1];
  const auto post = extract_area_posterior(fit, area);
  KSelectionOptions opt;
  opt.grid = {25, 400};
  const auto sel = select_k(syn.data.for_area(area), post, syn.basis, opt, 17);
  REQUIRE(sel.report.entries.size() == 3);
  CHECK(sel.report.entries[0].k == 0);
  CHECK_FALSE(sel.report.entries[0].selected);
  double best = INFINITY;
  for (const auto& e : sel.report.entries)
    if (e.k > 0 && e.converged) best = std::min(best, e.kl);
  CHECK(sel.report.selected_kl == best);
  CHECK(sel.auxiliary.k == sel.report.selected_k);
  CHECK(sel.auxiliary.records.size() == post.years.size());
  // Larger K pins the refit closer to the auxiliary curve: tighter bands.
  CHECK(sel.report.entry(400).trace_q < sel.report.entry(25).trace_q);
}
