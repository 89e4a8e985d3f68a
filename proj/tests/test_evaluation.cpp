#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "hivaug/error.hpp"
#include "hivaug/evaluation.hpp"
#include "hivaug/stats.hpp"
#include "hivaug/synthetic.hpp"

using namespace hivaug;

namespace {

SurveillanceDataset toy_dataset() {
  SurveillanceDataset d;
  const int counts[] = {1, 2, 3, 4, 5, 7};
  for (int s = 0; s < 6; ++s)
    for (int k = 0; k < counts[s]; ++k)
      d.records.push_back({s < 3 ? "A" : "B", "S" + std::to_string(s), 1995 + k, 200, 20 + k});
  d.npbs.push_back({"A", 2000, 0.1, 0.01});
  d.npbs.push_back({"B", 2001, 0.12, 0.01});
  return d;
}

Trajectory flat_trajectory(double prevalence) {
  Trajectory t;
  t.first_year = 1990;
  t.prevalence.assign(20, prevalence);
  t.incidence.assign(20, 0.0);
  t.hiv_mortality.assign(20, 0.0);
  t.infection_rate.assign(20, 0.0);
  return t;
}

}  // namespace

TEST_CASE("splits put ceil(n/2) of each site in training and keep NPBS") {
  const auto d = toy_dataset();
  const auto plans = make_splits(d, 3, 11);
  REQUIRE(plans.size() == 3);
  for (const auto& plan : plans) {
    std::map<std::string, std::pair<int, int>> per_site;  // (train, total)
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      auto& c = per_site[d.records[i].site_id];
      c.first += plan.in_training[i];
      c.second += 1;
    }
    for (const auto& [site, c] : per_site) CHECK(c.first == (c.second + 1) / 2);
    const auto train = plan.training(d);
    const auto test = plan.testing(d);
    CHECK(train.npbs == d.npbs);
    CHECK(test.npbs.empty());
    CHECK(train.records.size() + test.records.size() == d.records.size());
  }
  CHECK(make_splits(d, 3, 11) == plans);
  CHECK_FALSE(make_splits(d, 3, 12) == plans);
  CHECK_FALSE(plans[0].in_training == plans[1].in_training);
  CHECK_THROWS_AS(make_splits(d, 0, 11), ValidationError);
}

TEST_CASE("mid-rank predictive quantile") {
  CHECK(predictive_quantile({1, 2, 3, 4}, 2.5) == doctest::Approx(0.5));
  CHECK(predictive_quantile({1, 2, 3, 4}, 2.0) == doctest::Approx(0.375));
  CHECK(predictive_quantile({1, 1, 1, 1}, 1.0) == doctest::Approx(0.5));
  CHECK(predictive_quantile({1, 2, 3, 4}, 0.0) == 0.0);
  CHECK(predictive_quantile({1, 2, 3, 4}, 9.0) == 1.0);
  CHECK_THROWS_AS(predictive_quantile({}, 1.0), ValidationError);
}

TEST_CASE("scores on a hand-computed three-record set") {
  auto pred = [](const char* area, double obs, double point, double lo, double hi) {
    Prediction p;
    p.record.area_id = area;
    p.observed = obs;
    p.point = point;
    p.lower = lo;
    p.upper = hi;
    return p;
  };
  const std::vector<Prediction> ps = {pred("A", 10, 12, 8, 14), pred("A", 5, 4, 4.5, 6), pred("B", 20, 20, 15, 19)};
  const CVReport r = score(ps, "m");
  CHECK(r.overall.n == 3);
  CHECK(r.overall.mae == doctest::Approx(1.0));        // (2 + 1 + 0) / 3
  CHECK(r.overall.width == doctest::Approx(11.5 / 3));  // (6 + 1.5 + 4) / 3
  CHECK(r.overall.coverage == doctest::Approx(2.0 / 3));
  CHECK(r.by_area.at("A").mae == doctest::Approx(1.5));
  CHECK(r.by_area.at("B").coverage == 0.0);
  CHECK_THROWS_AS(score({}), ValidationError);

  CVReport aug = r;
  aug.by_area["A"].mae = 0.75;
  aug.by_area.erase("B");
  const auto change = relative_mae_change(r, aug);
  CHECK(change.size() == 1);
  CHECK(change.at("A") == doctest::Approx(-0.5));
}

TEST_CASE("predictive simulation matches a direct Monte Carlo of the observation model") {
  PredictiveDraw d;
  d.trajectory = flat_trajectory(0.15);
  d.alpha = 0.1;
  d.sigma2_nodes = {0.01, 0.09};
  d.node_probabilities = {0.25, 0.75};
  d.sites["S1"] = {40.0, 4.0};
  const PredictiveModel model({d});

  SurveillanceRecord known{"A", "S1", 2000, 300, 45};
  SurveillanceRecord fresh{"A", "S9", 2000, 300, 45};
  Philox rng(3);
  std::vector<double> sim_known = model.simulate(known, rng, 40000);
  std::vector<double> sim_fresh = model.simulate(fresh, rng, 40000);

  // Same hierarchy, drawn with an unrelated generator.
  std::mt19937_64 g(99);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u01;
  auto oracle = [&](bool known_site) {
    std::vector<double> out;
    const double base = normal_quantile(0.15) + 0.1;
    for (int i = 0; i < 40000; ++i) {
      const double s2 = u01(g) < 0.25 ? 0.01 : 0.09;
      double b;
      if (known_site) {
        const double prec = 40.0 + 1.0 / s2;
        b = 4.0 / prec + z(g) / std::sqrt(prec);
      } else {
        b = std::sqrt(s2) * z(g);
      }
      const double p = normal_cdf(base + b);
      const double phi = std::exp(-0.5 * (base + b) * (base + b)) / std::sqrt(2 * M_PI);
      const double nu = p * (1 - p) / (301.0 * phi * phi);
      out.push_back(100.0 * normal_cdf(base + b + std::sqrt(nu) * z(g)));
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto ref_known = oracle(true);
  const auto ref_fresh = oracle(false);
  std::sort(sim_known.begin(), sim_known.end());
  std::sort(sim_fresh.begin(), sim_fresh.end());
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    CHECK(std::abs(quantile_sorted(sim_known, q) - quantile_sorted(ref_known, q)) < 0.25);
    CHECK(std::abs(quantile_sorted(sim_fresh, q) - quantile_sorted(ref_fresh, q)) < 0.4);
  }
  // A site seen in training has a narrower predictive than a new one.
  CHECK(quantile_sorted(sim_known, 0.95) - quantile_sorted(sim_known, 0.05) <
        quantile_sorted(sim_fresh, 0.95) - quantile_sorted(sim_fresh, 0.05));

  const Prediction p = model.predict(known, rng, PointPredictor::Median, 4000);
  CHECK(p.observed == doctest::Approx(15.0));
  CHECK(p.lower < p.point);
  CHECK(p.point < p.upper);

  SurveillanceRecord outside{"A", "S1", 2030, 300, 45};
  CHECK_THROWS_AS(model.simulate(outside, rng), ValidationError);
  CHECK_THROWS_AS(PredictiveModel({}), ValidationError);
}

TEST_CASE("quantiles of data drawn from the predictive are uniform") {
  PredictiveDraw d;
  d.trajectory = flat_trajectory(0.2);
  d.alpha = 0.0;
  d.sigma2_nodes = {0.04};
  d.node_probabilities = {1.0};
  const PredictiveModel model({d});
  Philox rng(5);
  std::mt19937_64 g(17);
  std::normal_distribution<double> z;
  std::vector<SurveillanceRecord> obs;
  for (int i = 0; i < 400; ++i) {
    const double p = normal_cdf(normal_quantile(0.2) + 0.2 * z(g));
    std::binomial_distribution<int> bin(400, p);
    obs.push_back({"A", "new" + std::to_string(i), 2000, 400, bin(g)});
  }
  const auto q = ppc_quantiles(model, obs, rng, 200);
  REQUIRE(q.size() == obs.size());
  CHECK(ks_uniform(q).p_value > 0.01);
}

TEST_CASE("cross-validation runs end to end on a small benchmark") {
  SyntheticSpec spec;
  spec.n_areas = 2;
  spec.sites_per_area = 3;
  const auto synth = generate_synthetic(spec, DemographicSchedule::flat_default(), 21);
  CrossValidationOptions opt;
  opt.epp.budget.n_initial = 2000;
  opt.epp.budget.n_per_stage = 200;
  opt.epp.budget.n_stages = 6;
  opt.epp.budget.n_resample = 300;
  opt.glmm.n_iter = 1500;
  opt.glmm.warmup = 500;
  opt.k_selection.grid = {25, 400};
  opt.k_selection.mcmc.n_iter = 1200;
  opt.k_selection.mcmc.warmup = 400;
  opt.force = true;
  const auto r = run_crossval(synth.data, DemographicSchedule::flat_default(), opt, 4);
  REQUIRE(r.replicates.size() == 1);
  const auto& rep = r.replicates.front();
  const auto test = rep.plan.testing(synth.data);
  CHECK(rep.independent_predictions.size() == test.records.size());
  CHECK(rep.augmented_predictions.size() == test.records.size());
  CHECK(rep.kl.size() == 2);
  CHECK(r.independent.model == "Independent Model");
  CHECK(r.augmented.model == "Augmented Data Model");
  CHECK(r.independent.overall.coverage > 0.5);
  CHECK(r.augmented.overall.coverage > 0.5);
  CHECK(r.independent.overall.mae > 0);
  CHECK(std::isfinite(r.augmented.overall.width));
}
