#include "hivaug/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hivaug/error.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string site_key(const SurveillanceRecord& r) { return r.area_id + "/" + r.site_id; }

}  // namespace

SurveillanceDataset SplitPlan::training(const SurveillanceDataset& data) const {
  if (in_training.size() != data.records.size()) throw ValidationError("split plan does not match dataset");
  SurveillanceDataset out;
  out.npbs = data.npbs;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    if (in_training[i]) out.records.push_back(data.records[i]);
  return out;
}

SurveillanceDataset SplitPlan::testing(const SurveillanceDataset& data) const {
  if (in_training.size() != data.records.size()) throw ValidationError("split plan does not match dataset");
  SurveillanceDataset out;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    if (!in_training[i]) out.records.push_back(data.records[i]);
  return out;
}

std::vector<SplitPlan> make_splits(const SurveillanceDataset& data, int n_replicates, std::uint64_t seed) {
  if (n_replicates < 1) throw ValidationError("n_replicates must be >= 1");
  std::map<std::string, std::vector<std::size_t>> by_site;
  for (std::size_t i = 0; i < data.records.size(); ++i) by_site[site_key(data.records[i])].push_back(i);

  std::vector<SplitPlan> plans;
  for (int r = 0; r < n_replicates; ++r) {
    SplitPlan plan;
    plan.replicate = r;
    plan.seed = seed;
    plan.in_training.assign(data.records.size(), 0);
    Philox rng = substream(seed, stream_name("all", "split", r));
    for (auto& [key, idx] : by_site) {
      std::vector<std::size_t> order = idx;
      for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
        const auto j = static_cast<std::size_t>(rng.uniform() * i);
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
      const std::size_t n_train = (order.size() + 1) / 2;
      for (std::size_t k = 0; k < n_train; ++k) plan.in_training[order[k]] = 1;
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

PredictiveModel::PredictiveModel(std::vector<PredictiveDraw> draws) : draws_(std::move(draws)) {
  if (draws_.empty()) throw ValidationError("predictive model needs at least one draw");
  for (const auto& d : draws_) {
    if (d.sigma2_nodes.size() != d.node_probabilities.size() || d.sigma2_nodes.empty())
      throw ValidationError("predictive draw has inconsistent variance nodes");
    std::vector<double> cdf(d.node_probabilities.size());
    std::partial_sum(d.node_probabilities.begin(), d.node_probabilities.end(), cdf.begin());
    for (double& c : cdf) c /= cdf.back();
    node_cdf_.push_back(std::move(cdf));
  }
}

namespace {

std::vector<PredictiveDraw> draws_from_fit(const EppFit& fit, const AreaLikelihood& lik) {
  if (fit.resampled.size() != fit.trajectories.size()) throw ValidationError("EPP fit draws and trajectories differ");
  std::vector<PredictiveDraw> out(fit.resampled.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    auto& d = out[j];
    d.trajectory = fit.trajectories[j];
    d.alpha = fit.resampled[j].alpha;
    const auto post = lik.site_posterior(d.trajectory, d.alpha);
    d.sigma2_nodes = post.sigma2_nodes;
    d.node_probabilities = post.node_probabilities;
    for (const auto& s : post.sites) d.sites[s.site_id] = {s.precision_sum, s.score_sum};
  }
  return out;
}

}  // namespace

PredictiveModel::PredictiveModel(const EppFit& fit, const AreaLikelihood& training_likelihood)
    : PredictiveModel(draws_from_fit(fit, training_likelihood)) {}

std::vector<double> PredictiveModel::simulate(const SurveillanceRecord& record, Philox& rng, int replicates) const {
  if (replicates < 1) throw ValidationError("replicates must be >= 1");
  if (record.tested < 1) throw ValidationError("test record needs tested >= 1");
  std::vector<double> out;
  out.reserve(draws_.size() * static_cast<std::size_t>(replicates));
  for (std::size_t j = 0; j < draws_.size(); ++j) {
    const auto& d = draws_[j];
    if (!d.trajectory.contains(record.year))
      throw ValidationError("test year " + std::to_string(record.year) + " outside fitted range");
    const double base = probit_clamped(d.trajectory.prevalence_at(record.year)) + d.alpha;
    const auto site = d.sites.find(record.site_id);
    for (int rep = 0; rep < replicates; ++rep) {
      const double u = rng.uniform();
      const auto k = static_cast<std::size_t>(
          std::lower_bound(node_cdf_[j].begin(), node_cdf_[j].end(), u) - node_cdf_[j].begin());
      const double sigma2 = d.sigma2_nodes[std::min(k, d.sigma2_nodes.size() - 1)];
      double b = 0.0;
      if (sigma2 > 0) {
        if (site != d.sites.end()) {
          const double prec = site->second.first + 1.0 / sigma2;
          b = site->second.second / prec + rng.normal() / std::sqrt(prec);
        } else {
          b = std::sqrt(sigma2) * rng.normal();
        }
      }
      const double mean = base + b;
      const double nu = probit_variance(normal_cdf(mean), record.tested + 1.0);
      out.push_back(100.0 * normal_cdf(mean + std::sqrt(nu) * rng.normal()));
    }
  }
  return out;
}

Prediction PredictiveModel::predict(const SurveillanceRecord& record, Philox& rng, PointPredictor point, int replicates,
                                    double level) const {
  std::vector<double> sims = simulate(record, rng, replicates);
  std::sort(sims.begin(), sims.end());
  Prediction p;
  p.record = record;
  p.observed = 100.0 * record.proportion();
  p.point = point == PointPredictor::Median ? quantile_sorted(sims, 0.5)
                                            : std::accumulate(sims.begin(), sims.end(), 0.0) / sims.size();
  p.lower = quantile_sorted(sims, 0.5 * (1.0 - level));
  p.upper = quantile_sorted(sims, 0.5 * (1.0 + level));
  return p;
}

double predictive_quantile(std::vector<double> simulated, double observed) {
  if (simulated.empty()) throw ValidationError("no simulated values");
  std::size_t below = 0, equal = 0;
  for (double v : simulated) {
    if (v < observed) ++below;
    else if (v == observed) ++equal;
  }
  return (below + 0.5 * equal) / simulated.size();
}

double PredictiveModel::quantile(const SurveillanceRecord& record, Philox& rng, int replicates) const {
  // Compare on the continuity-corrected scale the observation model lives on.
  const double observed = 100.0 * (record.positive + 0.5) / (record.tested + 1.0);
  return predictive_quantile(simulate(record, rng, replicates), observed);
}

std::vector<double> ppc_quantiles(const PredictiveModel& model, const std::vector<SurveillanceRecord>& observed,
                                  Philox& rng, int replicates) {
  std::vector<double> q;
  q.reserve(observed.size());
  for (const auto& r : observed) q.push_back(model.quantile(r, rng, replicates));
  return q;
}

namespace {

void accumulate(CVMetrics& m, const Prediction& p) {
  m.mae += std::abs(p.observed - p.point);
  m.width += p.upper - p.lower;
  m.coverage += (p.observed >= p.lower && p.observed <= p.upper) ? 1.0 : 0.0;
  ++m.n;
}

void finish(CVMetrics& m) {
  if (m.n == 0) return;
  m.mae /= m.n;
  m.width /= m.n;
  m.coverage /= m.n;
}

}  // namespace

CVReport score(const std::vector<Prediction>& predictions, const std::string& model) {
  if (predictions.empty()) throw ValidationError("empty test set");
  CVReport rep;
  rep.model = model;
  for (const auto& p : predictions) {
    accumulate(rep.overall, p);
    accumulate(rep.by_area[p.record.area_id], p);
  }
  finish(rep.overall);
  for (auto& [_, m] : rep.by_area) finish(m);
  return rep;
}

std::map<std::string, double> relative_mae_change(const CVReport& independent, const CVReport& augmented) {
  std::map<std::string, double> out;
  for (const auto& [area, m] : independent.by_area) {
    const auto it = augmented.by_area.find(area);
    if (it == augmented.by_area.end() || m.mae <= 0) continue;
    out[area] = (it->second.mae - m.mae) / m.mae;
  }
  return out;
}

CrossValidationResult run_crossval(const SurveillanceDataset& data, const DemographicSchedule& demog,
                                   const CrossValidationOptions& options, std::uint64_t seed) {
  if (data.records.empty()) throw ValidationError("cross-validation needs data");
  const int first_year = data.min_year();
  const int last_year = data.max_year();
  const SplineBasis basis = build_basis(first_year, last_year, knots_for_basis_size(options.n_basis));
  const auto plans = make_splits(data, options.n_replicates, seed);
  const auto areas = data.area_ids();

  CrossValidationResult result;
  std::vector<Prediction> all_ind, all_aug;
  double time_ind = 0, time_aug = 0;
  for (const auto& plan : plans) {
    ReplicateResult rep;
    rep.plan = plan;
    const SurveillanceDataset train = plan.training(data);
    const SurveillanceDataset test = plan.testing(data);

    McmcOptions glmm = options.glmm;
    glmm.workers = options.workers;
    const auto t_glmm = std::chrono::steady_clock::now();
    const GlmmFit full = fit_glmm(train, basis, glmm, substream(seed, stream_name("all", "glmm", plan.replicate)),
                                 options.glmm_priors);
    const double glmm_seconds = seconds_since(t_glmm);
    rep.glmm_diagnostics = full.diagnostics;
    if (!full.converged() && !options.force)
      throw NumericalError("cross-area spline model did not converge (max R-hat " +
                           std::to_string(full.diagnostics.max_rhat) + ")");

    struct AreaOut {
      KLReport kl;
      std::vector<Prediction> ind, aug;
      double t_ind = 0, t_aug = 0;
    };
    std::vector<AreaOut> per_area(areas.size());
    parallel_for(areas.size(), options.workers, [&](std::size_t a) {
      const std::string& area = areas[a];
      AreaOut& out = per_area[a];
      const SurveillanceDataset area_train = train.for_area(area);
      const SurveillanceDataset area_test = test.for_area(area);
      EppFitOptions epp = options.epp;
      epp.workers = 1;

      auto t0 = std::chrono::steady_clock::now();
      const EppFit ind = fit_epp(area_train, demog, first_year, last_year, epp,
                                 substream(seed, stream_name(area, "epp-independent", plan.replicate)));
      out.t_ind = seconds_since(t0);

      t0 = std::chrono::steady_clock::now();
      const AreaPosterior post = extract_area_posterior(full, area, PosteriorScale::Natural,
                                                        glmm.quadrature_order, options.force);
      KSelectionOptions kopt = options.k_selection;
      kopt.workers = 1;
      const std::uint64_t k_seed = substream(seed, stream_name(area, "select-k", plan.replicate)).key();
      KSelection sel;
      if (kopt.scale == PosteriorScale::Probit) {
        const AreaPosterior ref = extract_area_posterior(full, area, PosteriorScale::Probit, glmm.quadrature_order,
                                                         options.force);
        sel = select_k(area_train, post, basis, kopt, k_seed, &ref);
      } else {
        sel = select_k(area_train, post, basis, kopt, k_seed);
      }
      out.kl = sel.report;
      SurveillanceDataset augmented = area_train;
      augmented.records.insert(augmented.records.end(), sel.auxiliary.records.begin(), sel.auxiliary.records.end());
      const EppFit aug = fit_epp(augmented, demog, first_year, last_year, epp,
                                 substream(seed, stream_name(area, "epp-augmented", plan.replicate)));
      out.t_aug = seconds_since(t0) + glmm_seconds / areas.size();

      const AreaLikelihood lik_ind(area_train, epp.sigma2_prior, epp.aux_routing);
      const AreaLikelihood lik_aug(augmented, epp.sigma2_prior, epp.aux_routing);
      const PredictiveModel model_ind(ind, lik_ind), model_aug(aug, lik_aug);
      Philox rng_ind = substream(seed, stream_name(area, "predict-independent", plan.replicate));
      Philox rng_aug = substream(seed, stream_name(area, "predict-augmented", plan.replicate));
      for (const auto& r : area_test.records) {
        out.ind.push_back(model_ind.predict(r, rng_ind, options.point, options.predictive_replicates));
        out.aug.push_back(model_aug.predict(r, rng_aug, options.point, options.predictive_replicates));
      }
    });

    double rep_ind = 0, rep_aug = 0;
    for (auto& out : per_area) {
      rep.kl.push_back(std::move(out.kl));
      rep.independent_predictions.insert(rep.independent_predictions.end(), out.ind.begin(), out.ind.end());
      rep.augmented_predictions.insert(rep.augmented_predictions.end(), out.aug.begin(), out.aug.end());
      rep_ind += out.t_ind;
      rep_aug += out.t_aug;
    }
    rep.independent = score(rep.independent_predictions, "Independent Model");
    rep.augmented = score(rep.augmented_predictions, "Augmented Data Model");
    rep.independent.runtime_seconds = rep_ind;
    rep.augmented.runtime_seconds = rep_aug;
    time_ind += rep_ind;
    time_aug += rep_aug;
    all_ind.insert(all_ind.end(), rep.independent_predictions.begin(), rep.independent_predictions.end());
    all_aug.insert(all_aug.end(), rep.augmented_predictions.begin(), rep.augmented_predictions.end());
    result.replicates.push_back(std::move(rep));
  }
  result.independent = score(all_ind, "Independent Model");
  result.augmented = score(all_aug, "Augmented Data Model");
  result.independent.runtime_seconds = time_ind;
  result.augmented.runtime_seconds = time_aug;
  return result;
}

}  // namespace hivaug
