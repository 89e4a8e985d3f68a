#include "hivaug/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hivaug/error.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Multivariate normal component with a cached Cholesky factor.
struct Component {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;  // lower
  double log_norm;

  Component(Eigen::VectorXd m, const Eigen::MatrixXd& cov) : mean(std::move(m)) {
    const int d = static_cast<int>(mean.size());
    Eigen::MatrixXd c = cov;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    double jitter = 1e-10 * std::max(1e-300, c.diagonal().mean());
    while (llt.info() != Eigen::Success) {
      // Diagonal inflation for singular neighbourhood covariances.
      c = cov;
      c.diagonal().array() += jitter;
      llt.compute(c);
      jitter *= 10.0;
      if (!std::isfinite(jitter)) throw NumericalError("IMIS: cannot regularise component covariance");
    }
    chol = llt.matrixL();
    log_norm = -0.5 * d * std::log(2.0 * M_PI) - chol.diagonal().array().log().sum();
  }

  double log_pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(x - mean);
    return log_norm - 0.5 * z.squaredNorm();
  }

  Eigen::VectorXd sample(Philox& rng) const {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return mean + chol * z;
  }
};

}  // namespace

Eigen::VectorXd WeightedSample::weighted_mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(draws.rows());
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0) m += weights[i] * draws.col(static_cast<Eigen::Index>(i));
  return m;
}

Eigen::VectorXd WeightedSample::mean_standard_error() const {
  const Eigen::VectorXd m = weighted_mean();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(draws.rows());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0) continue;
    const Eigen::VectorXd d = draws.col(static_cast<Eigen::Index>(i)) - m;
    v += weights[i] * weights[i] * d.cwiseProduct(d);
  }
  return v.cwiseSqrt();
}

void normalize_weights(WeightedSample& s) {
  double max_lw = kNegInf;
  for (double lw : s.log_weights) max_lw = std::max(max_lw, lw);
  if (!std::isfinite(max_lw)) throw NumericalError("prior-data conflict: all importance weights are zero");
  s.weights.resize(s.log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.log_weights.size(); ++i) {
    s.weights[i] = std::exp(s.log_weights[i] - max_lw);
    total += s.weights[i];
  }
  for (auto& w : s.weights) w /= total;
  s.normalized = true;
}

double expected_unique_fraction(const std::vector<double>& weights, int m) {
  double expected = 0.0;
  for (double w : weights)
    if (w > 0) expected += -std::expm1(m * std::log1p(-std::min(w, 1.0 - 1e-16)));
  return expected / m;
}

ImisResult imis(const ImisTarget& target, const ImisBudget& budget, Philox& rng, int workers) {
  if (budget.n_initial < 1 || budget.n_per_stage < 1 || budget.n_stages < 0 || budget.n_resample < 1)
    throw ValidationError("IMIS budget components must be >= 1");
  const int d = target.dim;
  const Eigen::Index n0 = budget.n_initial;
  const Eigen::Index per_stage = budget.n_per_stage;
  const Eigen::Index capacity = n0 + per_stage * budget.n_stages;

  ImisResult result;
  WeightedSample& s = result.sample;
  s.draws.resize(d, capacity);
  std::vector<double> log_lik(capacity, kNegInf), log_prior(capacity, kNegInf), log_mix(capacity, kNegInf);
  std::vector<Component> components;
  Eigen::Index n = 0;

  auto evaluate = [&](Eigen::Index from, Eigen::Index to) {
    parallel_for(static_cast<std::size_t>(to - from), workers, [&](std::size_t k) {
      const Eigen::Index i = from + static_cast<Eigen::Index>(k);
      const Eigen::VectorXd x = s.draws.col(i);
      log_prior[i] = target.log_prior(x);
      log_lik[i] = std::isfinite(log_prior[i]) ? target.log_likelihood(x) : kNegInf;
      if (std::isnan(log_lik[i])) log_lik[i] = kNegInf;
    });
    result.diagnostics.n_likelihood_evaluations += static_cast<long>(to - from);
  };

  for (Eigen::Index i = 0; i < n0; ++i) s.draws.col(i) = target.sample_prior(rng);
  n = n0;
  evaluate(0, n);

  // Distance scaling: prior-sample variance per coordinate.
  Eigen::VectorXd scale(d);
  {
    const Eigen::MatrixXd x0 = s.draws.leftCols(n0);
    const Eigen::VectorXd mean = x0.rowwise().mean();
    for (int j = 0; j < d; ++j) {
      const double var = (x0.row(j).array() - mean(j)).square().sum() / std::max<Eigen::Index>(1, n0 - 1);
      scale(j) = var > 0 ? var : 1.0;
    }
  }

  auto reweight = [&] {
    s.log_weights.assign(static_cast<std::size_t>(n), kNegInf);
    const double log_prior_share = std::log(static_cast<double>(n0) / n);
    const double log_comp_share = components.empty() ? kNegInf : std::log(static_cast<double>(per_stage) / n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(log_lik[i])) continue;
      const double log_q = log_add(log_prior_share + log_prior[i], log_comp_share + log_mix[i]);
      s.log_weights[i] = log_lik[i] + log_prior[i] - log_q;
    }
    normalize_weights(s);
    result.diagnostics.ess_by_stage.push_back(effective_sample_size(s.weights));
    const double uf = expected_unique_fraction(s.weights, budget.n_resample);
    result.diagnostics.unique_fraction_by_stage.push_back(uf);
    return uf;
  };

  double unique_fraction = reweight();
  for (int stage = 1; stage <= budget.n_stages; ++stage) {
    if (unique_fraction >= budget.unique_fraction_target) {
      result.diagnostics.target_reached = true;
      break;
    }
    const auto best = static_cast<Eigen::Index>(
        std::max_element(s.weights.begin(), s.weights.end()) - s.weights.begin());
    const Eigen::VectorXd centre = s.draws.col(best);

    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      dist[i] = {((s.draws.col(i) - centre).array().square() / scale.array()).sum(), i};
    const auto n_near = std::min<Eigen::Index>(per_stage, n);
    std::nth_element(dist.begin(), dist.begin() + (n_near - 1), dist.end());
    std::sort(dist.begin(), dist.begin() + n_near);

    // Weighted covariance about the centre with weights (w_i + 1/n), using
    // the unbiased normalisation 1 / (1 - sum w^2).
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    std::vector<double> wn(static_cast<std::size_t>(n_near));
    double wsum = 0.0;
    for (Eigen::Index k = 0; k < n_near; ++k) {
      wn[k] = s.weights[dist[k].second] + 1.0 / n;
      wsum += wn[k];
    }
    double w2 = 0.0;
    for (Eigen::Index k = 0; k < n_near; ++k) {
      const double w = wn[k] / wsum;
      w2 += w * w;
      const Eigen::VectorXd dx = s.draws.col(dist[k].second) - centre;
      cov.noalias() += w * dx * dx.transpose();
    }
    if (w2 < 1.0) cov /= (1.0 - w2);
    components.emplace_back(centre, cov);
    const Component& comp = components.back();

    const Eigen::Index from = n;
    for (Eigen::Index k = 0; k < per_stage; ++k) s.draws.col(n + k) = comp.sample(rng);
    n += per_stage;
    evaluate(from, n);

    // New component density for every point; all earlier components for the
    // new points.
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (idx < from) {
        log_mix[idx] = log_add(log_mix[idx], comp.log_pdf(s.draws.col(idx)));
      } else {
        double acc = kNegInf;
        for (const auto& c : components) acc = log_add(acc, c.log_pdf(s.draws.col(idx)));
        log_mix[idx] = acc;
      }
    });
    result.diagnostics.stages_run = stage;
    unique_fraction = reweight();
  }
  if (!result.diagnostics.target_reached && unique_fraction >= budget.unique_fraction_target)
    result.diagnostics.target_reached = true;

  s.draws.conservativeResize(d, n);

  // Multinomial resample.
  std::vector<double> cumulative(s.weights.size());
  std::partial_sum(s.weights.begin(), s.weights.end(), cumulative.begin());
  result.resample_index.resize(static_cast<std::size_t>(budget.n_resample));
  for (auto& idx : result.resample_index) {
    const double u = rng.uniform() * cumulative.back();
    idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    idx = std::min(idx, s.weights.size() - 1);
    while (s.weights[idx] <= 0 && idx > 0) --idx;
  }
  return result;
}

// ---------------------------------------------------------------------------

double ParamPrior::log_density(double x) const {
  if (x < lower || x > upper || std::isnan(x)) return kNegInf;
  if (kind == Kind::Uniform) return -std::log(b - a);
  double mass = 1.0;
  if (std::isfinite(lower) || std::isfinite(upper)) {
    const double hi = std::isfinite(upper) ? normal_cdf((upper - a) / b) : 1.0;
    const double lo = std::isfinite(lower) ? normal_cdf((lower - a) / b) : 0.0;
    mass = hi - lo;
  }
  return normal_log_pdf(x, a, b * b) - std::log(mass);
}

double ParamPrior::sample(Philox& rng) const {
  if (kind == Kind::Uniform) return a + (b - a) * rng.uniform();
  const double lo = std::isfinite(lower) ? normal_cdf((lower - a) / b) : 0.0;
  const double hi = std::isfinite(upper) ? normal_cdf((upper - a) / b) : 1.0;
  if (lo == 0.0 && hi == 1.0) return a + b * rng.normal();
  return a + b * normal_quantile(lo + (hi - lo) * rng.uniform());
}

void ParamPrior::validate(const std::string& name) const {
  const bool ok = kind == Kind::Uniform ? (std::isfinite(a) && std::isfinite(b) && a < b)
                                        : (std::isfinite(a) && b > 0 && lower < upper);
  if (!ok) throw ValidationError("invalid prior for " + name);
}

std::vector<const ParamPrior*> PriorSpec::components() const {
  return {&t0, &t1_offset, &log_r0, &beta0, &beta1, &beta2, &beta3, &alpha};
}

double PriorSpec::log_density(const Eigen::VectorXd& x) const {
  const auto c = components();
  double lp = 0.0;
  for (int i = 0; i < kDim; ++i) {
    lp += c[i]->log_density(x(i));
    if (!std::isfinite(lp)) return kNegInf;
  }
  return lp;
}

Eigen::VectorXd PriorSpec::sample(Philox& rng) const {
  const auto c = components();
  Eigen::VectorXd x(kDim);
  for (int i = 0; i < kDim; ++i) x(i) = c[i]->sample(rng);
  return x;
}

void PriorSpec::validate() const {
  static const char* names[] = {"t0", "t1_offset", "log_r0", "beta0", "beta1", "beta2", "beta3", "alpha"};
  const auto c = components();
  for (int i = 0; i < kDim; ++i) c[i]->validate(names[i]);
}

Eigen::VectorXd to_vector(const RTrendParams& p) {
  Eigen::VectorXd x(PriorSpec::kDim);
  x << p.t0, p.t1 - p.t0, std::log(p.r0), p.beta0, p.beta1, p.beta2, p.beta3, p.alpha;
  return x;
}

RTrendParams from_vector(const Eigen::VectorXd& x) {
  return {x(0), x(0) + x(1), std::exp(x(2)), x(3), x(4), x(5), x(6), x(7)};
}

PosteriorTrajectorySummary summarize(const std::vector<Trajectory>& trajectories, std::vector<RTrendParams> draws) {
  if (trajectories.empty()) throw ValidationError("summarize: no draws");
  PosteriorTrajectorySummary out;
  out.first_year = trajectories.front().first_year;
  out.resampled = std::move(draws);
  const std::size_t n_years = trajectories.front().size();
  auto fill = [&](QuantileBand& band, auto member) {
    band.q025.resize(n_years);
    band.median.resize(n_years);
    band.q975.resize(n_years);
    std::vector<double> column(trajectories.size());
    for (std::size_t t = 0; t < n_years; ++t) {
      for (std::size_t i = 0; i < trajectories.size(); ++i) column[i] = (trajectories[i].*member)[t];
      std::sort(column.begin(), column.end());
      band.q025[t] = quantile_sorted(column, 0.025);
      band.median[t] = quantile_sorted(column, 0.5);
      band.q975[t] = quantile_sorted(column, 0.975);
    }
  };
  fill(out.prevalence, &Trajectory::prevalence);
  fill(out.incidence, &Trajectory::incidence);
  fill(out.mortality, &Trajectory::hiv_mortality);
  return out;
}

PosteriorTrajectorySummary summarize(const std::vector<RTrendParams>& draws, const DemographicSchedule& demog,
                                     int first_year, int last_year, const SimulationOptions& sim) {
  std::vector<Trajectory> trajectories;
  trajectories.reserve(draws.size());
  for (const auto& p : draws) trajectories.push_back(simulate(p, demog, first_year, last_year, sim).trajectory);
  return summarize(trajectories, draws);
}

ImisTarget make_epp_target(const AreaLikelihood& lik, const DemographicSchedule& demog, int last_year,
                           const PriorSpec& prior, const SimulationOptions& sim) {
  ImisTarget target;
  target.dim = PriorSpec::kDim;
  target.sample_prior = [&prior](Philox& rng) { return prior.sample(rng); };
  target.log_prior = [&prior](const Eigen::VectorXd& x) { return prior.log_density(x); };
  target.log_likelihood = [&lik, &demog, last_year, sim](const Eigen::VectorXd& x) {
    if (lik.empty()) return 0.0;
    const RTrendParams p = from_vector(x);
    const auto res = simulate(p, demog, lik.min_year(), std::max(last_year, lik.max_year()), sim);
    if (!res.usable()) return kNegInf;
    const double ll = lik.log_likelihood(res.trajectory, p.alpha);
    return std::isfinite(ll) ? ll : kNegInf;
  };
  return target;
}

EppFit fit_epp(const SurveillanceDataset& area_data, const DemographicSchedule& demog, int first_year, int last_year,
               const EppFitOptions& options, Philox rng) {
  options.prior.validate();
  demog.validate();
  const AreaLikelihood lik(area_data, options.sigma2_prior, options.aux_routing);
  const int sim_last = lik.empty() ? last_year : std::max(last_year, lik.max_year());
  const ImisTarget target = make_epp_target(lik, demog, sim_last, options.prior, options.sim);

  auto result = imis(target, options.budget, rng, options.workers);

  EppFit fit;
  const auto ids = area_data.area_ids();
  fit.area_id = ids.empty() ? std::string() : ids.front();
  fit.first_year = first_year;
  fit.last_year = last_year;
  fit.diagnostics = result.diagnostics;
  fit.resampled.reserve(result.resample_index.size());
  for (auto idx : result.resample_index)
    fit.resampled.push_back(from_vector(result.sample.draws.col(static_cast<Eigen::Index>(idx))));
  fit.sample = std::move(result.sample);
  fit.trajectories.resize(fit.resampled.size());
  parallel_for(fit.resampled.size(), options.workers, [&](std::size_t i) {
    fit.trajectories[i] = simulate(fit.resampled[i], demog, first_year, last_year, options.sim).trajectory;
  });
  fit.summary = summarize(fit.trajectories, fit.resampled);
  return fit;
}

}  // namespace hivaug
