#include "hivaug/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hivaug/error.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

std::vector<std::string> SurveillanceDataset::area_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.area_id);
  for (const auto& n : npbs) ids.push_back(n.area_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

SurveillanceDataset SurveillanceDataset::for_area(const std::string& area_id) const {
  SurveillanceDataset out;
  for (const auto& r : records)
    if (r.area_id == area_id) out.records.push_back(r);
  for (const auto& n : npbs)
    if (n.area_id == area_id) out.npbs.push_back(n);
  return out;
}

int SurveillanceDataset::min_year() const {
  if (records.empty()) throw ValidationError("dataset has no records");
  return std::min_element(records.begin(), records.end(), [](auto& a, auto& b) { return a.year < b.year; })->year;
}

int SurveillanceDataset::max_year() const {
  if (records.empty()) throw ValidationError("dataset has no records");
  return std::max_element(records.begin(), records.end(), [](auto& a, auto& b) { return a.year < b.year; })->year;
}

bool is_aux_site_id(const std::string& site_id) { return site_id.rfind(kAuxSitePrefix, 0) == 0; }

double probit_variance(double p, double n) {
  const double phi = std::exp(normal_log_pdf(normal_quantile(p), 0.0, 1.0));
  return p * (1.0 - p) / (n * phi * phi);
}

ProbitObservation probit_transform(int positive, int tested) {
  if (tested < 1 || positive < 0 || positive > tested)
    throw ValidationError("probit_transform: need tested >= 1 and 0 <= positive <= tested");
  const double p = (positive + 0.5) / (tested + 1.0);
  return {normal_quantile(p), probit_variance(p, tested + 1.0)};
}

double probit_clamped(double rho) {
  constexpr double eps = 1e-15;
  return normal_quantile(std::clamp(rho, eps, 1.0 - eps));
}

AreaLikelihood::AreaLikelihood(const SurveillanceDataset& area_data, const InverseGammaSpec& prior,
                               AuxRouting routing)
    : npbs_(area_data.npbs) {
  if (!(prior.lower > 0) || !(prior.upper > prior.lower) || prior.order < 1 || !(prior.shape > 0) ||
      !(prior.rate > 0))
    throw ValidationError("invalid inverse-gamma prior");

  std::map<std::string, std::size_t> site_index;
  min_year_ = std::numeric_limits<int>::max();
  max_year_ = std::numeric_limits<int>::min();
  for (const auto& r : area_data.records) {
    const auto po = probit_transform(r.positive, r.tested);
    const Obs obs{r.year, po.w, po.nu};
    min_year_ = std::min(min_year_, r.year);
    max_year_ = std::max(max_year_, r.year);
    const bool aux = r.is_auxiliary || is_aux_site_id(r.site_id);
    if (aux && routing == AuxRouting::BiasOnly) {
      aux_.push_back(obs);
      continue;
    }
    const std::string key = aux ? std::string(kAuxSitePrefix) + r.area_id : r.site_id;
    auto [it, inserted] = site_index.try_emplace(key, sites_.size());
    if (inserted) sites_.push_back({key, {}});
    sites_[it->second].obs.push_back(obs);
  }
  for (const auto& n : npbs_) {
    if (!(n.prevalence > 0 && n.prevalence < 1) || !(n.std_err > 0))
      throw ValidationError("NPBS record needs prevalence in (0,1) and std_err > 0");
    min_year_ = std::min(min_year_, n.year);
    max_year_ = std::max(max_year_, n.year);
  }

  // Gauss-Legendre in u = log s over the truncated support; node weights carry
  // the prior density and the Jacobian ds = s du, normalised to sum to one.
  const auto rule = gauss_legendre(prior.order, std::log(prior.lower), std::log(prior.upper));
  std::vector<double> lw(rule.nodes.size());
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double u = rule.nodes[k];
    const double s = std::exp(u);
    sigma2_nodes_.push_back(s);
    lw[k] = std::log(rule.weights[k]) + prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) -
            (prior.shape + 1.0) * u - prior.rate / s + u;
  }
  const double log_z = log_sum_exp(lw);
  if (!std::isfinite(log_z)) throw ValidationError("inverse-gamma prior has no mass on its truncation range");
  for (auto& v : lw) v -= log_z;
  log_node_weights_ = std::move(lw);
}

void AreaLikelihood::check_years(const Trajectory& traj) const {
  if (empty()) return;
  if (!traj.contains(min_year_) || !traj.contains(max_year_))
    throw ValidationError("trajectory does not cover the data years " + std::to_string(min_year_) + "-" +
                          std::to_string(max_year_));
}

AreaLikelihood::SiteStats AreaLikelihood::site_stats(const Site& site, const Trajectory& traj, double alpha) const {
  SiteStats s{0.0, 0.0, 0.0};
  for (const auto& o : site.obs) {
    const double d = o.w - probit_clamped(traj.prevalence_at(o.year)) - alpha;
    s.log_const += normal_log_pdf(d, 0.0, o.nu);
    s.precision += 1.0 / o.nu;
    s.score += d / o.nu;
  }
  return s;
}

double AreaLikelihood::site_marginal(const SiteStats& s, double sigma2) {
  return s.log_const + 0.5 * s.score * s.score / (s.precision + 1.0 / sigma2) - 0.5 * std::log1p(sigma2 * s.precision);
}

double AreaLikelihood::anc_log_likelihood(const Trajectory& traj, double alpha) const {
  check_years(traj);
  double total = 0.0;
  for (const auto& o : aux_) total += normal_log_pdf(o.w, probit_clamped(traj.prevalence_at(o.year)) + alpha, o.nu);
  if (sites_.empty()) return total;

  std::vector<SiteStats> stats;
  stats.reserve(sites_.size());
  for (const auto& site : sites_) stats.push_back(site_stats(site, traj, alpha));
  std::vector<double> terms(sigma2_nodes_.size());
  for (std::size_t k = 0; k < sigma2_nodes_.size(); ++k) {
    double sum = log_node_weights_[k];
    for (const auto& s : stats) sum += site_marginal(s, sigma2_nodes_[k]);
    terms[k] = sum;
  }
  return total + log_sum_exp(terms);
}

double AreaLikelihood::npbs_log_likelihood(const Trajectory& traj) const {
  if (!npbs_.empty()) check_years(traj);
  return calibrate_npbs(traj, npbs_);
}

double AreaLikelihood::log_likelihood(const Trajectory& traj, double alpha) const {
  if (empty()) return 0.0;
  return anc_log_likelihood(traj, alpha) + npbs_log_likelihood(traj);
}

double AreaLikelihood::conditional_log_likelihood(const Trajectory& traj, double alpha, double sigma2) const {
  check_years(traj);
  double total = 0.0;
  for (const auto& o : aux_) total += normal_log_pdf(o.w, probit_clamped(traj.prevalence_at(o.year)) + alpha, o.nu);
  for (const auto& site : sites_) total += site_marginal(site_stats(site, traj, alpha), sigma2);
  return total;
}

AreaLikelihood::SitePosterior AreaLikelihood::site_posterior(const Trajectory& traj, double alpha) const {
  check_years(traj);
  SitePosterior post;
  post.sigma2_nodes = sigma2_nodes_;
  std::vector<SiteStats> stats;
  for (const auto& site : sites_) {
    stats.push_back(site_stats(site, traj, alpha));
    post.sites.push_back({site.id, stats.back().precision, stats.back().score});
  }
  std::vector<double> terms(sigma2_nodes_.size());
  for (std::size_t k = 0; k < sigma2_nodes_.size(); ++k) {
    double sum = log_node_weights_[k];
    for (const auto& s : stats) sum += site_marginal(s, sigma2_nodes_[k]);
    terms[k] = sum;
  }
  const double norm = log_sum_exp(terms);
  post.node_probabilities.resize(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) post.node_probabilities[k] = std::exp(terms[k] - norm);
  return post;
}

double calibrate_npbs(const Trajectory& traj, const std::vector<NPBSRecord>& npbs) {
  double total = 0.0;
  for (const auto& n : npbs) {
    if (!traj.contains(n.year)) throw ValidationError("NPBS year " + std::to_string(n.year) + " outside trajectory");
    const double target = normal_quantile(n.prevalence);
    const double phi = std::exp(normal_log_pdf(target, 0.0, 1.0));
    const double se = n.std_err / phi;
    total += normal_log_pdf(target, probit_clamped(traj.prevalence_at(n.year)), se * se);
  }
  return total;
}

double log_likelihood(const Trajectory& traj, const SurveillanceDataset& area_data, const RTrendParams& params,
                      const InverseGammaSpec& sigma2_prior) {
  if (area_data.records.empty() && area_data.npbs.empty()) return 0.0;
  return AreaLikelihood(area_data, sigma2_prior).log_likelihood(traj, params.alpha);
}

}  // namespace hivaug
