#pragma once

#include <string>
#include <vector>

#include "hivaug/data.hpp"
#include "hivaug/dynamics.hpp"

namespace hivaug {

struct ProbitObservation {
  double w;
  double nu;
};

// W = probit((Y + 0.5) / (N + 1)) with its delta-method variance.
ProbitObservation probit_transform(int positive, int tested);

// Delta-method variance of probit(p) for a proportion estimated from n trials.
double probit_variance(double p, double n);

// Prior on the site random-effect variance s: density proportional to
// s^-(shape+1) exp(-rate / s) on [lower, upper]. The default rate 1/93 is the
// EPP convention exp(-1 / (93 s)).
struct InverseGammaSpec {
  double shape = 0.58;
  double rate = 1.0 / 93.0;
  double lower = 1e-4;
  double upper = 5.0;
  int order = 30;
};

// How auxiliary pseudo-records enter the ANC likelihood.
enum class AuxRouting {
  BiasOnly,    // keep alpha, no site random effect
  PseudoSite,  // one extra site per area: alpha plus its own b_i
};

// Precomputed probit-scale likelihood for one area's data. Evaluation is
// const and reentrant.
class AreaLikelihood {
 public:
  AreaLikelihood(const SurveillanceDataset& area_data, const InverseGammaSpec& prior = {},
                 AuxRouting routing = AuxRouting::BiasOnly);

  // ANC (sites + auxiliary) plus NPBS terms.
  double log_likelihood(const Trajectory& traj, double alpha) const;
  double anc_log_likelihood(const Trajectory& traj, double alpha) const;
  double npbs_log_likelihood(const Trajectory& traj) const;

  // ANC log-likelihood with sigma^2 held fixed: a sum of per-site marginals.
  double conditional_log_likelihood(const Trajectory& traj, double alpha, double sigma2) const;

  struct SiteSummary {
    std::string site_id;
    double precision_sum;  // sum 1/nu
    double score_sum;      // sum d/nu, d = W - probit(rho) - alpha
  };
  // Posterior over sigma^2 on the quadrature nodes plus the sufficient
  // statistics needed for b_i | sigma^2, data.
  struct SitePosterior {
    std::vector<double> sigma2_nodes;
    std::vector<double> node_probabilities;
    std::vector<SiteSummary> sites;
  };
  SitePosterior site_posterior(const Trajectory& traj, double alpha) const;

  bool empty() const { return sites_.empty() && aux_.empty() && npbs_.empty(); }
  std::size_t n_sites() const { return sites_.size(); }
  int min_year() const { return min_year_; }
  int max_year() const { return max_year_; }
  const std::vector<double>& sigma2_nodes() const { return sigma2_nodes_; }
  const std::vector<double>& log_node_weights() const { return log_node_weights_; }

 private:
  struct Obs {
    int year;
    double w;
    double nu;
  };
  struct Site {
    std::string id;
    std::vector<Obs> obs;
  };
  struct SiteStats {
    double log_const;  // sum log N(d_t | 0, nu_t)
    double precision;
    double score;
  };

  SiteStats site_stats(const Site& site, const Trajectory& traj, double alpha) const;
  static double site_marginal(const SiteStats& s, double sigma2);
  void check_years(const Trajectory& traj) const;

  std::vector<Site> sites_;
  std::vector<Obs> aux_;
  std::vector<NPBSRecord> npbs_;
  std::vector<double> sigma2_nodes_;
  std::vector<double> log_node_weights_;  // log of normalised prior mass per node
  int min_year_ = 0;
  int max_year_ = 0;
};

// Convenience wrapper over AreaLikelihood.
double log_likelihood(const Trajectory& traj, const SurveillanceDataset& area_data, const RTrendParams& params,
                      const InverseGammaSpec& sigma2_prior = {});

// Sum of NPBS log densities on the probit scale; no bias and no site effect.
double calibrate_npbs(const Trajectory& traj, const std::vector<NPBSRecord>& npbs);

// probit(rho) with rho clamped away from {0, 1}.
double probit_clamped(double rho);

}  // namespace hivaug
