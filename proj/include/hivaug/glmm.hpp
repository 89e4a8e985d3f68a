#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hivaug/data.hpp"
#include "hivaug/rng.hpp"
#include "hivaug/spline.hpp"

namespace hivaug {

// Binomial P-spline mixed model
//   logit(rho_iat) = beta0 + b_i(a) + sum_d (beta_d + b_ad) f_d(t)
// with N(0, 100) fixed effects, half-t(3, 0, 2.5) priors on the random-effect
// scales and on lambda^-1/2, and the second-difference penalty acting as a
// Gaussian prior on beta with precision lambda.
struct GlmmPriors {
  double fixed_variance = 100.0;
  double scale_dof = 3.0;
  double scale_scale = 2.5;
};

struct McmcOptions {
  int n_chains = 4;
  int n_iter = 2500;  // per chain, including warmup
  int warmup = 1000;
  double rhat_max = 1.05;
  double ess_min = 400.0;
  int quadrature_order = 32;      // Gauss-Hermite nodes for site marginalisation
  int aux_quadrature_order = 16;  // same, inside the pseudo-record likelihood
  int max_extensions = 2;         // extra post-warmup blocks run while unconverged
  int workers = 1;
};

struct GLMMState {
  double beta0 = 0.0;
  Eigen::VectorXd beta;    // D
  Eigen::VectorXd b_site;  // one per real site
  Eigen::MatrixXd b_area;  // areas x D
  double lambda = 1.0;
  double tau_site = 0.3;
  double tau_area = 0.3;
};

struct ChainDiagnostics {
  std::vector<std::string> names;
  std::vector<double> rhat;
  std::vector<double> ess;
  int n_chains = 0;
  int n_iter = 0;  // retained draws per chain
  double max_rhat = 0.0;
  double min_ess = 0.0;
  double coefficient_acceptance = 0.0;
  bool converged = false;
};

// Index layout of the observations the sampler sees.
struct GlmmDesign {
  std::vector<std::string> areas;
  std::vector<std::string> sites;        // real sites only, "area/site"
  std::vector<int> site_area;            // area index of each site
  struct Obs {
    int area;
    int site;  // -1 for auxiliary pseudo-records
    int year;
    int tested;
    int positive;
  };
  std::vector<Obs> obs;
  bool area_effects = true;

  static GlmmDesign from_dataset(const SurveillanceDataset& data, const SplineBasis& basis);
  int area_index(const std::string& area_id) const;
};

struct GlmmDraws {
  std::vector<std::string> columns;  // beta0, beta[d], tau_site, tau_area, lambda, b_site[..], b_area[..]
  Eigen::MatrixXd values;            // (n_chains * per_chain) x columns, chain-major
  int n_chains = 0;
  int per_chain = 0;
  int n_basis = 0;
  int n_sites = 0;
  int n_areas = 0;
  bool area_effects = true;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  GLMMState state(std::size_t draw) const;
  int column(const std::string& name) const;
};

struct GlmmFit {
  GlmmDesign design;
  SplineBasis basis;
  GlmmDraws draws;
  ChainDiagnostics diagnostics;
  bool converged() const { return diagnostics.converged; }
};

GlmmFit fit_glmm(const SurveillanceDataset& data, const SplineBasis& basis, const McmcOptions& options, Philox rng,
                 const GlmmPriors& priors = {});

ChainDiagnostics diagnose(const GlmmDraws& draws, const McmcOptions& options);

enum class PosteriorScale { Natural, Probit };

struct AreaPosterior {
  std::string area_id;
  std::vector<int> years;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

// Empirical mean and covariance of draws (rows) x years (columns); a single
// draw gives a zero covariance.
AreaPosterior moments_from_draws(const std::string& area_id, std::vector<int> years, const Eigen::MatrixXd& draws);

// Site-marginalised area prevalence for every draw: rows are draws, columns
// years of the basis range.
Eigen::MatrixXd area_prevalence_draws(const GlmmFit& fit, const std::string& area_id, int quadrature_order = 32);

// Requires a converged fit (unless force) with at least 100 effective draws.
AreaPosterior extract_area_posterior(const GlmmFit& fit, const std::string& area_id,
                                     PosteriorScale scale = PosteriorScale::Natural, int quadrature_order = 32,
                                     bool force = false);

// Log density of y ~ Binomial(n, inv_logit(eta)), dropping the binomial coefficient.
double binomial_logit_log_lik(int positive, int tested, double eta);

}  // namespace hivaug
