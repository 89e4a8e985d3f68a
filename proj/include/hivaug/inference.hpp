#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hivaug/data.hpp"
#include "hivaug/dynamics.hpp"
#include "hivaug/likelihood.hpp"
#include "hivaug/rng.hpp"

namespace hivaug {

// ---------------------------------------------------------------------------
// Generic incremental mixture importance sampling
// ---------------------------------------------------------------------------

struct ImisBudget {
  int n_initial = 640;      // 10 d^2 for d = 8
  int n_per_stage = 1000;
  int n_stages = 100;       // adaptive stages after the prior stage
  int n_resample = 3000;
  double unique_fraction_target = 1.0 - std::exp(-1.0);
};

struct ImisTarget {
  int dim = 0;
  std::function<Eigen::VectorXd(Philox&)> sample_prior;
  std::function<double(const Eigen::VectorXd&)> log_prior;  // normalised; -inf outside the support
  std::function<double(const Eigen::VectorXd&)> log_likelihood;
};

struct WeightedSample {
  Eigen::MatrixXd draws;            // dim x n, one column per draw
  std::vector<double> log_weights;  // unnormalised log importance weights
  std::vector<double> weights;      // normalised
  bool normalized = false;

  std::size_t size() const { return static_cast<std::size_t>(draws.cols()); }
  Eigen::VectorXd weighted_mean() const;
  // Delta-method Monte Carlo standard error of the self-normalised mean.
  Eigen::VectorXd mean_standard_error() const;
};

struct ImisDiagnostics {
  int stages_run = 0;                        // adaptive stages actually added
  std::vector<double> ess_by_stage;          // index 0 is the prior stage
  std::vector<double> unique_fraction_by_stage;
  bool target_reached = false;
  long n_likelihood_evaluations = 0;
};

struct ImisResult {
  WeightedSample sample;
  std::vector<std::size_t> resample_index;
  ImisDiagnostics diagnostics;
};

// Normalises weights in place; throws NumericalError when every weight is zero.
void normalize_weights(WeightedSample& sample);

// Expected fraction of distinct points in a multinomial resample of size m.
double expected_unique_fraction(const std::vector<double>& weights, int m);

ImisResult imis(const ImisTarget& target, const ImisBudget& budget, Philox& rng, int workers = 1);

// ---------------------------------------------------------------------------
// r-trend posterior
// ---------------------------------------------------------------------------

struct ParamPrior {
  enum class Kind { Uniform, Normal };
  Kind kind = Kind::Uniform;
  double a = 0.0;  // uniform lower, or normal mean
  double b = 1.0;  // uniform upper, or normal sd
  // Optional truncation for normals.
  double lower = -INFINITY;
  double upper = INFINITY;

  static ParamPrior uniform(double lo, double hi) { return {Kind::Uniform, lo, hi, lo, hi}; }
  static ParamPrior normal(double mean, double sd, double lo = -INFINITY, double hi = INFINITY) {
    return {Kind::Normal, mean, sd, lo, hi};
  }
  double log_density(double x) const;
  double sample(Philox& rng) const;
  void validate(const std::string& name) const;
};

// Provisional priors; EPP's published priors are not reproduced here. The
// sampling space is (t0, t1 - t0, log r0, beta0..beta3, alpha).
struct PriorSpec {
  ParamPrior t0 = ParamPrior::uniform(1970, 1990);
  ParamPrior t1_offset = ParamPrior::uniform(10, 25);
  ParamPrior log_r0 = ParamPrior::normal(std::log(0.35), 1.0);
  ParamPrior beta0 = ParamPrior::uniform(0, 1);
  ParamPrior beta1 = ParamPrior::uniform(0, 1);
  ParamPrior beta2 = ParamPrior::uniform(-5, 0);
  ParamPrior beta3 = ParamPrior::uniform(-5, 0);
  ParamPrior alpha = ParamPrior::normal(0, 1);

  static constexpr int kDim = 8;
  std::vector<const ParamPrior*> components() const;
  double log_density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd sample(Philox& rng) const;
  void validate() const;
};

Eigen::VectorXd to_vector(const RTrendParams& p);
RTrendParams from_vector(const Eigen::VectorXd& x);

struct QuantileBand {
  std::vector<double> q025, median, q975;
};

struct PosteriorTrajectorySummary {
  int first_year = 0;
  QuantileBand prevalence, incidence, mortality;
  std::vector<RTrendParams> resampled;
  std::size_t size() const { return prevalence.median.size(); }
};

// Posterior quantiles over an equally weighted draw set (type-7 quantiles).
PosteriorTrajectorySummary summarize(const std::vector<Trajectory>& trajectories, std::vector<RTrendParams> draws);
PosteriorTrajectorySummary summarize(const std::vector<RTrendParams>& draws, const DemographicSchedule& demog,
                                     int first_year, int last_year, const SimulationOptions& sim = {});

struct EppFitOptions {
  PriorSpec prior;
  ImisBudget budget;
  InverseGammaSpec sigma2_prior;
  AuxRouting aux_routing = AuxRouting::BiasOnly;
  SimulationOptions sim;
  int workers = 1;
};

struct EppFit {
  std::string area_id;
  int first_year = 0;
  int last_year = 0;
  WeightedSample sample;
  ImisDiagnostics diagnostics;
  std::vector<RTrendParams> resampled;
  std::vector<Trajectory> trajectories;  // one per resampled draw
  PosteriorTrajectorySummary summary;
};

// Full per-area fit: IMIS over the r-trend posterior, final resample and
// trajectory summaries over [first_year, last_year].
EppFit fit_epp(const SurveillanceDataset& area_data, const DemographicSchedule& demog, int first_year, int last_year,
               const EppFitOptions& options, Philox rng);

// IMIS target for an area: prior plus simulate-then-likelihood; rejected or
// clamped trajectories get log-likelihood -inf.
ImisTarget make_epp_target(const AreaLikelihood& lik, const DemographicSchedule& demog, int last_year,
                           const PriorSpec& prior, const SimulationOptions& sim);

}  // namespace hivaug
