#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hivaug/data.hpp"
#include "hivaug/dynamics.hpp"
#include "hivaug/rng.hpp"
#include "hivaug/spline.hpp"

namespace hivaug {

// Hierarchical benchmark drawn from the SI model and the probit ANC
// observation model. Area parameters scatter around `mean` with the listed
// between-area standard deviations.
struct SyntheticSpec {
  int n_areas = 12;
  int sites_per_area = 4;
  int first_year = 1994;
  int last_year = 2007;
  RTrendParams mean{1978.0, 1992.0, 1.2, 0.45, 0.15, -1.5, -0.5, 0.1};
  double sd_t0 = 1.0;
  double sd_t1 = 1.0;
  double sd_log_r0 = 0.08;
  double sd_beta0 = 0.04;
  double sd_beta1 = 0.02;
  double sd_beta2 = 0.2;
  double sd_beta3 = 0.1;
  double sd_alpha = 0.05;
  double site_sd = 0.15;  // probit-scale site effect
  int tested_min = 300;
  int tested_max = 700;
  double missingness = 0.75;
  int npbs_year = 2004;  // one survey point per area; 0 disables
  int npbs_size = 2000;
};

struct SyntheticTruth {
  std::vector<std::string> area_ids;
  std::vector<RTrendParams> params;    // per area
  std::vector<Trajectory> trajectories;
  std::map<std::string, double> site_effects;  // key "area/site"
  int extinct_areas = 0;
};

struct SyntheticData {
  SurveillanceDataset data;
  SyntheticTruth truth;
  std::vector<std::string> warnings;
};

void validate(const SyntheticSpec& spec);
SyntheticData generate_synthetic(const SyntheticSpec& spec, const DemographicSchedule& demog, std::uint64_t seed);

std::string area_label(int index);
std::string site_label(int index);

// Data drawn from the binomial spline mixed model itself, for calibration.
struct GlmmSyntheticSpec {
  int n_areas = 6;
  int sites_per_area = 3;
  int first_year = 1997;
  int last_year = 2010;
  int n_basis = 7;
  double intercept = -2.5;   // logit scale
  double slope_sd = 0.15;    // sd of second-order random-walk increments of beta
  double tau_site = 0.3;
  double tau_area = 0.15;
  int tested_min = 100;
  int tested_max = 300;
  double missingness = 0.2;
};

struct GlmmSyntheticData {
  SurveillanceDataset data;
  SplineBasis basis;
  // Site-marginalised true area prevalence: areas x years.
  Eigen::MatrixXd area_prevalence;
  std::vector<std::string> area_ids;
};

GlmmSyntheticData generate_glmm_synthetic(const GlmmSyntheticSpec& spec, std::uint64_t seed,
                                          int quadrature_order = 32);

}  // namespace hivaug
