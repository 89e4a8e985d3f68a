#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hivaug {

// Parameters of the r-trend infection-rate model plus the ANC bias term.
struct RTrendParams {
  double t0 = 1980.0;    // epidemic start year
  double t1 = 1995.0;    // onset of stabilisation
  double r0 = 0.35;      // infection rate at t0
  double beta0 = 0.2;    // stationary infection rate
  double beta1 = 0.3;    // convergence rate toward beta0
  double beta2 = -1.0;   // prevalence coefficient
  double beta3 = -0.5;   // stabilisation coefficient
  double alpha = 0.0;    // ANC bias, probit scale
};

// Annual demographic inputs, indexed by calendar year starting at first_year.
struct DemographicSchedule {
  int first_year = 1950;
  std::vector<double> entrants;   // E(t), persons per year
  std::vector<double> mu;         // non-HIV mortality rate
  std::vector<double> a50;        // ageing-out rate
  std::vector<double> migration;  // net migration rate, may be negative
  double hiv_mortality_rate = 0.1;
  // Optional per-year override of hiv_mortality_rate; empty means constant.
  std::vector<double> hiv_mortality_by_year;
  double initial_population = 1.0e6;

  int last_year() const { return first_year + static_cast<int>(entrants.size()) - 1; }
  bool covers(double from, double to) const;
  void validate() const;

  // Flat schedule: E = 0.03 N0, mu = 0.01, a50 = 0.02, M = 0 over [1950, 2100].
  static DemographicSchedule flat_default();
  // All flows zero: total population is conserved.
  static DemographicSchedule closed(double population = 1.0e6);
};

struct EpidemicState {
  std::vector<double> time_grid;
  std::vector<double> susceptible;
  std::vector<double> infected;
};

// Annual outputs at calendar years first_year .. first_year + size - 1.
struct Trajectory {
  int first_year = 0;
  std::vector<double> prevalence;
  std::vector<double> incidence;       // new infections per susceptible per year
  std::vector<double> hiv_mortality;   // HIV deaths per year
  std::vector<double> infection_rate;  // r(t)

  std::size_t size() const { return prevalence.size(); }
  int last_year() const { return first_year + static_cast<int>(size()) - 1; }
  bool contains(int year) const { return year >= first_year && year <= last_year(); }
  double prevalence_at(int year) const { return prevalence.at(static_cast<std::size_t>(year - first_year)); }
};

struct SimulationOptions {
  double step = 0.1;
  bool keep_state = false;
};

struct SimulationResult {
  EpidemicState state;
  Trajectory trajectory;
  bool rejected = false;  // non-finite values; the parameter draw is unusable
  bool clamped = false;   // some compartment went negative and was clamped
  bool usable() const { return !rejected && !clamped; }
};

constexpr double kSeedPrevalence = 0.0000025;

// One annual r-trend update. Returns nullopt when the update is not finite
// (the caller treats that as a rejected parameter draw).
std::optional<double> rtrend_step(double r_t, double rho_t, double rho_next, double t, const RTrendParams& params);

// Stabilisation term gamma(t); exactly zero for t <= t1.
double stabilization_term(double rho_t, double rho_next, double t, double t1);

// Integrates the SI system from t0 and reports annual outputs for calendar
// years [first_year, last_year]. Years before t0 report zero prevalence.
SimulationResult simulate(const RTrendParams& params, const DemographicSchedule& demog, int first_year,
                          int last_year, const SimulationOptions& options = {});

}  // namespace hivaug
