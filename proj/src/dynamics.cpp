#include "hivaug/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hivaug/error.hpp"

namespace hivaug {

bool DemographicSchedule::covers(double from, double to) const {
  return !entrants.empty() && std::floor(from) >= first_year && std::floor(to) <= last_year();
}

void DemographicSchedule::validate() const {
  const auto n = entrants.size();
  if (n == 0) throw ValidationError("demographic schedule is empty");
  if (mu.size() != n || a50.size() != n || migration.size() != n)
    throw ValidationError("demographic schedule columns have different lengths");
  if (!hiv_mortality_by_year.empty() && hiv_mortality_by_year.size() != n)
    throw ValidationError("hiv mortality schedule length does not match demographic schedule");
  for (std::size_t i = 0; i < n; ++i) {
    const int year = first_year + static_cast<int>(i);
    auto bad = [](double v) { return !std::isfinite(v) || v < 0; };
    if (bad(entrants[i]) || bad(mu[i]) || bad(a50[i]) || !std::isfinite(migration[i]))
      throw ValidationError("invalid demographic rates in year " + std::to_string(year));
    if (!hiv_mortality_by_year.empty() && bad(hiv_mortality_by_year[i]))
      throw ValidationError("invalid hiv mortality rate in year " + std::to_string(year));
  }
  if (!std::isfinite(hiv_mortality_rate) || hiv_mortality_rate < 0)
    throw ValidationError("hiv mortality rate must be finite and >= 0");
  if (!(initial_population > 0)) throw ValidationError("initial population must be > 0");
}

DemographicSchedule DemographicSchedule::flat_default() {
  DemographicSchedule d;
  d.first_year = 1950;
  const std::size_t n = 151;
  d.entrants.assign(n, 0.03 * d.initial_population);
  d.mu.assign(n, 0.01);
  d.a50.assign(n, 0.02);
  d.migration.assign(n, 0.0);
  return d;
}

DemographicSchedule DemographicSchedule::closed(double population) {
  DemographicSchedule d;
  d.first_year = 1950;
  const std::size_t n = 151;
  d.initial_population = population;
  d.entrants.assign(n, 0.0);
  d.mu.assign(n, 0.0);
  d.a50.assign(n, 0.0);
  d.migration.assign(n, 0.0);
  d.hiv_mortality_rate = 0.0;
  return d;
}

double stabilization_term(double rho_t, double rho_next, double t, double t1) {
  if (t <= t1) return 0.0;
  if (!(rho_t > 0)) return std::numeric_limits<double>::quiet_NaN();
  return (rho_next - rho_t) * (t - t1) / rho_t;
}

std::optional<double> rtrend_step(double r_t, double rho_t, double rho_next, double t, const RTrendParams& p) {
  if (r_t == 0.0) return 0.0;
  const double gamma = stabilization_term(rho_t, rho_next, t, p.t1);
  const double log_change = p.beta1 * (p.beta0 - r_t) + p.beta2 * rho_t + p.beta3 * gamma;
  const double r_next = r_t * std::exp(log_change);
  if (!std::isfinite(r_next) || !std::isfinite(log_change)) return std::nullopt;
  return r_next;
}

namespace {

struct Rates {
  double entrants, mu, a50, migration, hiv_mortality;
};

Rates rates_at(const DemographicSchedule& d, double t) {
  const auto last = static_cast<long>(d.entrants.size()) - 1;
  const long i = std::clamp(static_cast<long>(std::floor(t)) - d.first_year, 0L, last);
  return {d.entrants[i], d.mu[i], d.a50[i], d.migration[i],
          d.hiv_mortality_by_year.empty() ? d.hiv_mortality_rate : d.hiv_mortality_by_year[i]};
}

inline void derivative(const Rates& q, double r, double z, double y, double& dz, double& dy) {
  const double n = z + y;
  const double rho = n > 0 ? y / n : 0.0;
  const double infections = r * rho * z;
  dz = q.entrants - infections - q.mu * z - q.a50 * z + q.migration * z;
  dy = infections - q.hiv_mortality * y - q.a50 * y + q.migration * y;
}

}  // namespace

SimulationResult simulate(const RTrendParams& params, const DemographicSchedule& demog, int first_year,
                          int last_year, const SimulationOptions& options) {
  if (last_year < first_year) throw ValidationError("simulate: empty output year range");
  const double h = options.step;
  const double per_year = 1.0 / h;
  const long steps_per_year = std::lround(per_year);
  if (!(h > 0) || std::abs(per_year - steps_per_year) > 1e-9)
    throw ValidationError("simulate: step must divide one year");
  if (!demog.covers(std::min<double>(params.t0, last_year), last_year))
    throw ValidationError("demographic schedule does not cover the simulation period");

  SimulationResult out;
  Trajectory& traj = out.trajectory;
  const auto n_out = static_cast<std::size_t>(last_year - first_year + 1);
  traj.first_year = first_year;
  traj.prevalence.assign(n_out, 0.0);
  traj.incidence.assign(n_out, 0.0);
  traj.hiv_mortality.assign(n_out, 0.0);
  traj.infection_rate.assign(n_out, 0.0);

  const double t0 = params.t0;
  const double t_end = static_cast<double>(last_year);
  if (t0 > t_end) return out;

  const long n_steps = static_cast<long>(std::ceil((t_end - t0) / h - 1e-9));
  std::vector<double> zs(n_steps + 1), ys(n_steps + 1);
  std::vector<double> annual_r;
  annual_r.reserve(n_steps / steps_per_year + 2);

  double y = kSeedPrevalence * demog.initial_population;
  double z = demog.initial_population - y;
  double r = params.r0;
  double rho_year_start = kSeedPrevalence;
  zs[0] = z;
  ys[0] = y;
  annual_r.push_back(r);

  for (long i = 0; i < n_steps; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    const Rates q0 = rates_at(demog, t);
    const Rates qm = rates_at(demog, t + 0.5 * h);
    const Rates q1 = rates_at(demog, t + h);
    double k1z, k1y, k2z, k2y, k3z, k3y, k4z, k4y;
    derivative(q0, r, z, y, k1z, k1y);
    derivative(qm, r, z + 0.5 * h * k1z, y + 0.5 * h * k1y, k2z, k2y);
    derivative(qm, r, z + 0.5 * h * k2z, y + 0.5 * h * k2y, k3z, k3y);
    derivative(q1, r, z + h * k3z, y + h * k3y, k4z, k4y);
    z += h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z);
    y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
    if (!std::isfinite(z) || !std::isfinite(y)) {
      out.rejected = true;
      return out;
    }
    if (z < 0) {
      z = 0;
      out.clamped = true;
    }
    if (y < 0) {
      y = 0;
      out.clamped = true;
    }
    zs[i + 1] = z;
    ys[i + 1] = y;

    if ((i + 1) % steps_per_year == 0) {
      const double rho_year_end = (z + y) > 0 ? y / (z + y) : 0.0;
      const double year_start = t0 + static_cast<double>((i + 1) / steps_per_year - 1);
      const auto next = rtrend_step(r, rho_year_start, rho_year_end, year_start, params);
      if (!next) {
        out.rejected = true;
        return out;
      }
      r = *next;
      rho_year_start = rho_year_end;
      annual_r.push_back(r);
    }
  }

  for (std::size_t k = 0; k < n_out; ++k) {
    const double year = first_year + static_cast<double>(k);
    if (year < t0) continue;
    const double u = (year - t0) / h;
    const auto i = std::min<long>(static_cast<long>(std::floor(u)), n_steps - 1 < 0 ? 0 : n_steps - 1);
    const double frac = n_steps > 0 ? u - static_cast<double>(i) : 0.0;
    const auto j = std::min<long>(i + 1, n_steps);
    const double zi = zs[i] + frac * (zs[j] - zs[i]);
    const double yi = ys[i] + frac * (ys[j] - ys[i]);
    const double ni = zi + yi;
    const double rho = ni > 0 ? std::clamp(yi / ni, 0.0, 1.0) : 0.0;
    const auto ri = std::min<std::size_t>(static_cast<std::size_t>(std::floor(year - t0 + 1e-9)), annual_r.size() - 1);
    const Rates q = rates_at(demog, year);
    traj.prevalence[k] = rho;
    traj.infection_rate[k] = annual_r[ri];
    traj.incidence[k] = annual_r[ri] * rho;
    traj.hiv_mortality[k] = q.hiv_mortality * yi;
  }

  if (options.keep_state) {
    out.state.time_grid.resize(n_steps + 1);
    for (long i = 0; i <= n_steps; ++i) out.state.time_grid[i] = t0 + static_cast<double>(i) * h;
    out.state.susceptible = std::move(zs);
    out.state.infected = std::move(ys);
  }
  return out;
}

}  // namespace hivaug
