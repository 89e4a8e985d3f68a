#pragma once

#include <cmath>
#include <vector>

#include "hivaug/dynamics.hpp"
#include "hivaug/inference.hpp"
#include "hivaug/likelihood.hpp"

namespace oracle {

using namespace hivaug;

// Forward Euler on a much finer grid, r updated at each anniversary of t0.
inline std::vector<double> euler_prevalence(const RTrendParams& p, const DemographicSchedule& d, int first, int last,
                                            int per_year) {
  const double h = 1.0 / per_year;
  double y = kSeedPrevalence * d.initial_population;
  double z = d.initial_population - y;
  double r = p.r0;
  double rho_start = kSeedPrevalence;
  std::vector<double> out;
  const int years = last - static_cast<int>(p.t0);
  std::vector<double> annual{kSeedPrevalence};
  for (int k = 0; k < years; ++k) {
    const double t_year = p.t0 + k;
    const int idx = static_cast<int>(t_year) - d.first_year;
    for (int s = 0; s < per_year; ++s) {
      const double n = z + y;
      const double inf = r * (y / n) * z;
      const double dz = d.entrants[idx] - inf - d.mu[idx] * z - d.a50[idx] * z + d.migration[idx] * z;
      const double dy = inf - d.hiv_mortality_rate * y - d.a50[idx] * y + d.migration[idx] * y;
      z += h * dz;
      y += h * dy;
    }
    const double rho_end = y / (z + y);
    double gamma = 0.0;
    if (t_year > p.t1) gamma = (rho_end - rho_start) * (t_year - p.t1) / rho_start;
    r *= std::exp(p.beta1 * (p.beta0 - r) + p.beta2 * rho_start + p.beta3 * gamma);
    rho_start = rho_end;
    annual.push_back(rho_end);
  }
  for (int year = first; year <= last; ++year) out.push_back(annual[year - static_cast<int>(p.t0)]);
  return out;
}

inline double npdf(double x, double m, double v) { return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * M_PI * v); }

struct Obs {
  double w, nu, mean;
};

// Composite Simpson over z = b / sigma on [-10, 10] for each site, then over
// u = log sigma^2 on the truncation range, with the prior normalised on the
// same grid. Nothing from the library beyond the probit transform is used.
inline double dense_marginal(const std::vector<std::vector<Obs>>& sites, const InverseGammaSpec& prior, int nu_grid = 2000,
                      int nz = 2000) {
  const double u_lo = std::log(prior.lower), u_hi = std::log(prior.upper);
  const double hu = (u_hi - u_lo) / nu_grid, hz = 20.0 / nz;
  double num = 0, den = 0;
  for (int iu = 0; iu <= nu_grid; ++iu) {
    const double u = u_lo + iu * hu;
    const double s2 = std::exp(u);
    const double wu = (iu == 0 || iu == nu_grid) ? 1 : (iu % 2 ? 4 : 2);
    const double prior_u = std::pow(s2, -prior.shape) * std::exp(-prior.rate / s2);  // density in u, unnormalised
    double like = 1.0;
    for (const auto& site : sites) {
      double inner = 0;
      for (int iz = 0; iz <= nz; ++iz) {
        const double z = -10 + iz * hz;
        const double wz = (iz == 0 || iz == nz) ? 1 : (iz % 2 ? 4 : 2);
        const double b = std::sqrt(s2) * z;
        double f = npdf(z, 0, 1);
        for (const auto& o : site) f *= npdf(o.w, o.mean + b, o.nu);
        inner += wz * f;
      }
      like *= inner * hz / 3;
    }
    num += wu * prior_u * like;
    den += wu * prior_u;
  }
  return std::log(num / den);
}

// x ~ N(0, tau2 I), y | x ~ N(x, s2 I); posterior mean y tau2 / (tau2 + s2).
inline ImisTarget conjugate_target(const Eigen::Vector2d& y, double tau2, double s2) {
  ImisTarget t;
  t.dim = 2;
  t.sample_prior = [tau2](Philox& rng) {
    Eigen::VectorXd x(2);
    x << std::sqrt(tau2) * rng.normal(), std::sqrt(tau2) * rng.normal();
    return x;
  };
  t.log_prior = [tau2](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm() / tau2 - std::log(2 * M_PI * tau2); };
  t.log_likelihood = [y, s2](const Eigen::VectorXd& x) { return -0.5 * (x - y).squaredNorm() / s2; };
  return t;
}

}  // namespace oracle
