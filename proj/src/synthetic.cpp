#include "hivaug/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "hivaug/error.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

int draw_int(Philox& rng, int lo, int hi) {
  return lo + static_cast<int>(std::floor(rng.uniform() * (hi - lo + 1)));
}

int draw_binomial(Philox& rng, int n, double p) {
  std::binomial_distribution<int> dist(n, std::clamp(p, 0.0, 1.0));
  return dist(rng);
}

}  // namespace

std::string area_label(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "A%02d", index + 1);
  return buf;
}

std::string site_label(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", index + 1);
  return buf;
}

void validate(const SyntheticSpec& s) {
  if (s.n_areas < 1 || s.sites_per_area < 1) throw ValidationError("synthetic settings need at least one area and site");
  if (s.last_year < s.first_year) throw ValidationError("synthetic year range is empty");
  if (s.tested_min < 1 || s.tested_max < s.tested_min) throw ValidationError("synthetic sample sizes invalid");
  if (s.missingness < 0 || s.missingness >= 1) throw ValidationError("missingness must lie in [0, 1)");
  for (double sd : {s.sd_t0, s.sd_t1, s.sd_log_r0, s.sd_beta0, s.sd_beta1, s.sd_beta2, s.sd_beta3, s.sd_alpha,
                    s.site_sd})
    if (!(sd >= 0)) throw ValidationError("synthetic standard deviations must be >= 0");
  if (s.npbs_year != 0 && (s.npbs_year < s.first_year || s.npbs_year > s.last_year))
    throw ValidationError("NPBS year outside the synthetic range");
  if (s.npbs_size < 1) throw ValidationError("NPBS size must be >= 1");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec, const DemographicSchedule& demog, std::uint64_t seed) {
  validate(spec);
  SyntheticData out;
  auto& truth = out.truth;
  for (int a = 0; a < spec.n_areas; ++a) {
    const std::string area = area_label(a);
    truth.area_ids.push_back(area);
    Philox rng = substream(seed, stream_name(area, "synth", 0));

    RTrendParams p = spec.mean;
    p.t0 += spec.sd_t0 * rng.normal();
    p.t1 = p.t0 + (spec.mean.t1 - spec.mean.t0) + spec.sd_t1 * rng.normal();
    p.r0 *= std::exp(spec.sd_log_r0 * rng.normal());
    p.beta0 = std::max(1e-3, p.beta0 + spec.sd_beta0 * rng.normal());
    p.beta1 += spec.sd_beta1 * rng.normal();
    p.beta2 += spec.sd_beta2 * rng.normal();
    p.beta3 += spec.sd_beta3 * rng.normal();
    p.alpha += spec.sd_alpha * rng.normal();
    if (p.t1 <= p.t0) p.t1 = p.t0 + 1.0;

    const int sim_first = std::min(spec.first_year, static_cast<int>(std::floor(p.t0)));
    SimulationResult sim = simulate(p, demog, sim_first, spec.last_year);
    if (!sim.usable()) throw NumericalError("synthetic trajectory for " + area + " is not usable");
    const Trajectory& traj = sim.trajectory;
    if (traj.prevalence_at(spec.last_year) < 1e-4) ++truth.extinct_areas;

    for (int s = 0; s < spec.sites_per_area; ++s) {
      const std::string site = site_label(s);
      const double b = spec.site_sd * rng.normal();
      truth.site_effects[area + "/" + site] = b;
      for (int y = spec.first_year; y <= spec.last_year; ++y) {
        const int n = draw_int(rng, spec.tested_min, spec.tested_max);
        const double z = normal_quantile(std::clamp(traj.prevalence_at(y), 1e-12, 1 - 1e-12)) + p.alpha + b;
        const int pos = draw_binomial(rng, n, normal_cdf(z));
        const bool missing = rng.uniform() < spec.missingness;
        if (!missing) out.data.records.push_back({area, site, y, n, pos, false});
      }
    }
    if (spec.npbs_year != 0) {
      const double rho = traj.prevalence_at(spec.npbs_year);
      const int pos = draw_binomial(rng, spec.npbs_size, rho);
      const double phat = (pos + 0.5) / (spec.npbs_size + 1.0);
      out.data.npbs.push_back({area, spec.npbs_year, phat, std::sqrt(phat * (1 - phat) / spec.npbs_size)});
    }
    truth.params.push_back(p);
    truth.trajectories.push_back(traj);
  }
  if (2 * truth.extinct_areas > spec.n_areas)
    out.warnings.push_back("more than half of the synthetic epidemics are extinct");
  return out;
}

GlmmSyntheticData generate_glmm_synthetic(const GlmmSyntheticSpec& spec, std::uint64_t seed, int quadrature_order) {
  if (spec.n_areas < 1 || spec.sites_per_area < 1 || spec.tested_min < 1 || spec.tested_max < spec.tested_min)
    throw ValidationError("invalid GLMM synthetic settings");
  GlmmSyntheticData out;
  out.basis = build_basis(spec.first_year, spec.last_year, knots_for_basis_size(spec.n_basis));
  const int D = out.basis.n_basis();
  const int T = out.basis.n_years();
  Philox rng = substream(seed, "glmm-synth");

  Eigen::VectorXd beta(D);
  double level = 0.0, slope = spec.slope_sd * rng.normal() * 2.0;
  for (int d = 0; d < D; ++d) {
    beta(d) = level;
    slope += spec.slope_sd * rng.normal();
    level += slope;
  }
  beta.array() -= beta.mean();

  const auto gh = gauss_hermite_normal(quadrature_order);
  out.area_prevalence.resize(spec.n_areas, T);
  for (int a = 0; a < spec.n_areas; ++a) {
    const std::string area = area_label(a);
    out.area_ids.push_back(area);
    Eigen::VectorXd coef = beta;
    if (spec.n_areas > 1)
      for (int d = 0; d < D; ++d) coef(d) += spec.tau_area * rng.normal();
    const Eigen::VectorXd eta = (out.basis.basis_matrix * coef).array() + spec.intercept;
    for (int t = 0; t < T; ++t) {
      double rho = 0.0;
      for (std::size_t k = 0; k < gh.nodes.size(); ++k)
        rho += gh.weights[k] * inv_logit(eta(t) + spec.tau_site * gh.nodes[k]);
      out.area_prevalence(a, t) = rho;
    }
    for (int s = 0; s < spec.sites_per_area; ++s) {
      const double b = spec.tau_site * rng.normal();
      for (int t = 0; t < T; ++t) {
        const int n = draw_int(rng, spec.tested_min, spec.tested_max);
        const int pos = draw_binomial(rng, n, inv_logit(eta(t) + b));
        if (rng.uniform() < spec.missingness) continue;
        out.data.records.push_back({area, site_label(s), spec.first_year + t, n, pos, false});
      }
    }
  }
  return out;
}

}  // namespace hivaug
