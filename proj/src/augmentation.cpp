#include "hivaug/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hivaug/error.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

Eigen::MatrixXd jittered(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = 0.5 * (m + m.transpose());
  const double scale = out.diagonal().mean();
  out.diagonal().array() += 1e-8 * (scale > 0 ? scale : 1.0);
  return out;
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  return lo > 0 ? hi / lo : INFINITY;
}

}  // namespace

GaussianKL gaussian_kl_report(const Eigen::VectorXd& p_mean, const Eigen::MatrixXd& p_cov,
                              const Eigen::VectorXd& q_mean, const Eigen::MatrixXd& q_cov) {
  const Eigen::Index d = p_mean.size();
  if (q_mean.size() != d || p_cov.rows() != d || p_cov.cols() != d || q_cov.rows() != d || q_cov.cols() != d)
    throw ValidationError("gaussian_kl: dimension mismatch");
  const Eigen::MatrixXd sp = jittered(p_cov);
  const Eigen::MatrixXd sq = jittered(q_cov);
  GaussianKL out;
  out.condition_p = condition_number(sp);
  out.condition_q = condition_number(sq);
  const Eigen::LLT<Eigen::MatrixXd> lp(sp), lq(sq);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "gaussian_kl: covariance not positive definite after jitter (condition P " << out.condition_p
        << ", Q " << out.condition_q << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::MatrixXd lq_mat = lq.matrixL();
  const Eigen::MatrixXd lp_mat = lp.matrixL();
  const double logdet_q = 2.0 * lq_mat.diagonal().array().log().sum();
  const double logdet_p = 2.0 * lp_mat.diagonal().array().log().sum();
  // tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
  const Eigen::MatrixXd a = lq.matrixL().solve(lp_mat);
  const Eigen::VectorXd delta = q_mean - p_mean;
  const Eigen::VectorXd b = lq.matrixL().solve(delta);
  out.divergence = 0.5 * (a.squaredNorm() - static_cast<double>(d) + b.squaredNorm() + logdet_q - logdet_p);
  return out;
}

double gaussian_kl(const Eigen::VectorXd& p_mean, const Eigen::MatrixXd& p_cov, const Eigen::VectorXd& q_mean,
                   const Eigen::MatrixXd& q_cov) {
  return gaussian_kl_report(p_mean, p_cov, q_mean, q_cov).divergence;
}

std::string aux_site_id(const std::string& area_id) { return std::string(kAuxSitePrefix) + area_id; }

AuxiliaryDataset make_auxiliary(const AreaPosterior& area_post, int k) {
  if (k < 1) throw ValidationError("auxiliary sample size must be >= 1");
  if (static_cast<Eigen::Index>(area_post.years.size()) != area_post.mu.size())
    throw ValidationError("area posterior years and mean differ in length");
  AuxiliaryDataset aux;
  aux.area_id = area_post.area_id;
  aux.k = k;
  for (std::size_t t = 0; t < area_post.years.size(); ++t) {
    const double mu = std::clamp(area_post.mu(static_cast<Eigen::Index>(t)), 0.0, 1.0);
    const int positive = static_cast<int>(std::nearbyint(k * mu));  // default rounding mode is half-to-even
    aux.records.push_back({area_post.area_id, aux_site_id(area_post.area_id), area_post.years[t], k, positive, true});
  }
  return aux;
}

const KLEntry& KLReport::entry(int k) const {
  for (const auto& e : entries)
    if (e.k == k) return e;
  throw ValidationError("no KL entry for K = " + std::to_string(k));
}

KSelection select_k(const SurveillanceDataset& area_data, const AreaPosterior& area_post, const SplineBasis& basis,
                    const KSelectionOptions& options, std::uint64_t seed, const AreaPosterior* reference) {
  const AreaPosterior& ref = reference ? *reference : area_post;
  if (ref.mu.size() != area_post.mu.size()) throw ValidationError("KL reference and area posterior differ in length");
  if (options.grid.empty()) throw ValidationError("K grid is empty");
  for (int k : options.grid)
    if (k < 1) throw ValidationError("K grid values must be >= 1");

  std::vector<int> ks;
  if (options.include_baseline) ks.push_back(0);
  ks.insert(ks.end(), options.grid.begin(), options.grid.end());

  SurveillanceDataset real;
  for (const auto& r : area_data.records)
    if (r.area_id == area_post.area_id && !(r.is_auxiliary || is_aux_site_id(r.site_id))) real.records.push_back(r);

  McmcOptions mcmc = options.mcmc;
  mcmc.workers = 1;
  std::vector<KLEntry> entries(ks.size());
  parallel_for(ks.size(), options.workers, [&](std::size_t i) {
    const int k = ks[i];
    SurveillanceDataset data = real;
    if (k > 0) {
      const auto aux = make_auxiliary(area_post, k);
      data.records.insert(data.records.end(), aux.records.begin(), aux.records.end());
    }
    KLEntry& e = entries[i];
    e.k = k;
    if (data.records.empty()) return;
    const GlmmFit fit = fit_glmm(data, basis, mcmc,
                                 substream(seed, stream_name(area_post.area_id, "refit", k)), options.priors);
    e.converged = fit.converged();
    if (!e.converged) return;
    AreaPosterior q;
    try {
      q = extract_area_posterior(fit, area_post.area_id, options.scale, mcmc.quadrature_order);
    } catch (const NumericalError&) {
      e.converged = false;
      return;
    }
    const GaussianKL kl = gaussian_kl_report(ref.mu, ref.sigma, q.mu, q.sigma);
    e.kl = kl.divergence;
    e.condition_p = kl.condition_p;
    e.condition_q = kl.condition_q;
    e.trace_q = q.sigma.trace();
  });

  KSelection out;
  out.report.area_id = area_post.area_id;
  out.report.entries = entries;
  const KLEntry* best = nullptr;
  for (auto& e : out.report.entries)
    if (e.k > 0 && e.converged && (!best || e.kl < best->kl)) best = &e;
  if (!best) throw NumericalError("no converged refit for area " + area_post.area_id);
  for (auto& e : out.report.entries)
    if (&e == best) e.selected = true;
  out.report.selected_k = best->k;
  out.report.selected_kl = best->kl;
  out.auxiliary = make_auxiliary(area_post, best->k);
  return out;
}

}  // namespace hivaug
