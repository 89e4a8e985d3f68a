#include "hivaug/glmm.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

#include "hivaug/error.hpp"
#include "hivaug/mcmc_diagnostics.hpp"
#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kScaleRepeats = 1;
constexpr int kDenseLimit = 60;  // coefficient count below which dense Cholesky is faster

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double binomial_logit_log_lik(int positive, int tested, double eta) {
  return positive * eta - tested * softplus(eta);
}

GlmmDesign GlmmDesign::from_dataset(const SurveillanceDataset& data, const SplineBasis& basis) {
  GlmmDesign d;
  d.areas = data.area_ids();
  std::map<std::string, int> area_idx;
  for (std::size_t i = 0; i < d.areas.size(); ++i) area_idx[d.areas[i]] = static_cast<int>(i);
  std::map<std::string, int> site_idx;
  for (const auto& r : data.records) {
    if (r.year < basis.first_year || r.year > basis.last_year)
      throw ValidationError("record year " + std::to_string(r.year) + " outside spline basis range");
    if (r.tested < 1 || r.positive < 0 || r.positive > r.tested)
      throw ValidationError("invalid counts in GLMM input");
    const int a = area_idx.at(r.area_id);
    int s = -1;
    if (!(r.is_auxiliary || is_aux_site_id(r.site_id))) {
      const std::string key = r.area_id + "/" + r.site_id;
      auto [it, inserted] = site_idx.try_emplace(key, static_cast<int>(d.sites.size()));
      if (inserted) {
        d.sites.push_back(key);
        d.site_area.push_back(a);
      }
      s = it->second;
    }
    d.obs.push_back({a, s, r.year, r.tested, r.positive});
  }
  d.area_effects = true;
  return d;
}

int GlmmDesign::area_index(const std::string& area_id) const {
  const auto it = std::find(areas.begin(), areas.end(), area_id);
  if (it == areas.end()) throw ValidationError("unknown area " + area_id);
  return static_cast<int>(it - areas.begin());
}

int GlmmDraws::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ValidationError("no draw column " + name);
  return static_cast<int>(it - columns.begin());
}

GLMMState GlmmDraws::state(std::size_t draw) const {
  const auto row = values.row(static_cast<Eigen::Index>(draw));
  GLMMState s;
  int k = 0;
  s.beta0 = row(k++);
  s.beta = row.segment(k, n_basis).transpose();
  k += n_basis;
  s.tau_site = row(k++);
  s.tau_area = area_effects ? row(k++) : 0.0;
  s.lambda = row(k++);
  s.b_site = row.segment(k, n_sites).transpose();
  k += n_sites;
  if (area_effects) {
    s.b_area.resize(n_areas, n_basis);
    for (int a = 0; a < n_areas; ++a)
      for (int dd = 0; dd < n_basis; ++dd) s.b_area(a, dd) = row(k++);
  }
  return s;
}

namespace {

class Sampler {
 public:
  Sampler(const GlmmDesign& design, const SplineBasis& basis, const GlmmPriors& priors, const McmcOptions& opt)
      : priors_(priors), D_(basis.n_basis()), S_(static_cast<int>(design.sites.size())),
        A_(static_cast<int>(design.areas.size())), area_fx_(design.area_effects) {
    warmup_len_ = opt.warmup;
    off_site_ = 1 + D_;
    off_area_ = off_site_ + S_;
    p_ = off_area_ + (area_fx_ ? A_ * D_ : 0);

    row_start_.push_back(0);
    for (const auto& o : design.obs) {
      const auto f = basis.row(o.year);
      idx_.push_back(0);
      val_.push_back(1.0);
      for (int d = 0; d < D_; ++d) {
        if (f(d) == 0.0) continue;
        idx_.push_back(1 + d);
        val_.push_back(f(d));
      }
      if (o.site >= 0) {
        idx_.push_back(off_site_ + o.site);
        val_.push_back(1.0);
      }
      if (area_fx_) {
        for (int d = 0; d < D_; ++d) {
          if (f(d) == 0.0) continue;
          idx_.push_back(off_area_ + o.area * D_ + d);
          val_.push_back(f(d));
        }
      }
      row_start_.push_back(static_cast<int>(idx_.size()));
      y_.push_back(o.positive);
      n_.push_back(o.tested);
      aux_.push_back(o.site < 0 ? 1 : 0);
      any_aux_ = any_aux_ || o.site < 0;
    }

    const Eigen::MatrixXd k = second_difference_matrix(D_);
    ktk_ = k.transpose() * k;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ktk_);
    ktk_values_ = eig.eigenvalues();
    ktk_vectors_ = eig.eigenvectors();
    for (int j = 0; j < D_; ++j)
      if (ktk_values_(j) > 1e-9) penalised_dims_.push_back(j);

    const auto gh = gauss_hermite_normal(opt.aux_quadrature_order);
    gh_z_ = gh.nodes;
    gh_w_ = gh.weights;
    build_hessian_pattern();
  }

  int n_coefficients() const { return p_; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> names{"beta0"};
    for (int d = 0; d < D_; ++d) names.push_back("beta[" + std::to_string(d + 1) + "]");
    names.push_back("tau_site");
    if (area_fx_) names.push_back("tau_area");
    names.push_back("lambda");
    for (int s = 0; s < S_; ++s) names.push_back("b_site[" + std::to_string(s + 1) + "]");
    if (area_fx_)
      for (int a = 0; a < A_; ++a)
        for (int d = 0; d < D_; ++d)
          names.push_back("b_area[" + std::to_string(a + 1) + "," + std::to_string(d + 1) + "]");
    return names;
  }

  void initialise(Philox& rng) {
    double y = 0, n = 0;
    for (std::size_t j = 0; j < y_.size(); ++j) {
      y += y_[j];
      n += n_[j];
    }
    const double pooled = (y + 0.5) / (n + 1.0);
    c_ = Eigen::VectorXd::Zero(p_);
    c_(0) = logit(pooled) + 0.5 * rng.normal();
    for (int i = 1; i < p_; ++i) c_(i) = 0.1 * rng.normal();
    tau_s_ = std::exp(std::log(0.3) + 0.5 * rng.normal());
    tau_a_ = std::exp(std::log(0.3) + 0.5 * rng.normal());
    s_lambda_ = std::exp(0.5 * rng.normal());
    eta_ = linear_predictor(c_);
    loglik_ = log_lik(eta_, tau_s_);
  }

  void iterate(Philox& rng, bool warmup, int iter) {
    const bool newton_only = warmup && iter < 10;
    update_coefficients(rng, newton_only, warmup && iter < warmup_len_ / 2);
    if (!newton_only) {
      for (Scale which : {Scale::Site, Scale::Area, Scale::Smooth}) {
        if (which == Scale::Area && !area_fx_) continue;
        joint_move(rng, which, warmup, iter, false);
        if (!warmup && tracked_ > 10) joint_move(rng, which, warmup, iter, true);
      }
      if (warmup && iter >= warmup_len_ / 2) track_scales();
    }

    // Variance block: centred and rescaling moves for each scale.
    for (int rep = 0; rep < kScaleRepeats; ++rep) {
      scale_move(rng, Scale::Site, false, warmup, iter);
      scale_move(rng, Scale::Site, true, warmup, iter);
      if (area_fx_) {
        scale_move(rng, Scale::Area, false, warmup, iter);
        scale_move(rng, Scale::Area, true, warmup, iter);
      }
      scale_move(rng, Scale::Smooth, false, warmup, iter);
      scale_move(rng, Scale::Smooth, true, warmup, iter);
    }
  }

  void record(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const {
    int k = 0;
    out(k++) = c_(0);
    for (int d = 0; d < D_; ++d) out(k++) = c_(1 + d);
    out(k++) = tau_s_;
    if (area_fx_) out(k++) = tau_a_;
    out(k++) = lambda();
    for (int s = 0; s < S_; ++s) out(k++) = c_(off_site_ + s);
    if (area_fx_)
      for (int i = 0; i < A_ * D_; ++i) out(k++) = c_(off_area_ + i);
  }

  long accepted() const { return coef_accepted_; }
  long proposed() const { return coef_proposed_; }

 private:
  enum class Scale { Site, Area, Smooth };

  double lambda() const { return 1.0 / (s_lambda_ * s_lambda_); }

  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& c) const {
    Eigen::VectorXd eta(static_cast<Eigen::Index>(y_.size()));
    for (std::size_t j = 0; j < y_.size(); ++j) {
      double s = 0.0;
      for (int k = row_start_[j]; k < row_start_[j + 1]; ++k) s += val_[k] * c(idx_[k]);
      eta(static_cast<Eigen::Index>(j)) = s;
    }
    return eta;
  }

  // Site-marginalised prevalence and its derivative in eta.
  void marginal(double eta, double tau, double& rho, double& drho) const {
    rho = 0.0;
    drho = 0.0;
    for (std::size_t k = 0; k < gh_z_.size(); ++k) {
      const double p = inv_logit(eta + tau * gh_z_[k]);
      rho += gh_w_[k] * p;
      drho += gh_w_[k] * p * (1.0 - p);
    }
    rho = std::clamp(rho, 1e-300, 1.0 - 1e-16);
  }

  double obs_log_lik(std::size_t j, double eta, double tau) const {
    if (!aux_[j]) return binomial_logit_log_lik(y_[j], n_[j], eta);
    double rho, drho;
    marginal(eta, tau, rho, drho);
    return y_[j] * std::log(rho) + (n_[j] - y_[j]) * std::log1p(-rho);
  }

  double log_lik(const Eigen::VectorXd& eta, double tau) const {
    double s = 0.0;
    for (std::size_t j = 0; j < y_.size(); ++j) s += obs_log_lik(j, eta(static_cast<Eigen::Index>(j)), tau);
    return s;
  }

  // Q c for the Gaussian prior on the coefficient vector.
  Eigen::VectorXd prior_precision_times(const Eigen::VectorXd& c) const {
    Eigen::VectorXd q(p_);
    const double fixed_prec = 1.0 / priors_.fixed_variance;
    q(0) = fixed_prec * c(0);
    q.segment(1, D_) = fixed_prec * c.segment(1, D_) + lambda() * (ktk_ * c.segment(1, D_));
    q.segment(off_site_, S_) = c.segment(off_site_, S_) / (tau_s_ * tau_s_);
    if (area_fx_) q.segment(off_area_, A_ * D_) = c.segment(off_area_, A_ * D_) / (tau_a_ * tau_a_);
    return q;
  }

  double log_coef_post(const Eigen::VectorXd& c, double loglik) const {
    return loglik - 0.5 * c.dot(prior_precision_times(c));
  }

  struct NewtonStep {
    Eigen::VectorXd mean;
    Eigen::MatrixXd dense_lower;        // small models: H = L L'
    Eigen::SparseMatrix<double> lower;  // otherwise L with P H P' = L L'
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
    double half_logdet = 0.0;
    bool ok = false;
  };

  void build_hessian_pattern() {
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < p_; ++i) trip.emplace_back(i, i, 0.0);
    for (int i = 0; i < D_; ++i)
      for (int j = 0; j <= i; ++j) trip.emplace_back(1 + i, 1 + j, 0.0);
    for (std::size_t j = 0; j < y_.size(); ++j)
      for (int a = row_start_[j]; a < row_start_[j + 1]; ++a)
        for (int b = a; b < row_start_[j + 1]; ++b) trip.emplace_back(idx_[b], idx_[a], 0.0);
    hess_.resize(p_, p_);
    hess_.setFromTriplets(trip.begin(), trip.end());
    hess_.makeCompressed();
    auto position = [&](int row, int col) {
      const int* inner = hess_.innerIndexPtr();
      const int lo = hess_.outerIndexPtr()[col], hi = hess_.outerIndexPtr()[col + 1];
      return static_cast<int>(std::lower_bound(inner + lo, inner + hi, row) - inner);
    };
    diag_pos_.resize(p_);
    for (int i = 0; i < p_; ++i) diag_pos_[i] = position(i, i);
    for (int i = 0; i < D_; ++i)
      for (int j = 0; j <= i; ++j) beta_pos_.push_back(position(1 + i, 1 + j));
    for (std::size_t j = 0; j < y_.size(); ++j)
      for (int a = row_start_[j]; a < row_start_[j + 1]; ++a)
        for (int b = a; b < row_start_[j + 1]; ++b) pair_pos_.push_back(position(idx_[b], idx_[a]));
    if (p_ > kDenseLimit) solver_.analyzePattern(hess_);
  }

  NewtonStep newton_chain(const Eigen::VectorXd& c, const Eigen::VectorXd& eta) const {
    NewtonStep s = newton(c, eta);
    for (int i = 1; i < 4 && s.ok; ++i) s = newton(s.mean, linear_predictor(s.mean));
    return s;
  }

  NewtonStep newton(const Eigen::VectorXd& c, const Eigen::VectorXd& eta) const {
    Eigen::VectorXd grad = -prior_precision_times(c);
    Eigen::SparseMatrix<double>& h = hess_;
    double* v = h.valuePtr();
    std::fill(v, v + h.nonZeros(), 0.0);
    const double fixed_prec = 1.0 / priors_.fixed_variance;
    v[diag_pos_[0]] += fixed_prec;
    for (int i = 0, k = 0; i < D_; ++i)
      for (int j = 0; j <= i; ++j, ++k) v[beta_pos_[k]] += lambda() * ktk_(i, j) + (i == j ? fixed_prec : 0.0);
    for (int s = 0; s < S_; ++s) v[diag_pos_[off_site_ + s]] += 1.0 / (tau_s_ * tau_s_);
    if (area_fx_)
      for (int i = 0; i < A_ * D_; ++i) v[diag_pos_[off_area_ + i]] += 1.0 / (tau_a_ * tau_a_);

    std::size_t pp = 0;
    for (std::size_t j = 0; j < y_.size(); ++j) {
      const double e = eta(static_cast<Eigen::Index>(j));
      double u, w;
      if (!aux_[j]) {
        const double pi = inv_logit(e);
        u = y_[j] - n_[j] * pi;
        w = n_[j] * pi * (1.0 - pi);
      } else {
        double rho, drho;
        marginal(e, tau_s_, rho, drho);
        u = (y_[j] / rho - (n_[j] - y_[j]) / (1.0 - rho)) * drho;
        w = n_[j] * drho * drho / (rho * (1.0 - rho));
      }
      for (int a = row_start_[j]; a < row_start_[j + 1]; ++a) {
        grad(idx_[a]) += u * val_[a];
        const double wa = w * val_[a];
        for (int b = a; b < row_start_[j + 1]; ++b) v[pair_pos_[pp++]] += wa * val_[b];
      }
    }
    NewtonStep step;
    if (p_ <= kDenseLimit) {
      const Eigen::MatrixXd dense = Eigen::MatrixXd(h).selfadjointView<Eigen::Lower>();
      Eigen::LLT<Eigen::MatrixXd> llt(dense);
      if (llt.info() != Eigen::Success) return step;
      step.dense_lower = llt.matrixL();
      step.mean = c + llt.solve(grad);
      step.half_logdet = step.dense_lower.diagonal().array().log().sum();
      step.ok = step.mean.allFinite() && std::isfinite(step.half_logdet);
      return step;
    }
    solver_.factorize(h);
    if (solver_.info() != Eigen::Success) return step;
    step.lower = solver_.matrixL();
    step.perm = solver_.permutationP();
    step.mean = c + solver_.solve(grad);
    step.half_logdet = 0.0;
    for (int i = 0; i < p_; ++i) step.half_logdet += std::log(step.lower.coeff(i, i));
    step.ok = step.mean.allFinite() && std::isfinite(step.half_logdet);
    return step;
  }

  Eigen::VectorXd draw_from(const NewtonStep& at, Philox& rng) const {
    Eigen::VectorXd z(p_);
    for (int i = 0; i < p_; ++i) z(i) = rng.normal();
    if (p_ <= kDenseLimit) return at.mean + at.dense_lower.transpose().triangularView<Eigen::Upper>().solve(z);
    const Eigen::VectorXd y = at.lower.transpose().triangularView<Eigen::Upper>().solve(z);
    return at.mean + at.perm.transpose() * y;
  }

  double proposal_log_density(const Eigen::VectorXd& x, const NewtonStep& at) const {
    const Eigen::VectorXd z = p_ <= kDenseLimit ? Eigen::VectorXd(at.dense_lower.transpose() * (x - at.mean))
                                                : Eigen::VectorXd(at.lower.transpose() * (at.perm * (x - at.mean)));
    return at.half_logdet - 0.5 * z.squaredNorm();
  }

  // Step-halving line search towards the Newton mean. Early warmup only.
  bool climb(const NewtonStep& here) {
    const double lp_old = log_coef_post(c_, loglik_);
    Eigen::VectorXd dir = here.mean - c_;
    for (int halving = 0; halving < 12; ++halving, dir *= 0.5) {
      const Eigen::VectorXd c_new = c_ + dir;
      const Eigen::VectorXd eta_new = linear_predictor(c_new);
      const double ll_new = log_lik(eta_new, tau_s_);
      if (!std::isfinite(ll_new) || log_coef_post(c_new, ll_new) < lp_old - 1e-9) continue;
      c_ = c_new;
      eta_ = eta_new;
      loglik_ = ll_new;
      return true;
    }
    return false;
  }

  void update_coefficients(Philox& rng, bool newton_only, bool greedy) {
    const NewtonStep here = newton(c_, eta_);
    if (!here.ok) return;
    if (newton_only) {
      climb(here);
      return;
    }
    const Eigen::VectorXd prop = draw_from(here, rng);
    const Eigen::VectorXd eta_prop = linear_predictor(prop);
    const double ll_prop = log_lik(eta_prop, tau_s_);
    ++coef_proposed_;
    bool accept = false;
    if (std::isfinite(ll_prop)) {
      const NewtonStep there = newton(prop, eta_prop);
      if (there.ok) {
        const double log_ratio = log_coef_post(prop, ll_prop) - log_coef_post(c_, loglik_) +
                                 proposal_log_density(c_, there) - proposal_log_density(prop, here);
        accept = std::log(rng.uniform()) < log_ratio;
      }
    }
    if (accept) {
      c_ = prop;
      eta_ = eta_prop;
      loglik_ = ll_prop;
      ++coef_accepted_;
    } else if (greedy) {
      climb(here);
    }
  }

  struct Hypers {
    double tau_s, tau_a, s_lambda;
  };
  Hypers hypers() const { return {tau_s_, tau_a_, s_lambda_}; }
  void set_hypers(const Hypers& h) {
    tau_s_ = h.tau_s;
    tau_a_ = h.tau_a;
    s_lambda_ = h.s_lambda;
  }

  // Log joint density of (coefficients, scales) at the current scales.
  double log_joint(const Eigen::VectorXd& c, double loglik) const {
    const double fixed_prec = 1.0 / priors_.fixed_variance;
    double norm = -S_ * std::log(tau_s_);
    for (int j = 0; j < D_; ++j) norm += 0.5 * std::log(fixed_prec + lambda() * ktk_values_(j));
    double lp = log_scale_prior(tau_s_) + log_scale_prior(s_lambda_);
    if (area_fx_) {
      norm -= A_ * D_ * std::log(tau_a_);
      lp += log_scale_prior(tau_a_);
    }
    return log_coef_post(c, loglik) + norm + lp;
  }

  // Scales and coefficients together: a random walk on the log scales followed
  // by a Newton proposal for the coefficients under the proposed scales.
  void joint_move(Philox& rng, Scale which, bool warmup, int iter, bool independent) {
    const int slot = static_cast<int>(which);
    double& step = joint_step_[slot];
    const Hypers old = hypers();
    Hypers prop = old;
    double* target = which == Scale::Site ? &prop.tau_s : which == Scale::Area ? &prop.tau_a : &prop.s_lambda;
    const double x_old = std::log(*target);
    double log_q_ratio = 0.0;
    if (independent) {
      const auto [m, sd] = independence_proposal(slot);
      const double x_new = m + sd * student_t4(rng);
      *target = std::exp(x_new);
      log_q_ratio = t4_log_density((x_old - m) / sd) - t4_log_density((x_new - m) / sd);
    } else {
      *target *= std::exp(step * rng.normal());
    }

    const double lp_old = log_joint(c_, loglik_);
    set_hypers(prop);
    bool accept = false;
    Eigen::VectorXd c_new, eta_new;
    double ll_new = kNegInf;
    const NewtonStep fwd = newton_chain(c_, eta_);
    if (fwd.ok) {
      c_new = draw_from(fwd, rng);
      eta_new = linear_predictor(c_new);
      ll_new = log_lik(eta_new, prop.tau_s);
      if (std::isfinite(ll_new)) {
        const double lp_new = log_joint(c_new, ll_new);
        const double log_fwd = proposal_log_density(c_new, fwd);
        set_hypers(old);
        const NewtonStep rev = newton_chain(c_new, eta_new);
        if (rev.ok) {
          const double log_ratio = lp_new - lp_old + proposal_log_density(c_, rev) - log_fwd + log_q_ratio;
          accept = std::log(rng.uniform()) < log_ratio;
        }
      }
    }
    if (accept) {
      set_hypers(prop);
      c_ = std::move(c_new);
      eta_ = std::move(eta_new);
      loglik_ = ll_new;
    } else {
      set_hypers(old);
    }
    if (warmup && !independent) {
      const double gain = std::min(0.1, 1.0 / std::sqrt(iter + 1.0));
      step = std::clamp(step * std::exp(gain * ((accept ? 1.0 : 0.0) - 0.3)), 1e-3, 3.0);
    }
  }

  // Log scales seen over the second half of warmup feed a heavy-tailed
  // independence proposal for the sampling phase.
  void track_scales() {
    const double x[3] = {std::log(tau_s_), std::log(tau_a_), std::log(s_lambda_)};
    ++tracked_;
    for (int j = 0; j < 3; ++j) {
      const double d = x[j] - track_mean_[j];
      track_mean_[j] += d / tracked_;
      track_m2_[j] += d * (x[j] - track_mean_[j]);
    }
  }

  std::pair<double, double> independence_proposal(int slot) const {
    const double var = tracked_ > 1 ? track_m2_[slot] / (tracked_ - 1) : 0.0;
    return {track_mean_[slot], 1.5 * std::sqrt(std::max(var, 1e-4))};
  }

  static double student_t4(Philox& rng) {
    const double chi2 = -2.0 * std::log(rng.uniform() * rng.uniform());
    return rng.normal() / std::sqrt(chi2 / 4.0);
  }

  static double t4_log_density(double z) { return -2.5 * std::log1p(z * z / 4.0); }

  double log_scale_prior(double s) const {
    return half_t_log_pdf(s, priors_.scale_dof, priors_.scale_scale) + std::log(s);  // log-scale Jacobian
  }

  double log_beta_prior(const Eigen::VectorXd& beta, double lam) const {
    const double fixed_prec = 1.0 / priors_.fixed_variance;
    double logdet = 0.0;
    for (int j = 0; j < D_; ++j) logdet += std::log(fixed_prec + lam * ktk_values_(j));
    return 0.5 * logdet - 0.5 * (fixed_prec * beta.squaredNorm() + lam * beta.dot(ktk_ * beta));
  }

  static double log_normal_block(const Eigen::VectorXd& b, double tau) {
    return -static_cast<double>(b.size()) * std::log(tau) - 0.5 * b.squaredNorm() / (tau * tau);
  }

  void scale_move(Philox& rng, Scale which, bool rescale, bool warmup, int iter) {
    const int slot = static_cast<int>(which) * 2 + (rescale ? 1 : 0);
    double& step = step_[slot];
    const double g = std::exp(step * rng.normal());
    double log_ratio = 0.0;
    Eigen::VectorXd c_new = c_;
    double tau_s_new = tau_s_, tau_a_new = tau_a_, s_lambda_new = s_lambda_;

    switch (which) {
      case Scale::Site: {
        tau_s_new = tau_s_ * g;
        log_ratio += log_scale_prior(tau_s_new) - log_scale_prior(tau_s_);
        const auto b = c_.segment(off_site_, S_);
        if (rescale) {
          c_new.segment(off_site_, S_) = g * b;  // prior terms cancel the Jacobian
        } else {
          log_ratio += log_normal_block(b, tau_s_new) - log_normal_block(b, tau_s_);
        }
        break;
      }
      case Scale::Area: {
        tau_a_new = tau_a_ * g;
        log_ratio += log_scale_prior(tau_a_new) - log_scale_prior(tau_a_);
        const auto b = c_.segment(off_area_, A_ * D_);
        if (rescale) {
          c_new.segment(off_area_, A_ * D_) = g * b;
        } else {
          log_ratio += log_normal_block(b, tau_a_new) - log_normal_block(b, tau_a_);
        }
        break;
      }
      case Scale::Smooth: {
        s_lambda_new = s_lambda_ * g;
        const double lam_old = lambda();
        const double lam_new = 1.0 / (s_lambda_new * s_lambda_new);
        log_ratio += log_scale_prior(s_lambda_new) - log_scale_prior(s_lambda_);
        const Eigen::VectorXd beta = c_.segment(1, D_);
        Eigen::VectorXd beta_new = beta;
        if (rescale) {
          // Scale the penalised eigen-components of beta by g.
          Eigen::VectorXd u = ktk_vectors_.transpose() * beta;
          for (int j : penalised_dims_) u(j) *= g;
          beta_new = ktk_vectors_ * u;
          c_new.segment(1, D_) = beta_new;
          log_ratio += static_cast<double>(penalised_dims_.size()) * std::log(g);
        }
        log_ratio += log_beta_prior(beta_new, lam_new) - log_beta_prior(beta, lam_old);
        break;
      }
    }

    Eigen::VectorXd eta_new;
    double ll_new = loglik_;
    const bool lik_changes = rescale || (which == Scale::Site && any_aux_);
    if (lik_changes) {
      eta_new = rescale ? linear_predictor(c_new) : eta_;
      ll_new = log_lik(eta_new, tau_s_new);
      log_ratio += ll_new - loglik_;
    }
    const bool accept = std::isfinite(log_ratio) && std::log(rng.uniform()) < log_ratio;
    if (accept) {
      c_ = std::move(c_new);
      tau_s_ = tau_s_new;
      tau_a_ = tau_a_new;
      s_lambda_ = s_lambda_new;
      if (lik_changes) {
        eta_ = std::move(eta_new);
        loglik_ = ll_new;
      }
    }
    if (warmup) {
      const double gain = std::min(0.1, 1.0 / std::sqrt(iter + 1.0));
      step = std::clamp(step * std::exp(gain * ((accept ? 1.0 : 0.0) - 0.44)), 1e-3, 3.0);
    }
  }

  GlmmPriors priors_;
  int D_, S_, A_;
  bool area_fx_;
  int off_site_ = 0, off_area_ = 0, p_ = 0;
  std::vector<int> row_start_, idx_;
  std::vector<double> val_;
  std::vector<int> y_, n_;
  std::vector<char> aux_;
  bool any_aux_ = false;
  Eigen::MatrixXd ktk_, ktk_vectors_;
  Eigen::VectorXd ktk_values_;
  std::vector<int> penalised_dims_;
  std::vector<double> gh_z_, gh_w_;
  mutable Eigen::SparseMatrix<double> hess_;
  mutable Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> solver_;
  std::vector<int> diag_pos_, beta_pos_, pair_pos_;

  Eigen::VectorXd c_, eta_;
  double tau_s_ = 0.3, tau_a_ = 0.3, s_lambda_ = 1.0;
  double loglik_ = 0.0;
  double joint_step_[3] = {0.3, 0.3, 0.3};
  int warmup_len_ = 0;
  long tracked_ = 0;
  double track_mean_[3] = {0, 0, 0};
  double track_m2_[3] = {0, 0, 0};
  double step_[6] = {0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  long coef_accepted_ = 0, coef_proposed_ = 0;
};

}  // namespace

ChainDiagnostics diagnose(const GlmmDraws& draws, const McmcOptions& options) {
  ChainDiagnostics diag;
  diag.names = draws.columns;
  diag.n_chains = draws.n_chains;
  diag.n_iter = draws.per_chain;
  diag.max_rhat = 0.0;
  diag.min_ess = INFINITY;
  for (Eigen::Index col = 0; col < draws.values.cols(); ++col) {
    ChainSet chains(draws.n_chains, std::vector<double>(draws.per_chain));
    for (int c = 0; c < draws.n_chains; ++c)
      for (int i = 0; i < draws.per_chain; ++i) chains[c][i] = draws.values(c * draws.per_chain + i, col);
    double rhat = 1.0, ess = static_cast<double>(draws.size());
    if (draws.per_chain >= 4) {
      const ChainSet z = rank_normalize(chains);
      rhat = split_rhat(z);
      ess = effective_sample_size(z);
    }
    diag.rhat.push_back(rhat);
    diag.ess.push_back(ess);
    diag.max_rhat = std::max(diag.max_rhat, std::isnan(rhat) ? INFINITY : rhat);
    diag.min_ess = std::min(diag.min_ess, ess);
  }
  diag.converged = diag.max_rhat < options.rhat_max && diag.min_ess > options.ess_min;
  return diag;
}

GlmmFit fit_glmm(const SurveillanceDataset& data, const SplineBasis& basis, const McmcOptions& options, Philox rng,
                 const GlmmPriors& priors) {
  if (options.n_chains < 1 || options.n_iter <= options.warmup || options.warmup < 0)
    throw ValidationError("MCMC options need n_chains >= 1 and n_iter > warmup >= 0");
  if (data.records.empty()) throw ValidationError("fit_glmm: no records");
  GlmmFit fit;
  fit.basis = basis;
  fit.design = GlmmDesign::from_dataset(data, basis);

  const int block = options.n_iter - options.warmup;
  auto names = Sampler(fit.design, basis, priors, options).column_names();
  fit.draws.columns = names;
  fit.draws.n_chains = options.n_chains;
  fit.draws.n_basis = basis.n_basis();
  fit.draws.n_sites = static_cast<int>(fit.design.sites.size());
  fit.draws.n_areas = static_cast<int>(fit.design.areas.size());
  fit.draws.area_effects = fit.design.area_effects;

  const std::uint64_t base_key = rng.key();
  const auto n_chains = static_cast<std::size_t>(options.n_chains);
  const auto n_cols = static_cast<Eigen::Index>(names.size());
  std::vector<std::optional<Sampler>> samplers(n_chains);
  std::vector<Philox> chain_rngs;
  for (std::size_t c = 0; c < n_chains; ++c) chain_rngs.push_back(substream(base_key, "chain:" + std::to_string(c)));
  std::vector<Eigen::MatrixXd> chain_draws(n_chains);

  for (int extension = 0;; ++extension) {
    parallel_for(n_chains, options.workers, [&](std::size_t chain) {
      Philox& chain_rng = chain_rngs[chain];
      int start = 0;
      if (!samplers[chain]) {
        samplers[chain].emplace(fit.design, basis, priors, options);
        samplers[chain]->initialise(chain_rng);
        for (; start < options.warmup; ++start) samplers[chain]->iterate(chain_rng, true, start);
      }
      Eigen::MatrixXd& out = chain_draws[chain];
      const Eigen::Index offset = out.rows();
      out.conservativeResize(offset + block, n_cols);
      for (int i = 0; i < block; ++i) {
        samplers[chain]->iterate(chain_rng, false, options.warmup + static_cast<int>(offset) + i);
        samplers[chain]->record(out.row(offset + i));
      }
    });
    const Eigen::Index per_chain = chain_draws[0].rows();
    fit.draws.per_chain = static_cast<int>(per_chain);
    fit.draws.values.resize(static_cast<Eigen::Index>(n_chains) * per_chain, n_cols);
    for (std::size_t c = 0; c < n_chains; ++c)
      fit.draws.values.middleRows(static_cast<Eigen::Index>(c) * per_chain, per_chain) = chain_draws[c];
    if (extension >= options.max_extensions || diagnose(fit.draws, options).converged) break;
  }
  std::vector<long> accepted(n_chains), proposed(n_chains);
  for (std::size_t c = 0; c < n_chains; ++c) {
    accepted[c] = samplers[c]->accepted();
    proposed[c] = samplers[c]->proposed();
  }

  fit.diagnostics = diagnose(fit.draws, options);
  const double acc = std::accumulate(accepted.begin(), accepted.end(), 0.0);
  const double prop = std::accumulate(proposed.begin(), proposed.end(), 0.0);
  fit.diagnostics.coefficient_acceptance = prop > 0 ? acc / prop : 0.0;
  return fit;
}

Eigen::MatrixXd area_prevalence_draws(const GlmmFit& fit, const std::string& area_id, int quadrature_order) {
  const int a = fit.design.area_index(area_id);
  const auto gh = gauss_hermite_normal(quadrature_order);
  const int n_years = fit.basis.n_years();
  const std::size_t n = fit.draws.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), n_years);
  for (std::size_t i = 0; i < n; ++i) {
    const GLMMState s = fit.draws.state(i);
    Eigen::VectorXd coef = s.beta;
    if (fit.draws.area_effects) coef += s.b_area.row(a).transpose();
    const Eigen::VectorXd eta = (fit.basis.basis_matrix * coef).array() + s.beta0;
    for (int t = 0; t < n_years; ++t) {
      double rho = 0.0;
      for (std::size_t k = 0; k < gh.nodes.size(); ++k) rho += gh.weights[k] * inv_logit(eta(t) + s.tau_site * gh.nodes[k]);
      out(static_cast<Eigen::Index>(i), t) = rho;
    }
  }
  return out;
}

AreaPosterior moments_from_draws(const std::string& area_id, std::vector<int> years, const Eigen::MatrixXd& draws) {
  if (draws.rows() < 1) throw ValidationError("no draws for area posterior");
  AreaPosterior post;
  post.area_id = area_id;
  post.years = std::move(years);
  post.mu = draws.colwise().mean().transpose();
  const Eigen::MatrixXd centred = draws.rowwise() - post.mu.transpose();
  if (draws.rows() > 1) {
    post.sigma = (centred.transpose() * centred) / static_cast<double>(draws.rows() - 1);
  } else {
    post.sigma = Eigen::MatrixXd::Zero(draws.cols(), draws.cols());
  }
  post.sigma = 0.5 * (post.sigma + post.sigma.transpose());
  return post;
}

AreaPosterior extract_area_posterior(const GlmmFit& fit, const std::string& area_id, PosteriorScale scale,
                                     int quadrature_order, bool force) {
  if (!fit.converged() && !force) throw NumericalError("GLMM fit is not converged; refusing to extract " + area_id);
  Eigen::MatrixXd draws = area_prevalence_draws(fit, area_id, quadrature_order);

  ChainSet chains(fit.draws.n_chains, std::vector<double>(fit.draws.per_chain));
  double min_ess = INFINITY;
  if (fit.draws.per_chain >= 4) {
    for (Eigen::Index t = 0; t < draws.cols(); ++t) {
      for (int c = 0; c < fit.draws.n_chains; ++c)
        for (int i = 0; i < fit.draws.per_chain; ++i) chains[c][i] = draws(c * fit.draws.per_chain + i, t);
      min_ess = std::min(min_ess, effective_sample_size(rank_normalize(chains)));
    }
  } else {
    min_ess = static_cast<double>(draws.rows());
  }
  if (min_ess < 100.0 && !force)
    throw NumericalError("area " + area_id + " has fewer than 100 effective draws");

  if (scale == PosteriorScale::Probit) draws = draws.unaryExpr([](double p) { return normal_quantile(p); });
  std::vector<int> years(fit.basis.n_years());
  std::iota(years.begin(), years.end(), fit.basis.first_year);
  return moments_from_draws(area_id, std::move(years), draws);
}

}  // namespace hivaug
