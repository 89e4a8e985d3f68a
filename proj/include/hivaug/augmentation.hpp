#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hivaug/data.hpp"
#include "hivaug/glmm.hpp"
#include "hivaug/rng.hpp"
#include "hivaug/spline.hpp"

namespace hivaug {

struct GaussianKL {
  double divergence = 0.0;
  double condition_p = 1.0;  // condition numbers after jitter
  double condition_q = 1.0;
};

// D(P || Q) for multivariate normals. Both covariances get
// 1e-8 * mean(diag) added to the diagonal first.
GaussianKL gaussian_kl_report(const Eigen::VectorXd& p_mean, const Eigen::MatrixXd& p_cov,
                              const Eigen::VectorXd& q_mean, const Eigen::MatrixXd& q_cov);
double gaussian_kl(const Eigen::VectorXd& p_mean, const Eigen::MatrixXd& p_cov, const Eigen::VectorXd& q_mean,
                   const Eigen::MatrixXd& q_cov);

struct AuxiliaryDataset {
  std::string area_id;
  int k = 0;
  std::vector<SurveillanceRecord> records;

  SurveillanceDataset to_dataset() const { return {records, {}}; }
};

std::string aux_site_id(const std::string& area_id);

// One pseudo-record per posterior year: positive = round-half-even(K mu_t).
AuxiliaryDataset make_auxiliary(const AreaPosterior& area_post, int k);

inline const std::vector<int> kDefaultKGrid{25, 50, 100, 200, 400, 800, 1600, 3200};

struct KLEntry {
  int k = 0;  // 0 is the no-augmentation baseline
  double kl = 0.0;
  bool converged = false;
  bool selected = false;
  double condition_p = 1.0;
  double condition_q = 1.0;
  double trace_q = 0.0;  // trace of the refit covariance
};

struct KLReport {
  std::string area_id;
  std::vector<KLEntry> entries;  // baseline first, then the grid in order
  int selected_k = 0;
  double selected_kl = 0.0;

  const KLEntry& entry(int k) const;
};

inline McmcOptions refit_defaults() {
  McmcOptions o;
  o.n_iter = 1500;
  o.warmup = 500;
  o.max_extensions = 2;
  return o;
}

struct KSelectionOptions {
  std::vector<int> grid = kDefaultKGrid;
  McmcOptions mcmc = refit_defaults();
  PosteriorScale scale = PosteriorScale::Natural;
  GlmmPriors priors;
  bool include_baseline = true;
  int workers = 1;
};

struct KSelection {
  KLReport report;
  AuxiliaryDataset auxiliary;
};

// Refits the single-area spline model to area data plus auxiliary(K) for each
// K in the grid and keeps the K whose refit posterior is closest in KL to
// area_post. Unconverged refits are excluded. area_post (natural scale) builds
// the pseudo-data; `reference`, if given, is the full posterior on
// options.scale that refits are compared against.
KSelection select_k(const SurveillanceDataset& area_data, const AreaPosterior& area_post, const SplineBasis& basis,
                    const KSelectionOptions& options, std::uint64_t seed, const AreaPosterior* reference = nullptr);

}  // namespace hivaug
