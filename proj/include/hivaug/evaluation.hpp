#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hivaug/augmentation.hpp"
#include "hivaug/data.hpp"
#include "hivaug/dynamics.hpp"
#include "hivaug/glmm.hpp"
#include "hivaug/inference.hpp"
#include "hivaug/likelihood.hpp"
#include "hivaug/rng.hpp"

namespace hivaug {

// Train/test assignment for one replicate; in_training is aligned with the
// dataset's records. NPBS points always stay in training.
struct SplitPlan {
  int replicate = 0;
  std::uint64_t seed = 0;
  std::vector<char> in_training;

  SurveillanceDataset training(const SurveillanceDataset& data) const;
  SurveillanceDataset testing(const SurveillanceDataset& data) const;
  bool operator==(const SplitPlan&) const = default;
};

// Per site: shuffle, ceil(n / 2) observations to training, the rest to test.
std::vector<SplitPlan> make_splits(const SurveillanceDataset& data, int n_replicates, std::uint64_t seed);

enum class PointPredictor { Median, Mean };

// One posterior draw as the predictive model needs it.
struct PredictiveDraw {
  Trajectory trajectory;
  double alpha = 0.0;
  std::vector<double> sigma2_nodes;
  std::vector<double> node_probabilities;
  // site id -> (sum 1/nu, sum residual/nu) from the training data
  std::map<std::string, std::pair<double, double>> sites;
};

struct Prediction {
  SurveillanceRecord record;
  double observed = 0.0;  // percent
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

class PredictiveModel {
 public:
  explicit PredictiveModel(std::vector<PredictiveDraw> draws);
  // Draws from an EPP fit; the likelihood must be built from its training data.
  PredictiveModel(const EppFit& fit, const AreaLikelihood& training_likelihood);

  // Simulated observed prevalence (percent) for the record's site-year,
  // `replicates` values per posterior draw.
  std::vector<double> simulate(const SurveillanceRecord& record, Philox& rng, int replicates = 1) const;
  Prediction predict(const SurveillanceRecord& record, Philox& rng, PointPredictor point = PointPredictor::Median,
                     int replicates = 1, double level = 0.95) const;
  // Mid-rank predictive quantile of the observed value.
  double quantile(const SurveillanceRecord& record, Philox& rng, int replicates = 1) const;

  std::size_t size() const { return draws_.size(); }

 private:
  std::vector<PredictiveDraw> draws_;
  std::vector<std::vector<double>> node_cdf_;
};

// Quantile of `observed` within simulated values: (#below + #equal / 2) / n.
double predictive_quantile(std::vector<double> simulated, double observed);

struct CVMetrics {
  double mae = 0.0;       // percentage points
  double width = 0.0;     // percentage points
  double coverage = 0.0;  // fraction
  std::size_t n = 0;
};

struct CVReport {
  std::string model;
  CVMetrics overall;
  std::map<std::string, CVMetrics> by_area;
  double runtime_seconds = 0.0;
};

CVReport score(const std::vector<Prediction>& predictions, const std::string& model = "");

// (augmented - independent) / independent MAE per area present in both.
std::map<std::string, double> relative_mae_change(const CVReport& independent, const CVReport& augmented);

std::vector<double> ppc_quantiles(const PredictiveModel& model, const std::vector<SurveillanceRecord>& observed,
                                  Philox& rng, int replicates = 1);

struct CrossValidationOptions {
  int n_replicates = 1;
  EppFitOptions epp;
  McmcOptions glmm;
  GlmmPriors glmm_priors;
  int n_basis = 7;
  KSelectionOptions k_selection;
  PointPredictor point = PointPredictor::Median;
  int predictive_replicates = 1;
  bool force = false;  // accept an unconverged cross-area fit
  int workers = 1;
};

struct ReplicateResult {
  SplitPlan plan;
  ChainDiagnostics glmm_diagnostics;
  std::vector<KLReport> kl;  // one per area
  std::vector<Prediction> independent_predictions, augmented_predictions;
  CVReport independent, augmented;
};

struct CrossValidationResult {
  std::vector<ReplicateResult> replicates;
  CVReport independent, augmented;  // pooled over replicates
};

CrossValidationResult run_crossval(const SurveillanceDataset& data, const DemographicSchedule& demog,
                                   const CrossValidationOptions& options, std::uint64_t seed);

}  // namespace hivaug
