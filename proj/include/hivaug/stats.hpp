#pragma once

#include <functional>
#include <span>
#include <vector>

namespace hivaug {

double normal_cdf(double x);
double normal_quantile(double p);
double normal_log_pdf(double x, double mean, double variance);
double log_sum_exp(std::span<const double> values);

double inv_logit(double x);
double logit(double p);

// Log density of a half Student-t with the given degrees of freedom and scale
// on x > 0 (normalised over the positive half line).
double half_t_log_pdf(double x, double dof, double scale);

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// n-point Gauss-Legendre rule on [lo, hi].
QuadratureRule gauss_legendre(int n, double lo, double hi);

// n-point Gauss-Hermite rule for expectations under N(0, 1): weights sum to 1.
QuadratureRule gauss_hermite_normal(int n);

// Sample quantile with linear interpolation between order statistics
// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double prob);

double effective_sample_size(std::span<const double> normalized_weights);

// Asymptotic two-sided Kolmogorov-Smirnov test against U(0, 1).
struct KsResult {
  double statistic;
  double p_value;
};
KsResult ks_uniform(std::vector<double> values);

double spearman_correlation(std::span<const double> x, std::span<const double> y);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Every index is
// processed exactly once; results must go to per-index slots.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// Worker count: HIVAUG_WORKERS overrides `configured` when set.
int resolve_workers(int configured);

}  // namespace hivaug
