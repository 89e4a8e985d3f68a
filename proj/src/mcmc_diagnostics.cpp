#include "hivaug/mcmc_diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hivaug/stats.hpp"

namespace hivaug {

namespace {

void check(const ChainSet& chains, std::size_t min_len) {
  if (chains.empty()) throw std::invalid_argument("no chains");
  for (const auto& c : chains)
    if (c.size() != chains.front().size() || c.size() < min_len)
      throw std::invalid_argument("chains must be equal length and long enough");
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double variance(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

}  // namespace

double split_rhat(const ChainSet& chains) {
  check(chains, 4);
  const std::size_t half = chains.front().size() / 2;
  std::vector<std::span<const double>> parts;
  for (const auto& c : chains) {
    parts.emplace_back(c.data(), half);
    parts.emplace_back(c.data() + c.size() - half, half);
  }
  const double n = static_cast<double>(half);
  std::vector<double> means, vars;
  for (auto p : parts) {
    means.push_back(mean(p));
    vars.push_back(variance(p));
  }
  const double w = mean(vars);
  const double b = n * variance(means);
  if (w <= 0) return (b <= 0) ? 1.0 : INFINITY;
  const double var_plus = (n - 1) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const ChainSet& chains) {
  check(chains, 4);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double total = static_cast<double>(m * n);

  std::vector<double> chain_mean(m), chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    chain_mean[c] = mean(chains[c]);
    chain_var[c] = variance(chains[c]);
  }
  const double w = mean(chain_var);
  const double b_over_n = m > 1 ? variance(chain_mean) : 0.0;
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  if (!(var_plus > 0)) return total;

  auto autocov = [&](std::size_t c, std::size_t lag) {
    const auto& x = chains[c];
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - chain_mean[c]) * (x[i + lag] - chain_mean[c]);
    return s / n;
  };
  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocov(c, lag);
    acov /= m;
    // Rescale the biased per-chain autocovariance at lag 0 to the unbiased
    // chain variance, as the combined estimator expects.
    const double acov0 = w * (n - 1.0) / n;
    return 1.0 - (acov0 - acov) / var_plus;
  };

  // Geyer: sum consecutive pairs while positive, enforcing monotonicity.
  double tau = -1.0;
  double prev_pair = INFINITY;
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  if (!(tau > 0)) return total;
  return std::min(total, total / tau);
}

ChainSet rank_normalize(const ChainSet& chains) {
  check(chains, 1);
  const std::size_t n = chains.front().size();
  const std::size_t total = chains.size() * n;
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(total);
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) pooled.emplace_back(chains[c][i], c * n + i);
  std::sort(pooled.begin(), pooled.end());
  ChainSet out(chains.size(), std::vector<double>(n));
  for (std::size_t lo = 0; lo < total;) {
    std::size_t hi = lo;
    while (hi + 1 < total && pooled[hi + 1].first == pooled[lo].first) ++hi;
    const double rank = 0.5 * (lo + hi) + 1.0;
    const double z = normal_quantile((rank - 0.375) / (total + 0.25));
    for (std::size_t k = lo; k <= hi; ++k) out[pooled[k].second / n][pooled[k].second % n] = z;
    lo = hi + 1;
  }
  return out;
}

}  // namespace hivaug
