#pragma once

#include <span>
#include <vector>

namespace hivaug {

// chains[c][i] is iteration i of chain c; all chains the same length.
using ChainSet = std::vector<std::vector<double>>;

// Split-chain potential scale reduction factor.
double split_rhat(const ChainSet& chains);

// Multi-chain effective sample size with Geyer's initial monotone sequence
// estimator, capped at the total number of draws.
double effective_sample_size(const ChainSet& chains);

// Replaces every draw by the normal score of its pooled rank (average ranks
// for ties), making R-hat and ESS invariant to monotone transforms and robust
// to heavy tails.
ChainSet rank_normalize(const ChainSet& chains);

}  // namespace hivaug
