#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ustatlab/chain.hpp"

namespace ustatlab {

/// Split chain with m = 1. The bell R_t is drawn before X~_{t+1}: on a ring
/// X~_{t+1} ~ mu, otherwise X~_{t+1} ~ (P(X~_t, .) - delta mu) / (1 - delta).
struct SplitTrace {
  std::vector<std::size_t> path;     // X~_1..X~_n
  std::vector<std::uint8_t> bells;   // R_1..R_n
  std::vector<std::size_t> regen_times;
  /// Complete blocks Y_i = X~_{S_i + 1}..X~_{S_{i+1}} as 1-based [first, last].
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

/// (P - delta mu) / (1 - delta); throws when delta = 1 or an entry is negative.
Matrix residual_kernel(const Matrix& P, double delta, const Vector& mu);

/// max |delta mu(y) + (1 - delta) residual(x, y) - P(x, y)|.
double reconstruction_error(const Matrix& P, double delta, const Vector& mu);

/// X~_1 follows the chain's initial law (pi when stationary).
SplitTrace split_simulate(const FiniteChain& chain, const ErgodicityConstants& constants, std::size_t n,
                          std::uint64_t seed, std::uint64_t stream_id = 0);

/// T_1 = first ring, then the gaps between rings. Throws when no bell rang.
std::vector<std::size_t> regeneration_times(const SplitTrace& trace);

struct OrliczEstimate {
  double tau_hat = 0.0;
  std::size_t sample_size = 0;
  double lower = 0.0;
  double upper = 0.0;
  /// Sample mean of exp(|T| / tau_hat).
  double moment = 0.0;
};

/// Empirical psi_1 norm: smallest gamma with mean exp(|T| / gamma) <= 2, by
/// bisection on [max / 50, 50 max] to relative 1e-6. Needs >= 1000 samples.
OrliczEstimate orlicz_norm_estimate(std::span<const double> samples);

struct BlockSummary {
  std::vector<double> sums;
  double mean = 0.0;
  double standard_error = 0.0;
};

BlockSummary block_sums(const SplitTrace& trace, const std::function<double(std::size_t)>& f);

struct TailFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  std::size_t points = 0;
};

/// Least-squares line through log P^(T > t) over t with at least
/// `min_count` exceedances.
TailFit geometric_tail_fit(std::span<const std::size_t> times, std::size_t min_count = 30);

/// `step,state,bell`
std::string split_trace_csv(const SplitTrace& trace);
/// {delta1, n_regen, mean_T, tau_hat}
nlohmann::ordered_json regeneration_summary(const SplitTrace& trace);

}  // namespace ustatlab
