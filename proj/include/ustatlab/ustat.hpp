#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ustatlab/chain.hpp"
#include "ustatlab/kernels.hpp"

namespace ustatlab {

enum class Centering { none, pi_expectation, joint_expectation };
enum class Normalization { raw, pairs };

std::string to_string(Centering c);
Centering parse_centering(const std::string& s);
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

/// Sum over i < j of the per-pair centers; subtracted from the raw pair sum.
struct CenteringTerm {
  Centering kind = Centering::none;
  double total = 0.0;
  /// Monte Carlo standard error of `total` (0 when exact).
  double standard_error = 0.0;
  bool exact = true;
};

/// Sum_{i<j} E_{pi x pi} h_{i,j}, exact on S states.
CenteringTerm pi_centering(const KernelFamily& kernel, const Vector& pi);
/// Same by plug-in over pairs (s_k, s_{k + N/2}) of a pi sample.
CenteringTerm pi_centering(const KernelFamily& kernel,
                           const std::vector<std::vector<double>>& pi_sample);
/// Sum_{i<j} E h_{i,j}(X_i, X_j) under the chain's law, via chi P^{i-1} and
/// transition powers. `initial` empty means stationary.
CenteringTerm joint_centering(const FiniteChain& chain, const Vector& initial,
                              const KernelFamily& kernel);
/// Plug-in mean of the raw pair sum over `budget` independent paths.
CenteringTerm joint_centering(const ChainModel& model, const InitialLaw& initial,
                              const KernelFamily& kernel, std::size_t budget, std::uint64_t seed);

struct CenteringOptions {
  std::size_t mc_budget = 0;
  std::uint64_t mc_seed = 0;
  InitialLaw initial = InitialLaw::stationary();
};

/// Dispatches on the model: exact on finite chains, Monte Carlo otherwise
/// (throws std::invalid_argument when no budget is given).
CenteringTerm make_centering(const ChainModel& model, const KernelFamily& kernel, Centering kind,
                             const CenteringOptions& options = {});

struct UStatResult {
  double value = 0.0;
  double standard_error = 0.0;
  Centering centering = Centering::none;
  std::size_t n = 0;
  Normalization normalization = Normalization::raw;
};

/// Sum_{i<j} h_{i,j}(X_i, X_j) with a fixed summation order.
double raw_pair_sum(const ChainPath& path, const KernelFamily& kernel);

/// Throws if the path length differs from the kernel horizon.
UStatResult u_stat(const ChainPath& path, const KernelFamily& kernel, const CenteringTerm& center,
                   Normalization normalization = Normalization::raw);

struct DecompositionResult {
  double M = 0.0;
  double R = 0.0;
  std::size_t t_n = 0;
  /// levels[k-1] = sum_{i<j} (E_{j-k+1} - E_{j-k}) h_{i,j}.
  std::vector<double> levels;
  /// Joint-expectation centered U-statistic of the same path.
  double u_stat = 0.0;
};

/// U = M + R with exact conditional expectations on a finite chain.
/// `initial` is the law of X_1 (empty = stationary).
DecompositionResult martingale_decomposition(const FiniteChain& chain, const Vector& initial,
                                             const ChainPath& path, const KernelFamily& kernel,
                                             std::size_t t_n);

/// |E_{j-1}[Y_j]| for j = 2..n with Y_j = sum_{i<j} h0(X_i, X_{j-1}, X_j),
/// h0(x, y, z) = h(x, z) - sum_w h(x, w) P(y, w); entry j-2 holds index j.
std::vector<double> martingale_increment_residuals(const FiniteChain& chain, const ChainPath& path,
                                                   const KernelFamily& kernel);

/// Kendall's tau; throws on ties or n < 2.
double tau_kendall(std::span<const double> x);
/// Average-precision correlation; throws on ties or n < 2.
double tau_ap(std::span<const double> x);
/// h_{i,j}(x, y) = 1{x < y} / (j - 1) as a separable family.
KernelFamily tau_ap_kernel(std::size_t n);
/// Weighted two-sample Wilcoxon statistic with h = 1/2 1{x<y} + 1/2 1{x<=y}.
double wilcoxon_weighted(std::span<const double> sample0, std::span<const double> sample1,
                         std::span<const double> weights0, std::span<const double> weights1);

/// `statistic,n,seed,centering,value,stderr`
std::string statistic_csv_header();
std::string statistic_csv_row(const std::string& statistic, std::size_t n, std::uint64_t seed,
                              const std::string& centering, double value, double stderr_value);

}  // namespace ustatlab
