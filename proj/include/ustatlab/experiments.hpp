#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ustatlab/bounds.hpp"
#include "ustatlab/chain.hpp"
#include "ustatlab/kernels.hpp"
#include "ustatlab/ustat.hpp"

namespace ustatlab {

/// Runs fn(0..count-1) on up to `threads` workers. Each index writes its own
/// slot, so results never depend on the worker count.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

std::size_t default_threads();

/// Stream id of replicate r at horizon n.
std::uint64_t replicate_stream(std::size_t n, std::size_t replicate);

enum class Statistic { ustat, decomposition_check, block_mean, tail, rate };
std::string to_string(Statistic s);

struct ExperimentPlan {
  ChainModel model;
  /// Horizon is reset per n.
  KernelFamily kernel = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 2);
  std::vector<std::size_t> n_grid;
  std::size_t replicates = 100;
  std::vector<double> u_grid;
  std::uint64_t seed = 1;
  Centering centering = Centering::joint_expectation;
  InitialLaw initial = InitialLaw::stationary();
  Statistic statistic = Statistic::tail;
  std::size_t threads = 1;
  /// Supplied beta; when empty it is picked from a grid.
  std::optional<double> beta = 1.0;
  double kappa = 1.0;
  bool calibrate = true;
  /// u excluded from the calibration; defaults to the largest u.
  std::optional<double> held_out_u;
  /// Monte Carlo budget for centering on continuous models.
  std::size_t mc_budget = 0;
  std::optional<double> r;
  double rate_quantile = 0.99;
};

struct QuantileCell {
  std::size_t n = 0;
  double u = 0.0;
  double level = 0.0;
  bool skipped = false;
  double quantile = 0.0;
  double bound_T1a = 0.0;
  double bound_T1b = 0.0;
  double bound_T2 = 0.0;
  double ratio_T1a = 0.0;
  double ratio_T1b = 0.0;
  double ratio_T2 = 0.0;
  bool held_out = false;
};

struct SlopeFit {
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
  std::vector<double> quantiles;
};

struct ExperimentReport {
  std::string kind;
  nlohmann::ordered_json summary;
  /// Output file name -> contents; every entry is a deterministic function of the plan.
  std::map<std::string, std::string> files;
  std::vector<QuantileCell> cells;
  std::optional<SlopeFit> unweighted;
  std::optional<SlopeFit> weighted;
  bool passed = true;
  std::vector<std::string> failures;
  /// Not part of `files`; written separately so reports stay byte-stable.
  double wall_seconds = 0.0;
};

/// Writes every file plus summary.json into `dir`, and timing.json apart.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// Inverse empirical CDF: sorted[ceil(level * m) - 1].
double empirical_quantile(std::vector<double> values, double level);

/// min ||A x - b||_2 subject to x >= 0 (Lawson-Hanson active set).
Vector nnls(const Matrix& A, const Vector& b, std::size_t max_iterations = 500);

/// Ordinary least squares slope of y on x with its standard error.
SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Per-replicate statistic at horizon n, in replicate order.
std::vector<double> replicate_statistics(const ExperimentPlan& plan, const KernelFamily& kernel, std::size_t n,
                                         Normalization normalization);

ExperimentReport tail_experiment(const ExperimentPlan& plan);
ExperimentReport rate_experiment(const ExperimentPlan& plan);

struct IdentityOptions {
  std::uint64_t seed = 1;
  InitialLaw initial = InitialLaw::stationary();
  std::size_t threads = 1;
  double decomposition_tolerance = 1e-9;
  double martingale_tolerance = 1e-10;
};

ExperimentReport identity_suite(const FiniteChain& chain, const KernelFamily& kernel, std::size_t n,
                                std::size_t t_n, std::size_t replicates, const IdentityOptions& options = {});

/// f defaults to 1{state 0}.
ExperimentReport regeneration_suite(const FiniteChain& chain, const ErgodicityConstants& constants,
                                    std::size_t steps, std::uint64_t seed,
                                    std::optional<Vector> f = std::nullopt);

ExperimentReport run_experiment(const ExperimentPlan& plan);

}  // namespace ustatlab
