#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ustatlab/chain.hpp"
#include "ustatlab/kernels.hpp"
#include "ustatlab/rng.hpp"

namespace ustatlab {

struct TnChoice {
  std::size_t t_n = 1;
  double r = 0.0;
  bool clamped = false;
  std::string warning;
};

/// t_n = floor(r log n) clamped to [1, n]; r defaults to 1.05 * 2 / log(1/rho).
/// Throws if a supplied r does not exceed 2 / log(1/rho).
TnChoice compute_tn(double rho, std::size_t n, std::optional<double> r = std::nullopt);

/// C_n over the law chi P^{i-1} of X_i (`initial` empty = stationary), with
/// nu from the majorization pair. Exact on S states.
double compute_Cn(const FiniteChain& chain, const KernelFamily& kernel, const Vector& initial = {});

/// B_n by exact enumeration over k = 0..t_n, index and state.
double compute_Bn(const FiniteChain& chain, const KernelFamily& kernel, std::size_t t_n);

struct IndependentConstants {
  double Bn = 0.0;
  double Cn = 0.0;
};

/// Independent-setting B_n, C_n (nu = pi, only k = 0).
IndependentConstants independent_Bn_Cn(const Vector& pi, const KernelFamily& kernel, std::size_t n);

enum class BoundMethod { exact_enumeration, monte_carlo };
std::string to_string(BoundMethod m);

struct BoundConstants {
  double A = 0.0;
  double Bn = 0.0;
  double Cn = 0.0;
  bool has_Cn = true;
  std::size_t n = 0;
  std::size_t tn = 1;
  double r = 0.0;
  double kappa = 1.0;
  double beta = 1.0;
  /// "supplied" or "calibrated"; never paper-given.
  std::string kappa_source = "supplied";
  BoundMethod method = BoundMethod::exact_enumeration;
  std::size_t probe_budget = 0;
  std::size_t sample_budget = 0;
  std::vector<std::string> flags;
};

nlohmann::ordered_json to_json(const BoundConstants& c);

/// A, B_n, C_n and t_n for a finite chain and kernel of horizon n.
BoundConstants finite_bound_constants(const FiniteChain& chain, const ErgodicityConstants& ergo,
                                      const KernelFamily& kernel, const Vector& initial,
                                      std::optional<double> r = std::nullopt,
                                      std::optional<std::size_t> tn_override = std::nullopt);

struct MonteCarloBudget {
  std::size_t probes = 1000;
  std::size_t outer = 200;
  std::size_t inner = 50;
  std::uint64_t seed = 1;
};

/// Probe-based B_n, C_n for one-dimensional AR(1)/ARCH models with a
/// separable kernel: nu is sampled from the upper envelope g_M, P^k by
/// simulation. The sup is a max over probes (a lower proxy), flagged as such.
BoundConstants monte_carlo_bound_constants(const ChainModel& model, const KernelFamily& kernel,
                                           double rho, const MonteCarloBudget& budget,
                                           std::optional<double> r = std::nullopt,
                                           std::optional<std::size_t> tn_override = std::nullopt);

/// Draws from nu = g_M / delta_M of an ARCH model.
double sample_nu(const ARCHModel& model, RandomStream& rng);

enum class TheoremVariant { T1a, T1b, T2, Eq3 };
std::string to_string(TheoremVariant v);
TheoremVariant parse_theorem_variant(const std::string& s);

/// Right-hand side of the chosen display, read term by term. Raw scale,
/// except Eq3 which bounds the pairs-normalized statistic.
double theorem_rhs(TheoremVariant variant, const BoundConstants& c, std::size_t n, double u);

/// 1 - beta e^{-u} log n.
double probability_level(double beta, std::size_t n, double u);

enum class RemainderVariant { general, stationary };
/// A (2L + n t_n) or 2 L A (1 + t_n + t_n^2).
double remainder_bound(RemainderVariant variant, double A, double L, std::size_t n, std::size_t t_n);

struct DensityRatioNorm {
  double p = 0.0;
  double q = 1.0;
  double value = 1.0;
};

/// ||d chi / d pi||_{pi, p}; p = +infinity gives the max ratio and q = 1.
DensityRatioNorm density_ratio_norm(const Vector& chi, const Vector& pi, double p);

struct BernsteinParams {
  double lambda = 0.0;
  double A1 = 1.0 / 3.0;
  double A2 = 1.0;
  double c = 0.0;
  double sigma2 = 0.0;
};

BernsteinParams bernstein_params(double lambda, double c, double sigma2);
/// c = max_i sup |f_i| and sigma^2 = (1/n) sum_i E_pi f_i^2 for centered f_i on S states.
BernsteinParams bernstein_params(double lambda, const std::vector<Vector>& f, const Vector& pi);

struct BernsteinBound {
  double threshold = 0.0;
  double probability = 0.0;
};

/// Threshold 2 q u A1 c / n + sqrt(2 q u A2 sigma^2 / n) on the mean, exceeded
/// with probability at most ||d chi / d pi|| e^{-u}.
BernsteinBound bernstein_mc_bound(const BernsteinParams& params, const DensityRatioNorm& norm, std::size_t n,
                                  double u);

}  // namespace ustatlab
