#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace ustatlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A view of one state: a single entry for finite chains (the state index
/// stored as a double) or the k coordinates of an AR(1) state.
using StateView = std::span<const double>;

/// Finite-state chain with a row-stochastic transition matrix.
struct FiniteChain {
  Matrix transition;
  /// Law of X_1. Empty means "stationary" (resolved to pi on demand).
  Vector initial;

  /// Validates P (rows sum to 1 within 1e-12, entries in [0,1]) and the
  /// initial law; throws std::invalid_argument on violation.
  static FiniteChain create(Matrix transition, Vector initial = {});

  std::size_t size() const { return static_cast<std::size_t>(transition.rows()); }
  bool stationary_start() const { return initial.size() == 0; }
};

/// Bounded real map phi(x) = scale * shape(slope * x + offset).
struct BoundedMap {
  enum class Shape { zero, constant, tanh, sine };
  Shape shape = Shape::zero;
  double scale = 0.0;
  double slope = 1.0;
  double offset = 0.0;

  double operator()(double x) const;
  /// sup_x |phi(x)|.
  double sup_abs() const;
};

/// Volatility map G(x) = a + (c - a) * (1 - exp(-slope * x^2)), valued in [a, c].
struct VolatilityMap {
  double a = 1.0;
  double c = 1.0;
  double slope = 1.0;

  double operator()(double x) const;
};

/// X_{t+1} = H(X_t) + Z_t on R^k, H applied coordinatewise, Z ~ N(0, diag(sigma^2)).
struct AR1Model {
  std::size_t dim = 1;
  BoundedMap drift;
  /// Declared bound on sup_x ||H(x)||_2.
  double drift_bound = 0.0;
  std::vector<double> sigma{1.0};

  void validate() const;
};

/// X_{t+1} = H(X_t) + G(X_t) Z_{t+1}, Z ~ N(0, sigma^2), with |H| <= b and
/// a <= |G| <= c.
struct ARCHModel {
  BoundedMap drift;
  VolatilityMap volatility;
  double b = 0.0;
  double sigma = 1.0;

  double a() const { return volatility.a; }
  double c() const { return volatility.c; }
  void validate() const;
};

using ChainModel = std::variant<FiniteChain, AR1Model, ARCHModel>;

std::string model_kind(const ChainModel& model);
std::size_t state_dimension(const ChainModel& model);

/// Law of X_1 for simulation.
struct InitialLaw {
  enum class Kind { stationary, distribution, point };
  Kind kind = Kind::stationary;
  /// Probability vector (finite chains) when kind == distribution.
  Vector distribution;
  /// Starting state when kind == point (state index for finite chains).
  std::vector<double> point;

  static InitialLaw stationary() { return {}; }
  static InitialLaw from_distribution(Vector d) { return {Kind::distribution, std::move(d), {}}; }
  static InitialLaw at(std::vector<double> x) { return {Kind::point, {}, std::move(x)}; }
  /// Parses "stationary" or "point:<v1>,<v2>,...".
  static InitialLaw parse(const std::string& spec);
};

/// Law of X_1 on a finite chain as a probability vector; empty means
/// stationary. A point law becomes a unit vector.
Vector initial_distribution(const FiniteChain& chain, const InitialLaw& initial);

/// One simulated trajectory X_1..X_n, stored row-major (n x dim).
struct ChainPath {
  std::size_t dim = 1;
  std::vector<double> values;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::string model_kind;
  /// True when X_1 was drawn after a burn-in instead of from an exact pi.
  bool approximate_stationary = false;
  std::size_t burn_in = 0;

  std::size_t length() const { return dim == 0 ? 0 : values.size() / dim; }
  /// State at 0-based position t (X_{t+1} in 1-based time).
  StateView operator[](std::size_t t) const { return {values.data() + t * dim, dim}; }
  /// Finite-chain state index at 0-based position t.
  std::size_t index(std::size_t t) const { return static_cast<std::size_t>(values[t * dim]); }
  std::vector<std::size_t> indices() const;
};

/// Where (L, rho) came from.
enum class ErgodicitySource { dobrushin, user_supplied };

struct ErgodicityConstants {
  Vector pi;
  double rho = 0.0;
  double L = 1.0;
  ErgodicitySource source = ErgodicitySource::dobrushin;
  double lambda = 0.0;
  double delta_m = 0.0;
  Vector mu;
  std::size_t m = 1;
  double delta_M = 0.0;
  Vector nu;
  std::size_t t_mix = 0;
};

/// Invariant law of an irreducible aperiodic finite chain.
/// Throws std::domain_error if no power P^t with t <= S^2 is entrywise positive.
Vector stationary_distribution(const FiniteChain& chain);

/// Dobrushin (rho, L = 1), spectral lambda, Doeblin minorization and
/// majorization pairs, and the 1/4 mixing time.
ErgodicityConstants ergodicity_constants(const FiniteChain& chain);

/// Same as above but records a caller-supplied (L, rho) pair instead of the
/// Dobrushin one; rho must lie in [0, 1) and L must be positive.
ErgodicityConstants ergodicity_constants(const FiniteChain& chain, double L, double rho);

/// sup_{x,x'} TV(P(x,.), P(x',.)).
double dobrushin_coefficient(const Matrix& transition);

/// sup_x TV(P^t(x,.), pi) where TV is half the l1 distance.
double max_tv_to_stationary(const Matrix& power, const Vector& pi);

/// Matrix powers P^0..P^max_power.
std::vector<Matrix> transition_powers(const Matrix& transition, std::size_t max_power);

/// Draws X_1..X_n; a pure function of (model, n, seed, stream_id, initial).
/// "stationary" resolves to pi for finite chains and to a burn-in of
/// ceil(20 / (1 - lambda_hat)) steps for AR(1)/ARCH, with lambda_hat the
/// lag-1 autocorrelation of a pilot run (flagged approximate in the path).
ChainPath simulate(const ChainModel& model, std::size_t n, std::uint64_t seed,
                   const InitialLaw& initial = InitialLaw::stationary(),
                   std::uint64_t stream_id = 0);

/// Approximately stationary draws for Monte Carlo expectations on
/// continuous models: one long run after burn-in, thinned by `thin`.
std::vector<std::vector<double>> stationary_sample(const ChainModel& model, std::size_t count,
                                                   std::uint64_t seed, std::size_t thin = 5);

/// Transition "density" of the ARCH model with the (2 pi sigma^2)^{-1}
/// prefactor used by the envelope functions.
double arch_transition_density(const ARCHModel& model, double x, double y);

struct ArchEnvelopes {
  std::function<double(double)> lower;  // g_m
  std::function<double(double)> upper;  // g_M
  double delta_m = 0.0;                 // ||g_m||_1
  double delta_M = 0.0;                 // ||g_M||_1
  double quadrature_error_m = 0.0;
  double quadrature_error_M = 0.0;
};

/// Piecewise-Gaussian lower/upper envelopes of the ARCH transition density
/// and their L1 masses by adaptive Gauss-Kronrod quadrature (rel. tol 1e-8).
ArchEnvelopes arch_envelopes(const ARCHModel& model);

/// Envelope violations of g_m <= p(x,y) <= g_M at `probes` random points.
std::size_t count_envelope_violations(const ARCHModel& model, const ArchEnvelopes& env,
                                      std::size_t probes, std::uint64_t seed);

/// Views an AR(1) model on R as an ARCH model with G == 1 (used for its
/// envelopes); throws for dim != 1.
ARCHModel as_arch(const AR1Model& model);

/// Writes `step,state` CSV (or `step,state_1,...,state_k` for k > 1).
std::string path_to_csv(const ChainPath& path);

}  // namespace ustatlab
