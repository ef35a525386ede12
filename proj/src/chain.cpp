#include "ustatlab/chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "ustatlab/report_io.hpp"
#include "ustatlab/rng.hpp"

namespace ustatlab {

namespace {

constexpr double kStochasticTol = 1e-12;

void check_probability_vector(const Vector& v, const char* what) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || v[k] < 0.0 || v[k] > 1.0) {
      throw std::invalid_argument(fmt::format("{}: entry {} = {} is not in [0, 1]", what, k, v[k]));
    }
  }
  if (std::abs(v.sum() - 1.0) > kStochasticTol) {
    throw std::invalid_argument(fmt::format("{}: entries sum to {}, not 1", what, v.sum()));
  }
}

// Cumulative sums with the last positive-mass entry pinned to exactly 1 so
// that a zero-probability state can never be drawn.
std::vector<double> cumulative_of(const Eigen::Ref<const Vector>& probs) {
  std::vector<double> cum(static_cast<std::size_t>(probs.size()));
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < cum.size(); ++k) {
    acc += probs[static_cast<Eigen::Index>(k)];
    cum[k] = acc;
    if (probs[static_cast<Eigen::Index>(k)] > 0.0) last_positive = k;
  }
  for (std::size_t k = last_positive; k < cum.size(); ++k) cum[k] = 1.0;
  return cum;
}

double ar1_step_coord(const AR1Model& m, std::size_t c, double x, RandomStream& rng) {
  return m.drift(x) + m.sigma[c] * rng.normal();
}

double arch_step(const ARCHModel& m, double x, RandomStream& rng) {
  return m.drift(x) + m.volatility(x) * m.sigma * rng.normal();
}

// Advances a continuous state in place.
void continuous_step(const ChainModel& model, std::vector<double>& x, RandomStream& rng) {
  if (const auto* ar = std::get_if<AR1Model>(&model)) {
    for (std::size_t c = 0; c < ar->dim; ++c) x[c] = ar1_step_coord(*ar, c, x[c], rng);
  } else {
    const auto& arch = std::get<ARCHModel>(model);
    x[0] = arch_step(arch, x[0], rng);
  }
}

double lag1_autocorrelation(const std::vector<double>& xs) {
  const auto n = xs.size();
  if (n < 3) return 0.0;
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(n);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    den += (xs[t] - mean) * (xs[t] - mean);
    if (t + 1 < n) num += (xs[t] - mean) * (xs[t + 1] - mean);
  }
  return den > 0.0 ? num / den : 0.0;
}

struct BurnIn {
  std::vector<double> start;
  std::size_t steps = 0;
};

// Pilot run from the origin, burn-in of ceil(20 / (1 - lambda_hat)).
BurnIn burn_in_start(const ChainModel& model, std::uint64_t seed, std::uint64_t stream_id,
                     RandomStream& rng) {
  const std::size_t dim = state_dimension(model);
  constexpr std::size_t kPilot = 2000;
  RandomStream pilot(seed, hash_combine(stream_id, 0x9117'0bu));
  std::vector<double> x(dim, 0.0);
  std::vector<double> trace;
  trace.reserve(kPilot);
  for (std::size_t t = 0; t < kPilot; ++t) {
    continuous_step(model, x, pilot);
    trace.push_back(x[0]);
  }
  const double lambda_hat = std::clamp(std::abs(lag1_autocorrelation(trace)), 0.0, 0.99);
  BurnIn out;
  out.steps = static_cast<std::size_t>(std::ceil(20.0 / (1.0 - lambda_hat)));
  out.start.assign(dim, 0.0);
  for (std::size_t t = 0; t < out.steps; ++t) continuous_step(model, out.start, rng);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- models

FiniteChain FiniteChain::create(Matrix transition, Vector initial) {
  if (transition.rows() == 0 || transition.rows() != transition.cols()) {
    throw std::invalid_argument("transition matrix must be square and non-empty");
  }
  for (Eigen::Index x = 0; x < transition.rows(); ++x) {
    check_probability_vector(transition.row(x).transpose(),
                             fmt::format("transition row {}", x).c_str());
  }
  if (initial.size() != 0) {
    if (initial.size() != transition.rows()) {
      throw std::invalid_argument("initial law has the wrong number of states");
    }
    check_probability_vector(initial, "initial law");
  }
  return FiniteChain{std::move(transition), std::move(initial)};
}

double BoundedMap::operator()(double x) const {
  const double z = slope * x + offset;
  switch (shape) {
    case Shape::zero:
      return 0.0;
    case Shape::constant:
      return scale;
    case Shape::tanh:
      return scale * std::tanh(z);
    case Shape::sine:
      return scale * std::sin(z);
  }
  return 0.0;
}

double BoundedMap::sup_abs() const { return shape == Shape::zero ? 0.0 : std::abs(scale); }

double VolatilityMap::operator()(double x) const {
  return a + (c - a) * (1.0 - std::exp(-slope * x * x));
}

void AR1Model::validate() const {
  if (dim == 0) throw std::invalid_argument("AR(1) dimension must be positive");
  if (sigma.size() != dim) throw std::invalid_argument("AR(1) needs one noise sigma per coordinate");
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("AR(1) sigma must be positive");
  }
  const double sup = drift.sup_abs() * std::sqrt(static_cast<double>(dim));
  if (!std::isfinite(drift_bound) || sup > drift_bound + 1e-12) {
    throw std::invalid_argument(
        fmt::format("AR(1) drift exceeds its declared bound: sup ||H|| = {} > {}", sup, drift_bound));
  }
}

void ARCHModel::validate() const {
  if (!(volatility.a > 0.0)) throw std::invalid_argument("ARCH requires a > 0");
  if (!std::isfinite(b) || !std::isfinite(volatility.c) || b < 0.0) {
    throw std::invalid_argument("ARCH requires finite b >= 0 and finite c");
  }
  if (volatility.c < volatility.a) throw std::invalid_argument("ARCH requires a <= c");
  if (volatility.slope < 0.0) throw std::invalid_argument("ARCH volatility slope must be >= 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("ARCH requires sigma > 0");
  if (drift.sup_abs() > b + 1e-12) {
    throw std::invalid_argument(
        fmt::format("ARCH drift exceeds its declared bound: sup |H| = {} > b = {}", drift.sup_abs(), b));
  }
}

std::string model_kind(const ChainModel& model) {
  switch (model.index()) {
    case 0:
      return "finite";
    case 1:
      return "ar1";
    default:
      return "arch";
  }
}

std::size_t state_dimension(const ChainModel& model) {
  if (const auto* ar = std::get_if<AR1Model>(&model)) return ar->dim;
  return 1;
}

InitialLaw InitialLaw::parse(const std::string& spec) {
  if (spec == "stationary") return stationary();
  constexpr std::string_view kPoint = "point:";
  if (spec.rfind(kPoint, 0) == 0) {
    std::vector<double> coords;
    std::stringstream in(spec.substr(kPoint.size()));
    std::string item;
    while (std::getline(in, item, ',')) coords.push_back(std::stod(item));
    if (coords.empty()) throw std::invalid_argument("empty point initial law");
    return at(std::move(coords));
  }
  throw std::invalid_argument("unknown initial law '" + spec + "' (expected stationary or point:...)");
}

std::vector<std::size_t> ChainPath::indices() const {
  std::vector<std::size_t> out(length());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = index(t);
  return out;
}

// ------------------------------------------------------- finite constants

std::vector<Matrix> transition_powers(const Matrix& transition, std::size_t max_power) {
  std::vector<Matrix> powers;
  powers.reserve(max_power + 1);
  powers.push_back(Matrix::Identity(transition.rows(), transition.cols()));
  for (std::size_t k = 1; k <= max_power; ++k) powers.push_back(powers.back() * transition);
  return powers;
}

Vector stationary_distribution(const FiniteChain& chain) {
  const auto S = static_cast<Eigen::Index>(chain.size());
  const Matrix& P = chain.transition;

  // Primitivity: some P^t, t <= S^2, entrywise positive (Wielandt).
  using BoolMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
  const BoolMatrix support = (P.array() > 0.0).cast<int>();
  BoolMatrix reach = support;
  const auto max_t = static_cast<std::size_t>(S * S);
  bool primitive = false;
  for (std::size_t t = 1; t <= max_t; ++t) {
    if ((reach.array() > 0).all()) {
      primitive = true;
      break;
    }
    reach = ((reach * support).array() > 0).cast<int>();
  }
  if (!primitive) {
    Eigen::Index zx = 0;
    Eigen::Index zy = 0;
    (reach.array() > 0).cast<int>().minCoeff(&zx, &zy);
    throw std::domain_error(fmt::format(
        "chain is reducible or periodic: P^{} still has a zero entry at ({}, {})", max_t, zx, zy));
  }

  // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
  Matrix system = P.transpose() - Matrix::Identity(S, S);
  system.row(S - 1).setOnes();
  Vector rhs = Vector::Zero(S);
  rhs[S - 1] = 1.0;
  const Eigen::FullPivLU<Matrix> lu(system);
  Vector pi = lu.solve(rhs);
  // One step of iterative refinement.
  const Vector correction = lu.solve(rhs - system * pi);
  pi += correction;

  const double residual = (pi.transpose() * P - pi.transpose()).cwiseAbs().maxCoeff();
  if (residual > 1e-12 || (pi.array() < -1e-15).any()) {
    throw std::runtime_error(fmt::format("stationary solve failed: residual {}", residual));
  }
  return pi.cwiseMax(0.0);
}

double dobrushin_coefficient(const Matrix& transition) {
  double worst = 0.0;
  for (Eigen::Index x = 0; x < transition.rows(); ++x) {
    for (Eigen::Index y = x + 1; y < transition.rows(); ++y) {
      worst = std::max(worst, 0.5 * (transition.row(x) - transition.row(y)).cwiseAbs().sum());
    }
  }
  return worst;
}

double max_tv_to_stationary(const Matrix& power, const Vector& pi) {
  double worst = 0.0;
  for (Eigen::Index x = 0; x < power.rows(); ++x) {
    worst = std::max(worst, 0.5 * (power.row(x).transpose() - pi).cwiseAbs().sum());
  }
  return worst;
}

namespace {

double second_eigenvalue_modulus(const Matrix& P) {
  if (P.rows() < 2) return 0.0;
  const Eigen::EigenSolver<Matrix> solver(P, /*computeEigenvectors=*/false);
  const auto& eig = solver.eigenvalues();
  // Drop the Perron root (the eigenvalue closest to 1), keep the largest modulus.
  Eigen::Index perron = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < eig.size(); ++k) {
    const double d = std::abs(eig[k] - std::complex<double>(1.0, 0.0));
    if (d < best) {
      best = d;
      perron = k;
    }
  }
  double lambda = 0.0;
  for (Eigen::Index k = 0; k < eig.size(); ++k) {
    if (k != perron) lambda = std::max(lambda, std::abs(eig[k]));
  }
  return lambda;
}

}  // namespace

namespace {

// Minorization/majorization pairs, lambda and t_mix; pi must already be set.
void fill_doeblin_and_mixing(const Matrix& P, ErgodicityConstants& out) {
  const Vector col_min = P.colwise().minCoeff().transpose();
  const Vector col_max = P.colwise().maxCoeff().transpose();
  out.delta_m = col_min.sum();
  if (!(out.delta_m > 0.0)) {
    throw std::domain_error("minorization failure: every column of P has a zero entry (delta_m = 0)");
  }
  out.mu = col_min / out.delta_m;
  out.delta_M = col_max.sum();
  out.nu = col_max / out.delta_M;
  out.m = 1;
  out.lambda = second_eigenvalue_modulus(P);

  // delta_m > 0 bounds the Dobrushin coefficient by 1 - delta_m, so this terminates.
  Matrix power = P;
  std::size_t t = 1;
  while (max_tv_to_stationary(power, out.pi) >= 0.25) {
    power = power * P;
    ++t;
  }
  out.t_mix = t;
}

}  // namespace

ErgodicityConstants ergodicity_constants(const FiniteChain& chain) {
  ErgodicityConstants out;
  out.pi = stationary_distribution(chain);
  out.rho = dobrushin_coefficient(chain.transition);
  if (out.rho >= 1.0 - 1e-14) {
    throw std::domain_error(
        "Dobrushin coefficient equals 1; supply a power P^m of the transition matrix whose "
        "coefficient is below 1");
  }
  out.L = 1.0;
  out.source = ErgodicitySource::dobrushin;
  fill_doeblin_and_mixing(chain.transition, out);
  return out;
}

ErgodicityConstants ergodicity_constants(const FiniteChain& chain, double L, double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("user rho must lie in [0, 1)");
  if (!(L > 0.0) || !std::isfinite(L)) throw std::invalid_argument("user L must be positive");
  ErgodicityConstants out;
  out.pi = stationary_distribution(chain);
  out.L = L;
  out.rho = rho;
  out.source = ErgodicitySource::user_supplied;
  fill_doeblin_and_mixing(chain.transition, out);
  return out;
}

// ------------------------------------------------------------ simulation

ChainPath simulate(const ChainModel& model, std::size_t n, std::uint64_t seed,
                   const InitialLaw& initial, std::uint64_t stream_id) {
  if (n < 2) throw std::invalid_argument("path length n must be at least 2");
  RandomStream rng(seed, stream_id);
  ChainPath path;
  path.seed = seed;
  path.stream_id = stream_id;
  path.model_kind = model_kind(model);
  path.dim = state_dimension(model);
  path.values.reserve(n * path.dim);

  if (const auto* chain = std::get_if<FiniteChain>(&model)) {
    const std::size_t S = chain->size();
    std::vector<std::vector<double>> rows(S);
    for (std::size_t x = 0; x < S; ++x) {
      rows[x] = cumulative_of(chain->transition.row(static_cast<Eigen::Index>(x)).transpose());
    }
    std::size_t state = 0;
    switch (initial.kind) {
      case InitialLaw::Kind::stationary: {
        const Vector law =
            chain->stationary_start() ? stationary_distribution(*chain) : chain->initial;
        state = rng.from_cumulative(cumulative_of(law));
        break;
      }
      case InitialLaw::Kind::distribution: {
        if (initial.distribution.size() != static_cast<Eigen::Index>(S)) {
          throw std::invalid_argument("initial distribution has the wrong number of states");
        }
        check_probability_vector(initial.distribution, "initial distribution");
        state = rng.from_cumulative(cumulative_of(initial.distribution));
        break;
      }
      case InitialLaw::Kind::point: {
        if (initial.point.size() != 1 || initial.point[0] < 0.0 ||
            initial.point[0] >= static_cast<double>(S) ||
            initial.point[0] != std::floor(initial.point[0])) {
          throw std::invalid_argument("initial point is not a valid state index");
        }
        state = static_cast<std::size_t>(initial.point[0]);
        break;
      }
    }
    path.values.push_back(static_cast<double>(state));
    for (std::size_t t = 1; t < n; ++t) {
      state = rng.from_cumulative(rows[state]);
      path.values.push_back(static_cast<double>(state));
    }
    return path;
  }

  std::visit(
      [](const auto& m) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(m)>, FiniteChain>) m.validate();
      },
      model);

  std::vector<double> x(path.dim, 0.0);
  switch (initial.kind) {
    case InitialLaw::Kind::stationary: {
      BurnIn burn = burn_in_start(model, seed, stream_id, rng);
      x = std::move(burn.start);
      path.approximate_stationary = true;
      path.burn_in = burn.steps;
      break;
    }
    case InitialLaw::Kind::point:
      if (initial.point.size() != path.dim) {
        throw std::invalid_argument("initial point has the wrong dimension");
      }
      x = initial.point;
      break;
    case InitialLaw::Kind::distribution:
      throw std::invalid_argument("distribution initial laws are only defined for finite chains");
  }
  path.values.insert(path.values.end(), x.begin(), x.end());
  for (std::size_t t = 1; t < n; ++t) {
    continuous_step(model, x, rng);
    path.values.insert(path.values.end(), x.begin(), x.end());
  }
  return path;
}

std::vector<std::vector<double>> stationary_sample(const ChainModel& model, std::size_t count,
                                                   std::uint64_t seed, std::size_t thin) {
  if (count == 0) throw std::invalid_argument("sampling budget must be positive");
  thin = std::max<std::size_t>(thin, 1);
  const ChainPath run =
      simulate(model, std::max<std::size_t>(count * thin, 2), seed, InitialLaw::stationary(),
               hash_combine(seed, 0x5a3b1e));
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const StateView s = run[k * thin];
    out.emplace_back(s.begin(), s.end());
  }
  return out;
}

// ------------------------------------------------------------ ARCH

double arch_transition_density(const ARCHModel& model, double x, double y) {
  const double s2 = model.sigma * model.sigma;
  const double g = model.volatility(x);
  const double d = y - model.drift(x);
  return std::exp(-d * d / (2.0 * s2 * g * g)) / (2.0 * std::numbers::pi * s2);
}

ARCHModel as_arch(const AR1Model& model) {
  if (model.dim != 1) throw std::invalid_argument("envelopes are only available for 1-d AR(1) models");
  ARCHModel arch;
  arch.drift = model.drift;
  arch.b = model.drift_bound;
  arch.sigma = model.sigma[0];
  arch.volatility = VolatilityMap{1.0, 1.0, 0.0};
  return arch;
}

ArchEnvelopes arch_envelopes(const ARCHModel& model) {
  model.validate();
  const double b = model.b;
  const double s2 = model.sigma * model.sigma;
  const double a2 = model.a() * model.a();
  const double c2 = model.c() * model.c();
  const double k = 1.0 / (2.0 * std::numbers::pi * s2);

  ArchEnvelopes env;
  env.lower = [=](double y) {
    if (y < -b) return k * std::exp(-(y - b) * (y - b) / (2.0 * s2 * a2));
    if (y > b) return k * std::exp(-(y + b) * (y + b) / (2.0 * s2 * a2));
    return k * std::exp(-2.0 * b * b / (s2 * a2));
  };
  env.upper = [=](double y) {
    if (y < -b) return k * std::exp(-(y + b) * (y + b) / (2.0 * s2 * c2));
    if (y > b) return k * std::exp(-(y - b) * (y - b) / (2.0 * s2 * c2));
    return k;
  };

  using Quadrature = boost::math::quadrature::gauss_kronrod<double, 31>;
  constexpr double kRelTol = 1e-8;
  const auto integrate = [&](const std::function<double(double)>& f, double& error_out) {
    const double inf = std::numeric_limits<double>::infinity();
    double total = 0.0;
    double err = 0.0;
    double piece_err = 0.0;
    total += Quadrature::integrate(f, -inf, -b, 15, 1e-12, &piece_err);
    err += piece_err;
    if (b > 0.0) {
      total += Quadrature::integrate(f, -b, b, 15, 1e-12, &piece_err);
      err += piece_err;
    }
    total += Quadrature::integrate(f, b, inf, 15, 1e-12, &piece_err);
    err += piece_err;
    if (!(total > 0.0) || !std::isfinite(total) || err > kRelTol * total) {
      throw std::runtime_error(
          fmt::format("envelope quadrature did not converge (value {}, error {})", total, err));
    }
    error_out = err;
    return total;
  };
  env.delta_m = integrate(env.lower, env.quadrature_error_m);
  env.delta_M = integrate(env.upper, env.quadrature_error_M);
  return env;
}

std::size_t count_envelope_violations(const ARCHModel& model, const ArchEnvelopes& env,
                                      std::size_t probes, std::uint64_t seed) {
  RandomStream rng(seed, 0xe11e);
  const double span = 5.0 * (model.b + model.c() * model.sigma) + 1.0;
  std::size_t violations = 0;
  for (std::size_t k = 0; k < probes; ++k) {
    const double x = span * (2.0 * rng.uniform() - 1.0);
    const double y = span * (2.0 * rng.uniform() - 1.0);
    const double p = arch_transition_density(model, x, y);
    const double slack = 1e-12 * env.upper(y) + 1e-300;
    if (env.lower(y) > p + slack || p > env.upper(y) + slack) ++violations;
  }
  return violations;
}

std::string path_to_csv(const ChainPath& path) {
  std::string out = "step";
  if (path.dim == 1) {
    out += ",state";
  } else {
    for (std::size_t c = 1; c <= path.dim; ++c) out += fmt::format(",state_{}", c);
  }
  out += '\n';
  const bool finite = path.model_kind == "finite";
  for (std::size_t t = 0; t < path.length(); ++t) {
    out += std::to_string(t + 1);
    for (double v : path[t]) {
      out += ',';
      out += finite ? std::to_string(static_cast<long long>(v)) : format_number(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace ustatlab

namespace ustatlab {

Vector initial_distribution(const FiniteChain& chain, const InitialLaw& initial) {
  const auto S = static_cast<Eigen::Index>(chain.size());
  switch (initial.kind) {
    case InitialLaw::Kind::stationary:
      return chain.stationary_start() ? Vector() : chain.initial;
    case InitialLaw::Kind::distribution:
      if (initial.distribution.size() != S) {
        throw std::invalid_argument("initial distribution has the wrong number of states");
      }
      return initial.distribution;
    case InitialLaw::Kind::point: {
      if (initial.point.size() != 1 || initial.point[0] < 0.0 ||
          initial.point[0] >= static_cast<double>(S) || initial.point[0] != std::floor(initial.point[0])) {
        throw std::invalid_argument("initial point is not a valid state index");
      }
      Vector e = Vector::Zero(S);
      e[static_cast<Eigen::Index>(initial.point[0])] = 1.0;
      return e;
    }
  }
  return {};
}

}  // namespace ustatlab
