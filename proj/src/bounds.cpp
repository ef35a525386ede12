#include "ustatlab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace ustatlab {

TnChoice compute_tn(double rho, std::size_t n, std::optional<double> r) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument(fmt::format("rho = {} must lie in [0, 1)", rho));
  if (n < 2) throw std::invalid_argument("t_n needs n >= 2");
  TnChoice out;
  // rho = 0: log(1/rho) is infinite and every r > 0 is admissible.
  const double threshold = rho == 0.0 ? 0.0 : 2.0 / std::log(1.0 / rho);
  if (r) {
    if (!(*r > threshold) || !std::isfinite(*r)) {
      throw std::invalid_argument(fmt::format("depth rate r = {} must exceed 2 / log(1/rho) = {}", *r, threshold));
    }
    out.r = *r;
  } else {
    out.r = 1.05 * threshold;
  }
  const double raw = std::floor(out.r * std::log(static_cast<double>(n)));
  if (raw < 1.0) {
    out.t_n = 1;
    out.clamped = true;
    out.warning = fmt::format("t_n = floor({} log {}) = {} clamped to 1", out.r, n, raw);
  } else if (raw > static_cast<double>(n)) {
    out.t_n = n;
    out.clamped = true;
    out.warning = fmt::format("t_n = floor({} log {}) = {} clamped to n = {}", out.r, n, raw, n);
  } else {
    out.t_n = static_cast<std::size_t>(raw);
  }
  return out;
}

namespace {

struct WeightProfile {
  double max_row = 0.0;  // max_i sum_{j>i} a_ij^2
  double max_col = 0.0;  // max_j sum_{i<j} a_ij^2
  std::vector<double> row;  // row[i] = sum_{j>i} a_ij^2, 1-based
};

WeightProfile weight_profile(const Weights& w, std::size_t n) {
  WeightProfile p;
  p.row.assign(n + 1, 0.0);
  for (std::size_t j = 2; j <= n; ++j) {
    double col = 0.0;
    for (std::size_t i = 1; i < j; ++i) {
      const double a = w(i, j);
      p.row[i] += a * a;
      col += a * a;
    }
    p.max_col = std::max(p.max_col, col);
  }
  for (std::size_t i = 1; i <= n; ++i) p.max_row = std::max(p.max_row, p.row[i]);
  return p;
}

// nu = column maxima of P, normalized.
Vector majorizing_law(const Matrix& P) {
  const Vector m = P.colwise().maxCoeff().transpose();
  return m / m.sum();
}

Matrix centered(const Matrix& T, const Vector& pi) {
  Matrix p = T;
  p.array() -= pi_expectation(T, pi);
  return p;
}

}  // namespace

double compute_Cn(const FiniteChain& chain, const KernelFamily& kernel, const Vector& initial) {
  const std::size_t n = kernel.horizon();
  const std::size_t S = chain.size();
  const Vector pi = stationary_distribution(chain);
  const Vector nu = majorizing_law(chain.transition);
  std::vector<Vector> laws(n + 1);
  laws[1] = initial.size() == 0 ? pi : initial;
  if (laws[1].size() != static_cast<Eigen::Index>(S)) {
    throw std::invalid_argument("initial law has the wrong number of states");
  }
  const Matrix Pt = chain.transition.transpose();
  for (std::size_t i = 2; i <= n; ++i) laws[i] = Pt * laws[i - 1];

  double c2 = 0.0;
  if (kernel.is_separable()) {
    const Matrix p = centered(kernel.base().finite_table(S), pi);
    const Vector v = p.cwiseProduct(p) * nu;  // x -> E_nu p^2(x, X')
    const auto prof = weight_profile(kernel.weights(), n);
    for (std::size_t i = 1; i < n; ++i) c2 += prof.row[i] * laws[i].dot(v);
  } else {
    for (std::size_t j = 2; j <= n; ++j) {
      for (std::size_t i = 1; i < j; ++i) {
        const Matrix p = centered(kernel.table(i, j, S), pi);
        c2 += laws[i].dot(p.cwiseProduct(p) * nu);
      }
    }
  }
  return std::sqrt(c2);
}

double compute_Bn(const FiniteChain& chain, const KernelFamily& kernel, std::size_t t_n) {
  const std::size_t n = kernel.horizon();
  const std::size_t S = chain.size();
  const auto N = static_cast<Eigen::Index>(S);
  const Vector pi = stationary_distribution(chain);
  const Vector nu = majorizing_law(chain.transition);
  const auto powers = transition_powers(chain.transition, t_n);

  double b2 = 0.0;
  if (kernel.is_separable()) {
    const Matrix p = centered(kernel.base().finite_table(S), pi);
    const auto prof = weight_profile(kernel.weights(), n);
    for (std::size_t k = 0; k <= t_n; ++k) {
      const Matrix Q = powers[k] * p.transpose();  // Q(x', x) = E_{X~P^k(x',.)} p(x, X)
      const Matrix Q2 = Q.cwiseProduct(Q);
      const double first = (Q2.transpose() * nu).maxCoeff();
      const double second = (Q2 * pi).maxCoeff();
      b2 = std::max({b2, prof.max_row * first, prof.max_col * second});
    }
    return std::sqrt(b2);
  }
  std::vector<Matrix> tables;
  tables.reserve(n * (n - 1) / 2);
  for (std::size_t j = 2; j <= n; ++j) {
    for (std::size_t i = 1; i < j; ++i) tables.push_back(centered(kernel.table(i, j, S), pi));
  }
  for (std::size_t k = 0; k <= t_n; ++k) {
    Matrix first = Matrix::Zero(static_cast<Eigen::Index>(n + 1), N);   // [i][x]
    Matrix second = Matrix::Zero(static_cast<Eigen::Index>(n + 1), N);  // [j][y]
    std::size_t idx = 0;
    for (std::size_t j = 2; j <= n; ++j) {
      for (std::size_t i = 1; i < j; ++i) {
        const Matrix Q = powers[k] * tables[idx++].transpose();
        const Matrix Q2 = Q.cwiseProduct(Q);
        first.row(static_cast<Eigen::Index>(i)) += (Q2.transpose() * nu).transpose();
        second.row(static_cast<Eigen::Index>(j)) += (Q2 * pi).transpose();
      }
    }
    b2 = std::max({b2, first.maxCoeff(), second.maxCoeff()});
  }
  return std::sqrt(b2);
}

IndependentConstants independent_Bn_Cn(const Vector& pi, const KernelFamily& kernel, std::size_t n) {
  if (pi.size() == 0) throw std::invalid_argument("independent constants need pi");
  if (n < 2) throw std::invalid_argument("independent constants need n >= 2");
  const auto S = static_cast<std::size_t>(pi.size());
  double b_row = 0.0;
  double b_col = 0.0;
  double c2 = 0.0;
  if (kernel.is_separable()) {
    const Matrix p = centered(kernel.base().finite_table(S), pi);
    const Matrix p2 = p.cwiseProduct(p);
    const auto prof = weight_profile(kernel.weights(), n);
    b_row = prof.max_row * (p2 * pi).maxCoeff();
    b_col = prof.max_col * (p2.transpose() * pi).maxCoeff();
    double total = 0.0;
    for (std::size_t i = 1; i < n; ++i) total += prof.row[i];
    c2 = total * pi.dot(p2 * pi);
  } else {
    Matrix rows = Matrix::Zero(static_cast<Eigen::Index>(n + 1), pi.size());
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(n + 1), pi.size());
    for (std::size_t j = 2; j <= n; ++j) {
      for (std::size_t i = 1; i < j; ++i) {
        const Matrix p = centered(kernel.table(i, j, S), pi);
        const Matrix p2 = p.cwiseProduct(p);
        rows.row(static_cast<Eigen::Index>(i)) += (p2 * pi).transpose();
        cols.row(static_cast<Eigen::Index>(j)) += (p2.transpose() * pi).transpose();
        c2 += pi.dot(p2 * pi);
      }
    }
    b_row = rows.maxCoeff();
    b_col = cols.maxCoeff();
  }
  return {std::sqrt(std::max(b_row, b_col)), std::sqrt(c2)};
}

std::string to_string(BoundMethod m) {
  return m == BoundMethod::exact_enumeration ? "exact-enumeration" : "monte-carlo";
}

nlohmann::ordered_json to_json(const BoundConstants& c) {
  nlohmann::ordered_json j;
  j["A"] = c.A;
  j["Bn"] = c.Bn;
  if (c.has_Cn) {
    j["Cn"] = c.Cn;
  } else {
    j["Cn"] = nullptr;
  }
  j["tn"] = c.tn;
  j["r"] = c.r;
  j["kappa"] = c.kappa;
  j["beta"] = c.beta;
  j["kappa_beta_source"] = c.kappa_source;
  j["method"] = to_string(c.method);
  j["budgets"] = {{"probes", c.probe_budget}, {"samples", c.sample_budget}};
  j["flags"] = c.flags;
  j["n"] = c.n;
  return j;
}

BoundConstants finite_bound_constants(const FiniteChain& chain, const ErgodicityConstants& ergo,
                                      const KernelFamily& kernel, const Vector& initial, std::optional<double> r,
                                      std::optional<std::size_t> tn_override) {
  BoundConstants c;
  const std::size_t n = kernel.horizon();
  c.n = n;
  c.A = sup_constant_A(kernel, chain.size()).A;
  const TnChoice tn = compute_tn(ergo.rho, n, r);
  c.r = tn.r;
  c.tn = tn.t_n;
  if (!tn.warning.empty()) c.flags.push_back(tn.warning);
  if (tn_override) {
    if (*tn_override < 1 || *tn_override > n) {
      throw std::invalid_argument(fmt::format("t_n override {} outside [1, {}]", *tn_override, n));
    }
    c.tn = *tn_override;
    c.flags.push_back("t_n overridden by the caller");
  }
  c.Bn = compute_Bn(chain, kernel, c.tn);
  c.Cn = compute_Cn(chain, kernel, initial);
  c.method = BoundMethod::exact_enumeration;
  if (ergo.source == ErgodicitySource::user_supplied) c.flags.push_back("rho and L supplied by the caller");
  return c;
}

// --------------------------------------------------------- Monte Carlo

double sample_nu(const ARCHModel& model, RandomStream& rng) {
  // g_M: flat on [-b, b], half-Gaussian tails of scale sigma * c outside.
  const double b = model.b;
  const double s = model.sigma * model.c();
  const double tail = s * std::sqrt(std::numbers::pi / 2.0);
  const double total = 2.0 * b + 2.0 * tail;
  const double w = rng.uniform() * total;
  if (w < 2.0 * b) return -b + w;
  const double z = std::abs(rng.normal()) * s;
  return w < 2.0 * b + tail ? b + z : -b - z;
}

BoundConstants monte_carlo_bound_constants(const ChainModel& model, const KernelFamily& kernel, double rho,
                                           const MonteCarloBudget& budget, std::optional<double> r,
                                           std::optional<std::size_t> tn_override) {
  if (std::holds_alternative<FiniteChain>(model)) {
    throw std::invalid_argument("use the exact constants for finite chains");
  }
  if (state_dimension(model) != 1) {
    throw std::invalid_argument("Monte Carlo B_n/C_n are only available for one-dimensional models");
  }
  if (!kernel.is_separable()) {
    throw std::invalid_argument("Monte Carlo B_n/C_n need a separable kernel");
  }
  if (budget.probes < 2 || budget.outer < 2 || budget.inner < 1) {
    throw std::invalid_argument("Monte Carlo budgets must be positive (probes, outer >= 2)");
  }
  const ARCHModel arch =
      std::holds_alternative<ARCHModel>(model) ? std::get<ARCHModel>(model) : as_arch(std::get<AR1Model>(model));
  const std::size_t n = kernel.horizon();

  BoundConstants c;
  c.n = n;
  c.method = BoundMethod::monte_carlo;
  c.probe_budget = budget.probes;
  c.sample_budget = budget.outer * budget.inner;
  const TnChoice tn = compute_tn(rho, n, r);
  c.r = tn.r;
  c.tn = tn_override.value_or(tn.t_n);
  if (!tn.warning.empty()) c.flags.push_back(tn.warning);
  const std::size_t T = c.tn;

  const auto pi_sample = stationary_sample(model, budget.outer, budget.seed);
  const auto probes = stationary_sample(model, budget.probes, hash_combine(budget.seed, 0x9b0be5));
  c.A = sup_constant_A(kernel, probes).A;
  const BaseKernel& h = kernel.base();

  double e_pi = 0.0;
  for (std::size_t m = 0; m + 1 < pi_sample.size(); m += 2) e_pi += h(pi_sample[m], pi_sample[m + 1]);
  e_pi /= static_cast<double>(pi_sample.size() / 2);
  const auto p = [&](double x, double y) { return h(StateView(&x, 1), StateView(&y, 1)) - e_pi; };

  // One path of length T+1 per start gives draws of P^k(start, .) for all k.
  const auto forward = [&](double start, std::uint64_t stream) {
    const ChainPath path = simulate(model, T + 1, budget.seed, InitialLaw::at({start}), stream);
    return path.values;
  };

  RandomStream rng(budget.seed, 0x7e11);
  std::vector<double> nu_draws(budget.outer);
  for (auto& v : nu_draws) v = sample_nu(arch, rng);
  // inner[m][l][k]: draw l of P^k(nu_m, .).
  std::vector<std::vector<std::vector<double>>> from_nu(budget.outer);
  for (std::size_t m = 0; m < budget.outer; ++m) {
    from_nu[m].resize(budget.inner);
    for (std::size_t l = 0; l < budget.inner; ++l) from_nu[m][l] = forward(nu_draws[m], hash_combine(m, l + 1));
  }

  double first = 0.0;
  double second = 0.0;
  for (std::size_t q = 0; q < probes.size(); ++q) {
    const double x = probes[q][0];
    std::vector<std::vector<double>> from_y(budget.inner);
    for (std::size_t l = 0; l < budget.inner; ++l) from_y[l] = forward(x, hash_combine(0xf00d + q, l + 1));
    for (std::size_t k = 0; k <= T; ++k) {
      double f = 0.0;
      for (std::size_t m = 0; m < budget.outer; ++m) {
        double in = 0.0;
        for (std::size_t l = 0; l < budget.inner; ++l) in += p(x, from_nu[m][l][k]);
        in /= static_cast<double>(budget.inner);
        f += in * in;
      }
      first = std::max(first, f / static_cast<double>(budget.outer));
      double s = 0.0;
      for (const auto& xt : pi_sample) {
        double in = 0.0;
        for (std::size_t l = 0; l < budget.inner; ++l) in += p(xt[0], from_y[l][k]);
        in /= static_cast<double>(budget.inner);
        s += in * in;
      }
      second = std::max(second, s / static_cast<double>(pi_sample.size()));
    }
  }
  const auto prof = weight_profile(kernel.weights(), n);
  c.Bn = std::sqrt(std::max(prof.max_row * first, prof.max_col * second));

  double cnu = 0.0;
  for (const auto& xt : pi_sample) {
    for (double xn : nu_draws) cnu += p(xt[0], xn) * p(xt[0], xn);
  }
  cnu /= static_cast<double>(pi_sample.size() * nu_draws.size());
  double total = 0.0;
  for (std::size_t i = 1; i < n; ++i) total += prof.row[i];
  c.Cn = std::sqrt(total * cnu);

  c.flags.push_back("B_n is a max over probe points (lower proxy for the sup)");
  c.flags.push_back("C_n uses the stationary law for X_i");
  c.flags.push_back("A is the declared sup bound");
  return c;
}

// ------------------------------------------------------------- displays

std::string to_string(TheoremVariant v) {
  switch (v) {
    case TheoremVariant::T1a:
      return "T1a";
    case TheoremVariant::T1b:
      return "T1b";
    case TheoremVariant::T2:
      return "T2";
    case TheoremVariant::Eq3:
      return "Eq3";
  }
  return "T1a";
}

TheoremVariant parse_theorem_variant(const std::string& s) {
  if (s == "T1a") return TheoremVariant::T1a;
  if (s == "T1b") return TheoremVariant::T1b;
  if (s == "T2") return TheoremVariant::T2;
  if (s == "Eq3") return TheoremVariant::Eq3;
  throw std::invalid_argument("unknown theorem variant '" + s + "'");
}

double theorem_rhs(TheoremVariant variant, const BoundConstants& c, std::size_t n, double u) {
  if (!(u > 0.0) || !std::isfinite(u)) throw std::invalid_argument(fmt::format("u = {} must be positive", u));
  if (n < 2) throw std::invalid_argument("theorem displays need n >= 2");
  const double N = static_cast<double>(n);
  const double log_n = std::log(N);
  const double sqrt_n = std::sqrt(N);
  const double A = c.A;
  if (variant == TheoremVariant::Eq3) {
    const double v = u / N;
    return c.kappa * (A / 2.0) * log_n * (v + v * v);
  }
  if (variant != TheoremVariant::T1a && !c.has_Cn) {
    throw std::invalid_argument(to_string(variant) + " needs C_n");
  }
  const double cn = variant == TheoremVariant::T1a ? 0.0 : c.Cn;
  const double tail = variant == TheoremVariant::T2 ? log_n : N;
  const double sqrt_u = std::sqrt(u);
  return c.kappa * log_n *
         ((cn + A * log_n * sqrt_n) * sqrt_u + (A + c.Bn * sqrt_n) * u + (2.0 * A * sqrt_n) * u * sqrt_u +
          A * (u * u + tail));
}

double probability_level(double beta, std::size_t n, double u) {
  return 1.0 - beta * std::exp(-u) * std::log(static_cast<double>(n));
}

double remainder_bound(RemainderVariant variant, double A, double L, std::size_t n, std::size_t t_n) {
  if (A < 0.0 || L < 0.0) throw std::invalid_argument("remainder bound needs nonnegative A and L");
  const double t = static_cast<double>(t_n);
  if (variant == RemainderVariant::general) return A * (2.0 * L + static_cast<double>(n) * t);
  return 2.0 * L * A * (1.0 + t + t * t);
}

DensityRatioNorm density_ratio_norm(const Vector& chi, const Vector& pi, double p) {
  if (chi.size() != pi.size() || chi.size() == 0) {
    throw std::invalid_argument("density ratio needs two laws on the same states");
  }
  if (!(p > 1.0)) throw std::invalid_argument(fmt::format("p = {} must lie in (1, inf]", p));
  DensityRatioNorm out;
  out.p = p;
  const bool inf = std::isinf(p);
  out.q = inf ? 1.0 : p / (p - 1.0);
  double acc = 0.0;
  for (Eigen::Index x = 0; x < chi.size(); ++x) {
    if (pi[x] <= 0.0) {
      if (chi[x] > 0.0) {
        throw std::domain_error(
            fmt::format("chi is not absolutely continuous w.r.t. pi (state {} has pi = 0, chi = {})", x, chi[x]));
      }
      continue;
    }
    const double ratio = chi[x] / pi[x];
    acc = inf ? std::max(acc, ratio) : acc + pi[x] * std::pow(ratio, p);
  }
  out.value = inf ? acc : std::pow(acc, 1.0 / p);
  return out;
}

BernsteinParams bernstein_params(double lambda, double c, double sigma2) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in [0, 1)");
  if (c < 0.0 || sigma2 < 0.0) throw std::invalid_argument("c and sigma^2 must be nonnegative");
  BernsteinParams b;
  b.lambda = lambda;
  b.A1 = lambda == 0.0 ? 1.0 / 3.0 : 5.0 / (1.0 - lambda);
  b.A2 = (1.0 + lambda) / (1.0 - lambda);
  b.c = c;
  b.sigma2 = sigma2;
  return b;
}

BernsteinParams bernstein_params(double lambda, const std::vector<Vector>& f, const Vector& pi) {
  if (f.empty()) throw std::invalid_argument("Bernstein parameters need at least one function");
  double c = 0.0;
  double s = 0.0;
  for (const auto& fi : f) {
    if (std::abs(pi.dot(fi)) > 1e-10) throw std::invalid_argument("Bernstein functions must be pi-centered");
    c = std::max(c, fi.cwiseAbs().maxCoeff());
    s += pi.dot(fi.cwiseProduct(fi));
  }
  return bernstein_params(lambda, c, s / static_cast<double>(f.size()));
}

BernsteinBound bernstein_mc_bound(const BernsteinParams& params, const DensityRatioNorm& norm, std::size_t n,
                                  double u) {
  if (u < 0.0) throw std::invalid_argument("u must be nonnegative");
  if (n == 0) throw std::invalid_argument("n must be positive");
  const double N = static_cast<double>(n);
  BernsteinBound b;
  b.threshold = 2.0 * norm.q * u * params.A1 * params.c / N + std::sqrt(2.0 * norm.q * u * params.A2 * params.sigma2 / N);
  b.probability = norm.value * std::exp(-u);
  return b;
}

}  // namespace ustatlab
