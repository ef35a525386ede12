#include "ustatlab/ustat.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "ustatlab/report_io.hpp"
#include "ustatlab/rng.hpp"

namespace ustatlab {

std::string to_string(Centering c) {
  switch (c) {
    case Centering::none:
      return "none";
    case Centering::pi_expectation:
      return "pi-expectation";
    case Centering::joint_expectation:
      return "joint-expectation";
  }
  return "none";
}

Centering parse_centering(const std::string& s) {
  if (s == "none") return Centering::none;
  if (s == "pi-expectation" || s == "pi") return Centering::pi_expectation;
  if (s == "joint-expectation" || s == "joint") return Centering::joint_expectation;
  throw std::invalid_argument("unknown centering '" + s + "'");
}

std::string to_string(Normalization n) { return n == Normalization::raw ? "raw" : "pairs"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "raw") return Normalization::raw;
  if (s == "pairs" || s == "pairs-normalized") return Normalization::pairs;
  throw std::invalid_argument("unknown normalization '" + s + "'");
}

namespace {

double weight_sum(const Weights& w, std::size_t n) {
  if (w.kind == Weights::Kind::unit) return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  double s = 0.0;
  for (std::size_t j = 2; j <= n; ++j) {
    for (std::size_t i = 1; i < j; ++i) s += w(i, j);
  }
  return s;
}

void check_finite_path(const ChainPath& path, std::size_t S) {
  if (path.dim != 1) throw std::invalid_argument("finite-chain path must be one-dimensional");
  for (std::size_t t = 0; t < path.length(); ++t) {
    const double v = path.values[t];
    if (v < 0.0 || v >= static_cast<double>(S) || v != std::floor(v)) {
      throw std::invalid_argument(fmt::format("path state {} at step {} is not in the state set", v, t + 1));
    }
  }
}

// Laws of X_1..X_n (1-based; entry 0 unused).
std::vector<Vector> marginal_laws(const FiniteChain& chain, const Vector& initial, std::size_t n) {
  std::vector<Vector> laws(n + 1);
  laws[1] = initial.size() == 0 ? stationary_distribution(chain) : initial;
  if (laws[1].size() != chain.transition.rows()) {
    throw std::invalid_argument("initial law has the wrong number of states");
  }
  const Matrix Pt = chain.transition.transpose();
  for (std::size_t i = 2; i <= n; ++i) laws[i] = Pt * laws[i - 1];
  return laws;
}

// g(x) = sum_y P^d(x, y) T(x, y).
Vector diagonal_pair_mean(const Matrix& power, const Matrix& T) {
  return power.cwiseProduct(T).rowwise().sum();
}

}  // namespace

// ------------------------------------------------------------ centering

CenteringTerm pi_centering(const KernelFamily& kernel, const Vector& pi) {
  const auto S = static_cast<std::size_t>(pi.size());
  CenteringTerm c;
  c.kind = Centering::pi_expectation;
  if (kernel.is_separable()) {
    c.total = pi_expectation(kernel.base().finite_table(S), pi) * weight_sum(kernel.weights(), kernel.horizon());
    return c;
  }
  for (std::size_t j = 2; j <= kernel.horizon(); ++j) {
    for (std::size_t i = 1; i < j; ++i) c.total += pi_expectation(kernel.table(i, j, S), pi);
  }
  return c;
}

CenteringTerm pi_centering(const KernelFamily& kernel, const std::vector<std::vector<double>>& pi_sample) {
  if (pi_sample.size() < 4) throw std::invalid_argument("pi centering needs a sampling budget of at least 4");
  const std::size_t half = pi_sample.size() / 2;
  const std::size_t n = kernel.horizon();
  CenteringTerm c;
  c.kind = Centering::pi_expectation;
  c.exact = false;
  // Each sample pair gives an unbiased draw of the whole center.
  double sum = 0.0;
  double sq = 0.0;
  for (std::size_t k = 0; k < half; ++k) {
    const auto& x = pi_sample[k];
    const auto& y = pi_sample[k + half];
    double v = 0.0;
    if (kernel.is_separable()) {
      v = kernel.base()(x, y);
    } else {
      for (std::size_t j = 2; j <= n; ++j) {
        for (std::size_t i = 1; i < j; ++i) v += kernel(i, j, x, y);
      }
    }
    sum += v;
    sq += v * v;
  }
  const auto N = static_cast<double>(half);
  const double mean = sum / N;
  const double se = std::sqrt(std::max(0.0, sq / N - mean * mean) / (N - 1.0));
  const double scale = kernel.is_separable() ? weight_sum(kernel.weights(), n) : 1.0;
  c.total = scale * mean;
  c.standard_error = std::abs(scale) * se;
  return c;
}

CenteringTerm joint_centering(const FiniteChain& chain, const Vector& initial, const KernelFamily& kernel) {
  const std::size_t n = kernel.horizon();
  const auto S = chain.size();
  const auto laws = marginal_laws(chain, initial, n);
  const auto powers = transition_powers(chain.transition, n - 1);
  CenteringTerm c;
  c.kind = Centering::joint_expectation;
  if (kernel.is_separable()) {
    const Matrix B = kernel.base().finite_table(S);
    std::vector<Vector> g(n);
    for (std::size_t d = 1; d < n; ++d) g[d] = diagonal_pair_mean(powers[d], B);
    for (std::size_t j = 2; j <= n; ++j) {
      for (std::size_t i = 1; i < j; ++i) c.total += kernel.weights()(i, j) * laws[i].dot(g[j - i]);
    }
    return c;
  }
  for (std::size_t j = 2; j <= n; ++j) {
    for (std::size_t i = 1; i < j; ++i) {
      c.total += laws[i].dot(diagonal_pair_mean(powers[j - i], kernel.table(i, j, S)));
    }
  }
  return c;
}

CenteringTerm joint_centering(const ChainModel& model, const InitialLaw& initial, const KernelFamily& kernel,
                              std::size_t budget, std::uint64_t seed) {
  if (budget < 2) throw std::invalid_argument("joint centering needs a Monte Carlo budget of at least 2 paths");
  double sum = 0.0;
  double sq = 0.0;
  for (std::size_t k = 0; k < budget; ++k) {
    const ChainPath path = simulate(model, kernel.horizon(), seed, initial, hash_combine(0xce47e5, k));
    const double v = raw_pair_sum(path, kernel);
    sum += v;
    sq += v * v;
  }
  const auto N = static_cast<double>(budget);
  const double mean = sum / N;
  CenteringTerm c;
  c.kind = Centering::joint_expectation;
  c.exact = false;
  c.total = mean;
  c.standard_error = std::sqrt(std::max(0.0, sq / N - mean * mean) / (N - 1.0));
  return c;
}

CenteringTerm make_centering(const ChainModel& model, const KernelFamily& kernel, Centering kind,
                             const CenteringOptions& options) {
  if (kind == Centering::none) return {};
  if (const auto* chain = std::get_if<FiniteChain>(&model)) {
    if (kind == Centering::pi_expectation) return pi_centering(kernel, stationary_distribution(*chain));
    return joint_centering(*chain, initial_distribution(*chain, options.initial), kernel);
  }
  if (options.mc_budget == 0) {
    throw std::invalid_argument(fmt::format("{} centering on a {} model needs a Monte Carlo budget",
                                            to_string(kind), model_kind(model)));
  }
  if (kind == Centering::pi_expectation) {
    return pi_centering(kernel, stationary_sample(model, 2 * options.mc_budget, options.mc_seed));
  }
  return joint_centering(model, options.initial, kernel, options.mc_budget, options.mc_seed);
}

// ------------------------------------------------------------ U-statistic

double raw_pair_sum(const ChainPath& path, const KernelFamily& kernel) {
  const std::size_t n = path.length();
  double total = 0.0;
  const bool finite = path.model_kind == "finite";
  if (finite && kernel.is_separable() && kernel.base().kind() != BaseKernel::Kind::projected) {
    const auto x = path.indices();
    std::size_t S = kernel.base().finite_size();
    if (S == 0) S = *std::max_element(x.begin(), x.end()) + 1;
    const Matrix B = kernel.base().finite_table(S);
    const Weights& w = kernel.weights();
    if (!w.depends_on_i()) {
      // sum_{i<j} h(X_i, X_j) = sum_s count_j(s) h(s, X_j).
      std::vector<double> count(S, 0.0);
      count.at(x[0]) = 1.0;
      for (std::size_t j = 2; j <= n; ++j) {
        const auto xj = static_cast<Eigen::Index>(x[j - 1]);
        if (x[j - 1] >= S) throw std::out_of_range("path state outside the kernel table");
        double inner = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          if (count[s] != 0.0) inner += count[s] * B(static_cast<Eigen::Index>(s), xj);
        }
        total += w(1, j) * inner;
        count[x[j - 1]] += 1.0;
      }
      return total;
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (x[t] >= S) throw std::out_of_range("path state outside the kernel table");
    }
    for (std::size_t j = 2; j <= n; ++j) {
      const auto xj = static_cast<Eigen::Index>(x[j - 1]);
      double inner = 0.0;
      for (std::size_t i = 1; i < j; ++i) inner += w(i, j) * B(static_cast<Eigen::Index>(x[i - 1]), xj);
      total += inner;
    }
    return total;
  }
  for (std::size_t j = 2; j <= n; ++j) {
    const StateView xj = path[j - 1];
    double inner = 0.0;
    for (std::size_t i = 1; i < j; ++i) inner += kernel(i, j, path[i - 1], xj);
    total += inner;
  }
  return total;
}

UStatResult u_stat(const ChainPath& path, const KernelFamily& kernel, const CenteringTerm& center,
                   Normalization normalization) {
  const std::size_t n = path.length();
  if (n != kernel.horizon()) {
    throw std::invalid_argument(
        fmt::format("path length {} does not match the kernel horizon {}", n, kernel.horizon()));
  }
  UStatResult r;
  r.n = n;
  r.centering = center.kind;
  r.normalization = normalization;
  r.value = raw_pair_sum(path, kernel) - center.total;
  r.standard_error = center.standard_error;
  if (normalization == Normalization::pairs) {
    const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    r.value *= scale;
    r.standard_error *= scale;
  }
  return r;
}

// -------------------------------------------------------- decomposition

DecompositionResult martingale_decomposition(const FiniteChain& chain, const Vector& initial,
                                             const ChainPath& path, const KernelFamily& kernel,
                                             std::size_t t_n) {
  if (path.model_kind != "finite") {
    throw std::invalid_argument("martingale decomposition needs a finite chain (exact conditioning)");
  }
  const std::size_t n = path.length();
  if (n != kernel.horizon()) {
    throw std::invalid_argument(
        fmt::format("path length {} does not match the kernel horizon {}", n, kernel.horizon()));
  }
  if (t_n < 1 || t_n > n) throw std::invalid_argument(fmt::format("t_n = {} outside [1, {}]", t_n, n));
  const std::size_t S = chain.size();
  check_finite_path(path, S);

  const auto powers = transition_powers(chain.transition, n);
  const auto laws = marginal_laws(chain, initial, n);
  const auto x = path.indices();
  const auto X = [&](std::size_t l) { return static_cast<Eigen::Index>(x[l - 1]); };

  const bool separable = kernel.is_separable();
  Matrix B;
  std::vector<Vector> gb;
  if (separable) {
    B = kernel.base().finite_table(S);
    gb.resize(n);
    for (std::size_t d = 1; d < n; ++d) gb[d] = diagonal_pair_mean(powers[d], B);
  }

  DecompositionResult out;
  out.t_n = t_n;
  out.levels.assign(t_n, 0.0);
  std::vector<double> vals(t_n + 1);
  Matrix T_general;
  Vector g_general;
  for (std::size_t j = 2; j <= n; ++j) {
    for (std::size_t i = 1; i < j; ++i) {
      const Matrix* T = &B;
      const Vector* g = nullptr;
      double a = 1.0;
      if (separable) {
        a = kernel.weights()(i, j);
        g = &gb[j - i];
      } else {
        T_general = kernel.table(i, j, S);
        g_general = diagonal_pair_mean(powers[j - i], T_general);
        T = &T_general;
        g = &g_general;
      }
      const double Eh = a * laws[i].dot(*g);
      // E_l[h(X_i, X_j)] for l = j - m.
      const auto cond = [&](long l) -> double {
        const long li = static_cast<long>(i);
        const long lj = static_cast<long>(j);
        if (l >= lj) return a * (*T)(X(i), X(j));
        if (l < 1) return Eh;
        const auto lu = static_cast<std::size_t>(l);
        if (l >= li) return a * powers[j - lu].row(X(lu)).dot(T->row(X(i)));
        return a * powers[i - lu].row(X(lu)).dot(*g);
      };
      for (std::size_t m = 0; m <= t_n; ++m) vals[m] = cond(static_cast<long>(j) - static_cast<long>(m));
      for (std::size_t k = 1; k <= t_n; ++k) out.levels[k - 1] += vals[k - 1] - vals[k];
      out.R += vals[t_n] - Eh;
      out.u_stat += vals[0] - Eh;
    }
  }
  for (double v : out.levels) out.M += v;
  return out;
}

std::vector<double> martingale_increment_residuals(const FiniteChain& chain, const ChainPath& path,
                                                   const KernelFamily& kernel) {
  const std::size_t n = path.length();
  if (n != kernel.horizon()) {
    throw std::invalid_argument(
        fmt::format("path length {} does not match the kernel horizon {}", n, kernel.horizon()));
  }
  const std::size_t S = chain.size();
  check_finite_path(path, S);
  const Matrix& P = chain.transition;
  const auto x = path.indices();
  PairTables tables(kernel, S);
  std::vector<double> out;
  out.reserve(n - 1);
  Vector Y(static_cast<Eigen::Index>(S));
  for (std::size_t j = 2; j <= n; ++j) {
    const auto y = static_cast<Eigen::Index>(x[j - 2]);
    // Y_j as a function of the unrevealed state z = X_j.
    Y.setZero();
    for (std::size_t i = 1; i < j; ++i) {
      const Matrix T = tables(i, j);
      const auto xi = static_cast<Eigen::Index>(x[i - 1]);
      const double drift = T.row(xi).dot(P.row(y));
      for (Eigen::Index z = 0; z < Y.size(); ++z) Y[z] += T(xi, z) - drift;
    }
    out.push_back(std::abs(P.row(y).dot(Y)));
  }
  return out;
}

// ----------------------------------------------------------- rank stats

namespace {

void check_no_ties(std::span<const double> x, const char* what) {
  if (x.size() < 2) throw std::invalid_argument(fmt::format("{} needs at least 2 observations", what));
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    if (sorted[k] == sorted[k - 1]) {
      throw std::invalid_argument(fmt::format("{}: tied value {} (ties are rejected)", what, sorted[k]));
    }
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument(fmt::format("{}: non-finite value", what));
  }
}

}  // namespace

double tau_kendall(std::span<const double> x) {
  check_no_ties(x, "tau-kendall");
  const std::size_t n = x.size();
  std::size_t concordant = 0;
  for (std::size_t j = 1; j < n; ++j) {
    for (std::size_t i = 0; i < j; ++i) concordant += x[i] < x[j] ? 1 : 0;
  }
  // Each concordant pair is counted once per ordering.
  return 4.0 * static_cast<double>(concordant) / (static_cast<double>(n) * static_cast<double>(n - 1)) - 1.0;
}

double tau_ap(std::span<const double> x) {
  check_no_ties(x, "tau-ap");
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    std::size_t below = 0;
    for (std::size_t i = 0; i < j; ++i) below += x[i] < x[j] ? 1 : 0;
    s += static_cast<double>(below) / static_cast<double>(j);
  }
  return 2.0 / static_cast<double>(n - 1) * s - 1.0;
}

KernelFamily tau_ap_kernel(std::size_t n) {
  return KernelFamily::separable(BaseKernel::indicator_less(), Weights::inverse_later_index(), n);
}

double wilcoxon_weighted(std::span<const double> sample0, std::span<const double> sample1,
                         std::span<const double> weights0, std::span<const double> weights1) {
  if (sample0.empty() || sample1.empty()) throw std::invalid_argument("wilcoxon: samples must be non-empty");
  if (sample0.size() != weights0.size() || sample1.size() != weights1.size()) {
    throw std::invalid_argument("wilcoxon: each sample needs one weight per observation");
  }
  const auto check = [](std::span<const double> w) {
    double t = 0.0;
    for (double v : w) {
      if (!std::isfinite(v)) throw std::invalid_argument("wilcoxon: non-finite weight");
      if (v < 0.0) throw std::invalid_argument("wilcoxon: negative weight");
      t += v;
    }
    if (t == 0.0) throw std::invalid_argument("wilcoxon: zero total weight");
    return t;
  };
  const double t0 = check(weights0);
  const double t1 = check(weights1);
  double s = 0.0;
  for (std::size_t i = 0; i < sample0.size(); ++i) {
    for (std::size_t j = 0; j < sample1.size(); ++j) {
      const double a = sample0[i];
      const double b = sample1[j];
      const double h = 0.5 * (a < b ? 1.0 : 0.0) + 0.5 * (a <= b ? 1.0 : 0.0);
      s += h * weights0[i] * weights1[j];
    }
  }
  return s / (t0 * t1);
}

std::string statistic_csv_header() { return "statistic,n,seed,centering,value,stderr\n"; }

std::string statistic_csv_row(const std::string& statistic, std::size_t n, std::uint64_t seed,
                              const std::string& centering, double value, double stderr_value) {
  return fmt::format("{},{},{},{},{},{}\n", statistic, n, seed, centering, format_number(value),
                     format_number(stderr_value));
}

}  // namespace ustatlab
