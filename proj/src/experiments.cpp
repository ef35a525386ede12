#include "ustatlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "ustatlab/report_io.hpp"
#include "ustatlab/rng.hpp"
#include "ustatlab/splitting.hpp"

namespace ustatlab {

// ------------------------------------------------------------ plumbing

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::mutex error_mutex;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count && !failed; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::uint64_t replicate_stream(std::size_t n, std::size_t replicate) { return hash_combine(n, replicate); }

std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::ustat:
      return "ustat";
    case Statistic::decomposition_check:
      return "decomposition-check";
    case Statistic::block_mean:
      return "block-mean";
    case Statistic::tail:
      return "tail";
    case Statistic::rate:
      return "rate";
  }
  return "ustat";
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  for (const auto& [name, contents] : report.files) write_text_file(dir / name, contents);
  write_text_file(dir / "summary.json", dump_json(report.summary));
  nlohmann::ordered_json timing;
  timing["kind"] = report.kind;
  timing["wall_seconds"] = report.wall_seconds;
  write_text_file(dir / "timing.json", dump_json(timing));
}

double empirical_quantile(std::vector<double> values, double level) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument(fmt::format("quantile level {} outside (0, 1]", level));
  std::sort(values.begin(), values.end());
  const auto m = static_cast<double>(values.size());
  auto k = static_cast<std::size_t>(std::ceil(level * m - 1e-9));
  k = std::clamp<std::size_t>(k, 1, values.size());
  return values[k - 1];
}

Vector nnls(const Matrix& A, const Vector& b, std::size_t max_iterations) {
  const Eigen::Index n = A.cols();
  Vector x = Vector::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()) * std::max(1.0, b.cwiseAbs().maxCoeff());

  const auto solve_passive = [&](Vector& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (passive[static_cast<std::size_t>(k)]) idx.push_back(k);
    }
    z = Vector::Zero(n);
    if (idx.empty()) return;
    Matrix Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) Ap.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
    const Vector zp = Ap.colPivHouseholderQr().solve(b);
    for (std::size_t c = 0; c < idx.size(); ++c) z[idx[c]] = zp[static_cast<Eigen::Index>(c)];
  };

  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    const Vector w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!passive[static_cast<std::size_t>(k)] && w[k] > best_w) {
        best_w = w[k];
        best = k;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    for (std::size_t inner = 0; inner < max_iterations; ++inner) {
      Vector z;
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (passive[static_cast<std::size_t>(k)] && z[k] <= 0.0) feasible = false;
      }
      if (feasible) {
        x = z;
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < n; ++k) {
        if (passive[static_cast<std::size_t>(k)] && z[k] <= 0.0) alpha = std::min(alpha, x[k] / (x[k] - z[k]));
      }
      x += alpha * (z - x);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (passive[static_cast<std::size_t>(k)] && x[k] <= tol) {
          passive[static_cast<std::size_t>(k)] = false;
          x[k] = 0.0;
        }
      }
    }
  }
  return x;
}

SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("slope fit needs at least 3 points");
  const auto m = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / m;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / m;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - f.intercept - f.slope * x[k];
    rss += r * r;
  }
  f.slope_se = std::sqrt(rss / (m - 2.0) / sxx);
  return f;
}

std::vector<double> replicate_statistics(const ExperimentPlan& plan, const KernelFamily& kernel, std::size_t n,
                                         Normalization normalization) {
  CenteringOptions opts;
  opts.mc_budget = plan.mc_budget;
  opts.mc_seed = hash_combine(plan.seed, n);
  opts.initial = plan.initial;
  const CenteringTerm center = make_centering(plan.model, kernel, plan.centering, opts);
  std::vector<double> values(plan.replicates);
  parallel_for(plan.replicates, plan.threads, [&](std::size_t r) {
    const ChainPath path = simulate(plan.model, n, plan.seed, plan.initial, replicate_stream(n, r));
    values[r] = u_stat(path, kernel, center, normalization).value;
  });
  return values;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string raw_csv(std::size_t n, std::uint64_t seed, const std::vector<double>& values) {
  std::string out;
  for (std::size_t r = 0; r < values.size(); ++r) {
    out += fmt::format("{},{},{},{}\n", n, r, seed, format_number(values[r]));
  }
  return out;
}

void check_plan_grid(const ExperimentPlan& plan) {
  if (plan.n_grid.empty()) throw std::invalid_argument("experiment needs a non-empty n_grid");
  for (std::size_t n : plan.n_grid) {
    if (n < 2) throw std::invalid_argument("every horizon in n_grid must be at least 2");
  }
  if (plan.replicates == 0) throw std::invalid_argument("experiment needs replicates > 0");
}

nlohmann::ordered_json plan_json(const ExperimentPlan& plan) {
  nlohmann::ordered_json j;
  j["model"] = model_kind(plan.model);
  j["kernel"] = plan.kernel.name();
  j["n_grid"] = plan.n_grid;
  j["replicates"] = plan.replicates;
  j["u_grid"] = plan.u_grid;
  j["seed"] = plan.seed;
  j["centering"] = to_string(plan.centering);
  j["statistic"] = to_string(plan.statistic);
  return j;
}

double ratio(double q, double bound) {
  if (bound > 0.0) return q / bound;
  return q <= 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

BoundConstants constants_for(const ExperimentPlan& plan, const KernelFamily& kernel) {
  if (const auto* chain = std::get_if<FiniteChain>(&plan.model)) {
    const auto ergo = ergodicity_constants(*chain);
    return finite_bound_constants(*chain, ergo, kernel, initial_distribution(*chain, plan.initial), plan.r);
  }
  BoundConstants c;
  const double N = static_cast<double>(kernel.horizon());
  c.n = kernel.horizon();
  c.A = 2.0 * kernel.sup_bound();
  c.Bn = c.A * std::sqrt(N);
  c.Cn = c.A * N;
  c.method = BoundMethod::monte_carlo;
  c.flags.push_back("continuous model: coarse B_n = A sqrt(n), C_n = A n");
  return c;
}

struct TailGrid {
  std::vector<QuantileCell> cells;
  double nnls_residual = 0.0;
  nlohmann::ordered_json nnls_fits = nlohmann::ordered_json::array();
};

// Quantiles of each horizon's replicate values at the levels 1 - beta e^{-u} log n.
TailGrid tail_grid(const ExperimentPlan& plan, const std::vector<std::vector<double>>& values, double beta) {
  TailGrid g;
  for (std::size_t a = 0; a < plan.n_grid.size(); ++a) {
    const std::size_t n = plan.n_grid[a];
    std::vector<double> us;
    std::vector<double> qs;
    for (double u : plan.u_grid) {
      QuantileCell c;
      c.n = n;
      c.u = u;
      c.level = probability_level(beta, n, u);
      c.skipped = !(c.level > 0.0 && c.level < 1.0);
      c.quantile = c.skipped ? std::numeric_limits<double>::quiet_NaN() : empirical_quantile(values[a], c.level);
      if (!c.skipped) {
        us.push_back(u);
        qs.push_back(c.quantile);
      }
      g.cells.push_back(c);
    }
    nlohmann::ordered_json fit;
    fit["n"] = n;
    if (us.size() >= 2) {
      Matrix F(static_cast<Eigen::Index>(us.size()), 5);
      Vector y(static_cast<Eigen::Index>(us.size()));
      for (std::size_t k = 0; k < us.size(); ++k) {
        const double u = us[k];
        F.row(static_cast<Eigen::Index>(k)) << std::sqrt(u), u, u * std::sqrt(u), u * u, 1.0;
        y[static_cast<Eigen::Index>(k)] = qs[k];
      }
      const Vector coef = nnls(F, y);
      const double scale = std::max(y.squaredNorm(), 1e-300);
      g.nnls_residual += (F * coef - y).squaredNorm() / scale;
      fit["coefficients"] = std::vector<double>(coef.data(), coef.data() + coef.size());
    } else {
      fit["coefficients"] = nullptr;
    }
    g.nnls_fits.push_back(fit);
  }
  return g;
}

}  // namespace

// ----------------------------------------------------------- tail

ExperimentReport tail_experiment(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  check_plan_grid(plan);
  if (plan.replicates < 100) throw std::invalid_argument("tail experiment needs at least 100 replicates");
  if (plan.u_grid.empty()) throw std::invalid_argument("tail experiment needs a non-empty u_grid");
  for (double u : plan.u_grid) {
    if (!(u > 0.0)) throw std::invalid_argument("every u in u_grid must be positive");
  }

  ExperimentReport rep;
  rep.kind = "tail";
  std::vector<std::vector<double>> values;
  std::vector<BoundConstants> constants;
  std::string raw = "n,replicate,seed,value\n";
  for (std::size_t n : plan.n_grid) {
    const KernelFamily k = plan.kernel.with_horizon(n);
    values.push_back(replicate_statistics(plan, k, n, Normalization::raw));
    raw += raw_csv(n, plan.seed, values.back());
    constants.push_back(constants_for(plan, k));
  }
  rep.files["raw.csv"] = raw;

  // beta: supplied, or the grid value whose quantile curves best follow the
  // theorem's functional form.
  double beta = plan.beta.value_or(1.0);
  std::string beta_source = "supplied";
  TailGrid grid;
  if (plan.beta) {
    grid = tail_grid(plan, values, beta);
  } else {
    beta_source = "calibrated";
    bool first = true;
    for (double b : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) {
      TailGrid g = tail_grid(plan, values, b);
      const bool usable = std::any_of(g.cells.begin(), g.cells.end(), [](const auto& c) { return !c.skipped; });
      if (!usable) continue;
      if (first || g.nnls_residual < grid.nnls_residual) {
        grid = std::move(g);
        beta = b;
        first = false;
      }
    }
    if (first) grid = tail_grid(plan, values, beta);
  }
  if (std::all_of(grid.cells.begin(), grid.cells.end(), [](const auto& c) { return c.skipped; })) {
    throw std::domain_error("degenerate quantile level: 1 - beta e^{-u} log n is outside (0, 1) for every cell");
  }

  const double held_out = plan.held_out_u.value_or(*std::max_element(plan.u_grid.begin(), plan.u_grid.end()));
  const bool has_held_out = plan.calibrate && plan.u_grid.size() > 1;

  // kappa per variant: the smallest value dominating every calibration cell.
  const TheoremVariant variants[3] = {TheoremVariant::T1a, TheoremVariant::T1b, TheoremVariant::T2};
  double kappa[3] = {plan.kappa, plan.kappa, plan.kappa};
  if (plan.calibrate) {
    for (int v = 0; v < 3; ++v) {
      double k = 0.0;
      for (const auto& c : grid.cells) {
        if (c.skipped || (has_held_out && c.u == held_out)) continue;
        const std::size_t a = static_cast<std::size_t>(
            std::find(plan.n_grid.begin(), plan.n_grid.end(), c.n) - plan.n_grid.begin());
        BoundConstants bc = constants[a];
        bc.kappa = 1.0;
        k = std::max(k, ratio(c.quantile, theorem_rhs(variants[v], bc, c.n, c.u)));
      }
      kappa[v] = k;
    }
  }

  std::string qcsv = "n,u,level,quantile,bound_T1a,bound_T1b,bound_T2\n";
  bool coverage = true;
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (auto& c : grid.cells) {
    const std::size_t a = static_cast<std::size_t>(
        std::find(plan.n_grid.begin(), plan.n_grid.end(), c.n) - plan.n_grid.begin());
    double* bounds[3] = {&c.bound_T1a, &c.bound_T1b, &c.bound_T2};
    double* ratios[3] = {&c.ratio_T1a, &c.ratio_T1b, &c.ratio_T2};
    for (int v = 0; v < 3; ++v) {
      BoundConstants bc = constants[a];
      bc.kappa = kappa[v];
      *bounds[v] = theorem_rhs(variants[v], bc, c.n, c.u);
      *ratios[v] = c.skipped ? 0.0 : ratio(c.quantile, *bounds[v]);
    }
    c.held_out = has_held_out && c.u == held_out;
    if (c.skipped) {
      skipped.push_back({{"n", c.n}, {"u", c.u}, {"level", c.level}});
    } else if (c.held_out) {
      for (int v = 0; v < 3; ++v) {
        if (c.quantile > 1.05 * *bounds[v] + 1e-300) coverage = false;
      }
    }
    qcsv += fmt::format("{},{},{},{},{},{},{}\n", c.n, format_number(c.u), format_number(c.level),
                        format_number(c.quantile), format_number(c.bound_T1a), format_number(c.bound_T1b),
                        format_number(c.bound_T2));
  }
  rep.files["quantiles.csv"] = qcsv;
  rep.cells = grid.cells;

  auto& s = rep.summary;
  s["experiment"] = "tail";
  s["plan"] = plan_json(plan);
  s["beta"] = beta;
  s["beta_source"] = beta_source;
  s["kappa"] = {{"T1a", kappa[0]}, {"T1b", kappa[1]}, {"T2", kappa[2]}};
  s["kappa_source"] = plan.calibrate ? "calibrated" : "supplied";
  s["held_out_u"] = has_held_out ? nlohmann::ordered_json(held_out) : nlohmann::ordered_json(nullptr);
  s["held_out_coverage"] = coverage;
  s["nnls_fits"] = grid.nnls_fits;
  s["skipped_cells"] = skipped;
  nlohmann::ordered_json cs = nlohmann::ordered_json::array();
  for (const auto& c : constants) cs.push_back(to_json(c));
  s["constants"] = cs;
  // Coverage is only promised when both kappa and beta were fitted.
  if (has_held_out && !plan.beta && !coverage) {
    rep.passed = false;
    rep.failures.push_back("held-out quantile exceeds the calibrated bound by more than 5%");
  }
  s["passed"] = rep.passed;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ----------------------------------------------------------- rate

ExperimentReport rate_experiment(const ExperimentPlan& plan) {
  const auto t0 = Clock::now();
  check_plan_grid(plan);
  if (plan.n_grid.size() < 3) throw std::invalid_argument("rate experiment needs an n_grid with at least 3 points");
  if (!plan.kernel.is_separable()) throw std::invalid_argument("rate experiment needs a separable base kernel");

  ExperimentReport rep;
  rep.kind = "rate";
  const BaseKernel& base = plan.kernel.base();
  const std::pair<const char*, Weights> families[2] = {{"unweighted", Weights::unit()},
                                                        {"weighted", Weights::inverse_gap()}};
  std::vector<double> log_n;
  for (std::size_t n : plan.n_grid) log_n.push_back(std::log(static_cast<double>(n)));
  SlopeFit fits[2];
  for (int f = 0; f < 2; ++f) {
    std::string raw = "n,replicate,seed,value\n";
    std::vector<double> log_q;
    std::vector<double> qs;
    for (std::size_t n : plan.n_grid) {
      const KernelFamily k = KernelFamily::separable(base, families[f].second, n);
      auto values = replicate_statistics(plan, k, n, Normalization::pairs);
      raw += raw_csv(n, plan.seed, values);
      for (double& v : values) v = std::abs(v);
      const double q = empirical_quantile(values, plan.rate_quantile);
      if (!(q > 0.0) || !std::isfinite(q)) {
        throw std::domain_error(fmt::format("degenerate quantile: the {} quantile of |U| is {} at n = {}",
                                            plan.rate_quantile, q, n));
      }
      qs.push_back(q);
      log_q.push_back(std::log(q));
    }
    fits[f] = fit_slope(log_n, log_q);
    fits[f].quantiles = qs;
    rep.files[fmt::format("raw_{}.csv", families[f].first)] = raw;
  }
  rep.unweighted = fits[0];
  rep.weighted = fits[1];
  const double separation = fits[0].slope - fits[1].slope;
  const bool unweighted_ok = fits[0].slope >= -1.2 && fits[0].slope <= -0.8;
  const bool weighted_ok = fits[1].slope >= -1.8 && fits[1].slope <= -1.2;
  const bool separated = separation >= 0.3;
  if (!unweighted_ok) rep.failures.push_back("unweighted slope outside [-1.2, -0.8]");
  if (!weighted_ok) rep.failures.push_back("weighted slope outside [-1.8, -1.2]");
  if (!separated) rep.failures.push_back("slope separation below 0.3");
  rep.passed = rep.failures.empty();

  std::string qcsv = "kernel,n,quantile\n";
  for (int f = 0; f < 2; ++f) {
    for (std::size_t a = 0; a < plan.n_grid.size(); ++a) {
      qcsv += fmt::format("{},{},{}\n", families[f].first, plan.n_grid[a], format_number(fits[f].quantiles[a]));
    }
  }
  rep.files["rate_quantiles.csv"] = qcsv;

  auto& s = rep.summary;
  s["experiment"] = "rate";
  s["plan"] = plan_json(plan);
  s["quantile_level"] = plan.rate_quantile;
  for (int f = 0; f < 2; ++f) {
    s[families[f].first] = {{"slope", fits[f].slope},
                            {"slope_se", fits[f].slope_se},
                            {"intercept", fits[f].intercept},
                            {"quantiles", fits[f].quantiles}};
  }
  s["separation"] = separation;
  s["passed"] = rep.passed;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

// ------------------------------------------------------- identities

ExperimentReport identity_suite(const FiniteChain& chain, const KernelFamily& kernel, std::size_t n,
                                std::size_t t_n, std::size_t replicates, const IdentityOptions& options) {
  const auto t0 = Clock::now();
  if (replicates == 0) throw std::invalid_argument("identity suite needs replicates > 0");
  const KernelFamily k = kernel.with_horizon(n);
  const Vector initial = initial_distribution(chain, options.initial);
  const bool stationary = initial.size() == 0;
  const auto ergo = ergodicity_constants(chain);
  const double A = sup_constant_A(k, chain.size()).A;
  const auto canon = pi_canonical_deviation(k, ergo.pi);
  const CenteringTerm center = joint_centering(chain, initial, k);
  const ChainModel model = chain;

  struct Row {
    double decomposition = 0.0;
    double martingale = 0.0;
    double abs_R = 0.0;
  };
  std::vector<Row> rows(replicates);
  parallel_for(replicates, options.threads, [&](std::size_t r) {
    const ChainPath path = simulate(model, n, options.seed, options.initial, replicate_stream(n, r));
    const auto dec = martingale_decomposition(chain, initial, path, k, t_n);
    const double U = u_stat(path, k, center).value;
    rows[r].decomposition = std::abs(dec.M + dec.R - U) / (1.0 + std::abs(U));
    const auto mres = martingale_increment_residuals(chain, path, k);
    rows[r].martingale = mres.empty() ? 0.0 : *std::max_element(mres.begin(), mres.end());
    rows[r].abs_R = std::abs(dec.R);
  });

  Row worst;
  std::string csv = "replicate,decomposition_residual,martingale_residual,abs_R\n";
  for (std::size_t r = 0; r < replicates; ++r) {
    worst.decomposition = std::max(worst.decomposition, rows[r].decomposition);
    worst.martingale = std::max(worst.martingale, rows[r].martingale);
    worst.abs_R = std::max(worst.abs_R, rows[r].abs_R);
    csv += fmt::format("{},{},{},{}\n", r, format_number(rows[r].decomposition), format_number(rows[r].martingale),
                       format_number(rows[r].abs_R));
  }
  const double bound_general = remainder_bound(RemainderVariant::general, A, ergo.L, n, t_n);
  const double bound_stationary = remainder_bound(RemainderVariant::stationary, A, ergo.L, n, t_n);
  const double applicable = stationary ? bound_stationary : bound_general;

  ExperimentReport rep;
  rep.kind = "identity";
  rep.files["identity.csv"] = csv;
  if (worst.decomposition > options.decomposition_tolerance) {
    rep.failures.push_back(fmt::format("decomposition residual {} exceeds {}", worst.decomposition,
                                       options.decomposition_tolerance));
  }
  if (worst.martingale > options.martingale_tolerance) {
    rep.failures.push_back(
        fmt::format("martingale residual {} exceeds {}", worst.martingale, options.martingale_tolerance));
  }
  // The remainder bounds assume a pi-canonical kernel.
  if (canon.canonical && worst.abs_R > applicable) {
    rep.failures.push_back(fmt::format("|R| = {} exceeds the remainder bound {}", worst.abs_R, applicable));
  }
  rep.passed = rep.failures.empty();

  auto& s = rep.summary;
  s["experiment"] = "identity";
  s["n"] = n;
  s["t_n"] = t_n;
  s["replicates"] = replicates;
  s["seed"] = options.seed;
  s["stationary"] = stationary;
  s["kernel"] = k.name();
  s["pi_canonical"] = canon.canonical;
  s["max_decomposition_residual"] = worst.decomposition;
  s["max_martingale_residual"] = worst.martingale;
  s["max_abs_R"] = worst.abs_R;
  s["A"] = A;
  s["L"] = ergo.L;
  s["remainder_bound_general"] = bound_general;
  s["remainder_bound_stationary"] = bound_stationary;
  s["remainder_bound_applied"] = stationary ? "stationary" : "general";
  s["failures"] = rep.failures;
  s["passed"] = rep.passed;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport regeneration_suite(const FiniteChain& chain, const ErgodicityConstants& constants,
                                    std::size_t steps, std::uint64_t seed, std::optional<Vector> f) {
  const auto t0 = Clock::now();
  const std::size_t S = chain.size();
  Vector fv = f.value_or(Vector::Unit(static_cast<Eigen::Index>(S), 0));
  if (fv.size() != static_cast<Eigen::Index>(S)) throw std::invalid_argument("f has the wrong number of states");
  const SplitTrace trace = split_simulate(chain, constants, steps, seed);
  const auto T = regeneration_times(trace);
  const double delta = trace.delta;

  ExperimentReport rep;
  rep.kind = "regeneration";
  auto& s = rep.summary;
  s["experiment"] = "regeneration";
  s["steps"] = steps;
  s["seed"] = seed;
  s["delta1"] = delta;
  s["n_regen"] = T.size();
  s["reconstruction_error"] = reconstruction_error(chain.transition, delta, constants.mu);

  // Block-mean identity E[Z] = pi(f) / delta.
  const auto blocks = block_sums(trace, [&](std::size_t x) { return fv[static_cast<Eigen::Index>(x)]; });
  const double target = constants.pi.dot(fv) / delta;
  const bool block_ok = std::abs(blocks.mean - target) <= 3.0 * blocks.standard_error + 1e-12;
  s["block_mean"] = blocks.mean;
  s["block_mean_se"] = blocks.standard_error;
  s["block_mean_target"] = target;
  s["block_mean_ok"] = block_ok;
  if (!block_ok) rep.failures.push_back("block mean is more than 3 standard errors from pi(f) / delta");

  // T_2, T_3, ... are geometric(delta).
  std::vector<double> later(T.begin() + 1, T.end());
  if (later.size() >= 2) {
    const double m = std::accumulate(later.begin(), later.end(), 0.0) / static_cast<double>(later.size());
    double v = 0.0;
    for (double t : later) v += (t - m) * (t - m);
    const double se = std::sqrt(v / static_cast<double>(later.size() - 1) / static_cast<double>(later.size()));
    const bool ok = std::abs(m - 1.0 / delta) <= 3.0 * se + 1e-12;
    s["mean_T"] = m;
    s["mean_T_se"] = se;
    s["mean_T_target"] = 1.0 / delta;
    s["mean_T_ok"] = ok;
    if (!ok) rep.failures.push_back("mean regeneration gap is more than 3 standard errors from 1 / delta");
  }

  if (later.size() >= 1000) {
    try {
      const auto o = orlicz_norm_estimate(later);
      s["tau_hat"] = o.tau_hat;
      s["tau_bracket"] = {o.lower, o.upper};
    } catch (const std::exception& e) {
      s["tau_hat"] = nullptr;
      rep.failures.push_back(std::string("Orlicz estimate failed: ") + e.what());
    }
  } else {
    s["tau_hat"] = nullptr;
    rep.failures.push_back("fewer than 1000 regenerations for the Orlicz estimate");
  }

  std::vector<std::size_t> gaps(T.begin() + 1, T.end());
  try {
    const auto fit = geometric_tail_fit(gaps);
    s["tail_slope"] = fit.slope;
    s["tail_slope_se"] = fit.slope_se;
    s["tail_slope_reference"] = delta < 1.0 ? std::log(1.0 - delta) : -std::numeric_limits<double>::infinity();
    if (!(fit.slope < 0.0)) rep.failures.push_back("regeneration tail slope is not negative");
  } catch (const std::domain_error&) {
    // delta = 1 leaves no tail to fit.
    s["tail_slope"] = nullptr;
  }

  // Neighbouring blocks are independent when m = 1.
  if (blocks.sums.size() >= 3) {
    const auto& z = blocks.sums;
    const double m = blocks.mean;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      den += (z[i] - m) * (z[i] - m);
      if (i + 1 < z.size()) num += (z[i] - m) * (z[i + 1] - m);
    }
    const double corr = den > 0.0 ? num / den : 0.0;
    const double se = 1.0 / std::sqrt(static_cast<double>(z.size()));
    s["block_lag1_correlation"] = corr;
    s["block_lag1_correlation_se"] = se;
    if (std::abs(corr) > 3.0 * se) rep.failures.push_back("consecutive block sums are correlated");
  }

  // Empirical transitions of the split chain against P.
  Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  for (std::size_t t = 0; t + 1 < trace.path.size(); ++t) {
    counts(static_cast<Eigen::Index>(trace.path[t]), static_cast<Eigen::Index>(trace.path[t + 1])) += 1.0;
  }
  double worst_z = 0.0;
  for (Eigen::Index x = 0; x < counts.rows(); ++x) {
    const double row = counts.row(x).sum();
    if (row < 1.0) continue;
    for (Eigen::Index y = 0; y < counts.cols(); ++y) {
      const double p = chain.transition(x, y);
      const double se = std::sqrt(std::max(p * (1.0 - p), 1e-300) / row);
      const double dev = std::abs(counts(x, y) / row - p);
      if (p > 0.0 && p < 1.0) worst_z = std::max(worst_z, dev / se);
      if ((p == 0.0 || p == 1.0) && dev > 0.0) worst_z = std::numeric_limits<double>::infinity();
    }
  }
  s["transition_max_z"] = worst_z;
  rep.passed = rep.failures.empty();
  s["failures"] = rep.failures;
  s["passed"] = rep.passed;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

ExperimentReport run_experiment(const ExperimentPlan& plan) {
  switch (plan.statistic) {
    case Statistic::tail:
      return tail_experiment(plan);
    case Statistic::rate:
      return rate_experiment(plan);
    case Statistic::decomposition_check:
    case Statistic::block_mean: {
      const auto* chain = std::get_if<FiniteChain>(&plan.model);
      if (chain == nullptr) throw std::invalid_argument(to_string(plan.statistic) + " needs a finite chain");
      check_plan_grid(plan);
      const std::size_t n = plan.n_grid.front();
      const auto ergo = ergodicity_constants(*chain);
      if (plan.statistic == Statistic::block_mean) return regeneration_suite(*chain, ergo, n, plan.seed);
      IdentityOptions o;
      o.seed = plan.seed;
      o.initial = plan.initial;
      o.threads = plan.threads;
      return identity_suite(*chain, plan.kernel, n, compute_tn(ergo.rho, n, plan.r).t_n, plan.replicates, o);
    }
    case Statistic::ustat: {
      const auto t0 = Clock::now();
      check_plan_grid(plan);
      ExperimentReport rep;
      rep.kind = "ustat";
      std::string raw = "n,replicate,seed,value\n";
      nlohmann::ordered_json per_n = nlohmann::ordered_json::array();
      for (std::size_t n : plan.n_grid) {
        const auto v = replicate_statistics(plan, plan.kernel.with_horizon(n), n, Normalization::raw);
        raw += raw_csv(n, plan.seed, v);
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
        per_n.push_back({{"n", n}, {"mean", m}, {"sd", std::sqrt(var)}});
      }
      rep.files["raw.csv"] = raw;
      rep.summary["experiment"] = "ustat";
      rep.summary["plan"] = plan_json(plan);
      rep.summary["per_n"] = per_n;
      rep.wall_seconds = seconds_since(t0);
      return rep;
    }
  }
  throw std::invalid_argument("unknown statistic");
}

}  // namespace ustatlab
