#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "support.hpp"
#include "ustatlab/experiments.hpp"
#include "ustatlab/report_io.hpp"

using namespace ustatlab;

namespace {

Matrix ref_P() {
  Matrix P(2, 2);
  P << 0.9, 0.1, 0.2, 0.8;
  return P;
}

Vector f_vec() {
  Vector f(2);
  f << 1.0, -2.0;
  return f;
}

ExperimentPlan tail_plan() {
  ExperimentPlan p;
  p.model = FiniteChain::create(ref_P());
  p.kernel = KernelFamily::separable(BaseKernel::product(f_vec()), Weights::unit(), 2);
  p.n_grid = {32, 64};
  p.u_grid = {1.0, 2.0, 3.0, 4.0};
  p.replicates = 200;
  p.seed = 17;
  return p;
}

}  // namespace

TEST_CASE("replicate streams are distinct") {
  CHECK(replicate_stream(64, 0) != replicate_stream(64, 1));
  CHECK(replicate_stream(64, 1) != replicate_stream(128, 1));
  CHECK(replicate_stream(64, 1) == replicate_stream(64, 1));
}

TEST_CASE("parallel_for is order independent") {
  std::vector<double> a(1000);
  std::vector<double> b(1000);
  parallel_for(a.size(), 1, [&](std::size_t k) { a[k] = std::sqrt(static_cast<double>(k)); });
  parallel_for(b.size(), 4, [&](std::size_t k) { b[k] = std::sqrt(static_cast<double>(k)); });
  CHECK(a == b);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t k) {
                    if (k == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("empirical quantile, NNLS and slope fit") {
  std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(empirical_quantile(v, 0.2) == 1.0);
  CHECK(empirical_quantile(v, 0.5) == 3.0);
  CHECK(empirical_quantile(v, 1.0) == 5.0);
  double prev = -1.0;
  for (double level = 0.05; level <= 1.0; level += 0.05) {
    const double q = empirical_quantile(v, level);
    CHECK(q >= prev);
    prev = q;
  }

  Matrix A(4, 2);
  A << 1, 0, 0, 1, 1, 1, 2, 1;
  Vector truth(2);
  truth << 0.5, 2.0;
  const Vector x = nnls(A, A * truth);
  CHECK((x - truth).cwiseAbs().maxCoeff() < 1e-10);
  Vector b(4);
  b << -1, -1, -2, -3;
  const Vector z = nnls(A, b);
  CHECK(z.minCoeff() >= 0.0);
  CHECK(z.cwiseAbs().maxCoeff() < 1e-12);

  const auto fit = fit_slope({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(fit.slope == doctest::Approx(2.0));
  CHECK(fit.intercept == doctest::Approx(1.0));
  CHECK(fit.slope_se == doctest::Approx(0.0));
}

TEST_CASE("tail experiment on the reference chain") {
  const auto rep = tail_experiment(tail_plan());
  CHECK(rep.files.count("raw.csv") == 1);
  CHECK(rep.files.count("quantiles.csv") == 1);
  CHECK(rep.files.at("raw.csv").rfind("n,replicate,seed,value\n", 0) == 0);
  CHECK(rep.files.at("quantiles.csv").rfind("n,u,level,quantile,bound_T1a,bound_T1b,bound_T2", 0) == 0);
  // Quantiles nondecreasing in u at each n.
  for (std::size_t n : {32, 64}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& c : rep.cells) {
      if (c.n != n || c.skipped) continue;
      CHECK(c.quantile >= prev);
      prev = c.quantile;
      if (!c.held_out) CHECK(c.ratio_T1a <= 1.0 + 1e-12);
    }
  }
  CHECK(rep.summary.contains("kappa"));
  CHECK(rep.passed);
  CHECK_THROWS_AS(
      [] {
        auto p = tail_plan();
        p.replicates = 50;
        return tail_experiment(p);
      }(),
      std::invalid_argument);
}

TEST_CASE("zero kernel: tail ratios vanish, rate aborts") {
  auto p = tail_plan();
  p.kernel = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 2);
  const auto rep = tail_experiment(p);
  for (const auto& c : rep.cells) {
    if (c.skipped) continue;
    CHECK(c.quantile == 0.0);
    CHECK(c.ratio_T1a == 0.0);
  }
  p.n_grid = {16, 32, 64};
  p.replicates = 100;
  CHECK_THROWS_AS(rate_experiment(p), std::domain_error);
  p.n_grid = {16, 32};
  CHECK_THROWS_AS(rate_experiment(p), std::invalid_argument);
}

TEST_CASE("degenerate probability levels are rejected") {
  auto p = tail_plan();
  p.u_grid = {0.01, 0.1};
  p.beta = 5.0;
  CHECK_THROWS_AS(tail_experiment(p), std::domain_error);
}

TEST_CASE("calibrated bound covers the held-out u") {
  auto p = tail_plan();
  p.beta = std::nullopt;
  p.replicates = 1000;
  const auto rep = tail_experiment(p);
  CHECK(rep.summary.contains("beta"));
  for (const auto& c : rep.cells) {
    if (c.held_out && !c.skipped) CHECK(c.quantile <= 1.05 * c.bound_T1a);
  }
  CHECK(rep.summary["held_out_coverage"] == true);
  CHECK(rep.passed);
}

TEST_CASE("degenerate scaling: iid spread shrinks like 1/n") {
  Matrix iid(2, 2);
  iid << 0.5, 0.5, 0.5, 0.5;
  Vector f(2);
  f << 1.0, -1.0;
  ExperimentPlan p;
  p.model = FiniteChain::create(iid);
  p.kernel = KernelFamily::separable(BaseKernel::product(f), Weights::unit(), 2);
  p.replicates = 2000;
  p.seed = 3;
  const auto a = replicate_statistics(p, p.kernel.with_horizon(64), 64, Normalization::pairs);
  const auto b = replicate_statistics(p, p.kernel.with_horizon(256), 256, Normalization::pairs);
  const auto sd = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  // Var of (2/(n(n-1))) sum_{i<j} e_i e_j is 2/(n(n-1)) for Rademacher e.
  CHECK(sd(a) == doctest::Approx(std::sqrt(2.0 / (64.0 * 63.0))).epsilon(0.1));
  CHECK(sd(b) == doctest::Approx(std::sqrt(2.0 / (256.0 * 255.0))).epsilon(0.1));
}

TEST_CASE("identity suite") {
  const auto chain = FiniteChain::create(ref_P());
  const auto fam = KernelFamily::separable(BaseKernel::product(f_vec()), Weights::unit(), 100);
  IdentityOptions o;
  o.seed = 4;
  const auto rep = identity_suite(chain, fam, 100, 13, 50, o);
  CHECK(rep.passed);
  CHECK(rep.summary["max_decomposition_residual"].get<double>() <= 1e-9);
  CHECK(rep.summary["max_martingale_residual"].get<double>() <= 1e-10);
  CHECK(rep.summary["max_abs_R"].get<double>() <= 2928.0);
  CHECK(rep.summary["remainder_bound_stationary"].get<double>() == 2928.0);
}

TEST_CASE("regeneration suite") {
  const auto chain = FiniteChain::create(ref_P());
  const auto rep = regeneration_suite(chain, ergodicity_constants(chain), 200000, 8);
  CHECK(rep.passed);
  CHECK(rep.summary["block_mean_target"].get<double>() == doctest::Approx(20.0 / 9.0));
  CHECK(rep.summary["tail_slope"].get<double>() < 0.0);

  Matrix iid(2, 2);
  iid << 0.5, 0.5, 0.5, 0.5;
  const auto ci = FiniteChain::create(iid);
  const auto full = regeneration_suite(ci, ergodicity_constants(ci), 5000, 1);
  CHECK(full.summary["tau_hat"].get<double>() == doctest::Approx(1.0 / std::log(2.0)).epsilon(1e-6));
  CHECK(full.summary["mean_T"].get<double>() == 1.0);
}

TEST_CASE("reports are byte-identical across thread counts") {
  auto p = tail_plan();
  p.threads = 1;
  const auto a = tail_experiment(p);
  p.threads = 3;
  const auto b = tail_experiment(p);
  CHECK(a.files == b.files);
  CHECK(dump_json(a.summary) == dump_json(b.summary));

  const auto dir = std::filesystem::temp_directory_path() / "ustatlab_report_test";
  std::filesystem::remove_all(dir);
  write_report(a, dir);
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK(std::filesystem::exists(dir / "timing.json"));
  CHECK(read_text_file(dir / "quantiles.csv") == a.files.at("quantiles.csv"));
  std::filesystem::remove_all(dir);
}
