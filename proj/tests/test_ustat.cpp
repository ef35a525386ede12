#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "ustatlab/ustat.hpp"

using namespace ustatlab;
using testsupport::finite_path;

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

}  // namespace

TEST_CASE("u_stat examples") {
  const auto chain = FiniteChain::create(ref_P());
  const Vector pi = stationary_distribution(chain);
  const auto ff = KernelFamily::separable(BaseKernel::product(f_vec()), Weights::unit(), 3);
  const auto path = finite_path({0, 1, 0});
  const auto res = u_stat(path, ff, pi_centering(ff, pi));
  CHECK(res.value == doctest::Approx(-3.0).epsilon(1e-14));

  const auto zero = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 3);
  CHECK(u_stat(path, zero, CenteringTerm{}).value == 0.0);

  const auto cst = KernelFamily::separable(BaseKernel::constant(2.5), Weights::unit(), 3);
  CHECK(std::abs(u_stat(path, cst, joint_centering(chain, Vector{}, cst)).value) < 1e-14);

  CHECK_THROWS_AS(u_stat(finite_path({0, 1, 0, 1}), ff, CenteringTerm{}), std::invalid_argument);

  const auto pairs = u_stat(path, ff, pi_centering(ff, pi), Normalization::pairs);
  CHECK(pairs.value == doctest::Approx(-1.0));
}

TEST_CASE("raw pair sum agrees with a direct double loop") {
  RandomStream rng(31, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t S = 2 + trial % 3;
    const std::size_t n = 3 + trial % 20;
    const Matrix h = testsupport::random_table(rng, S);
    std::vector<std::size_t> xs(n);
    for (auto& x : xs) x = static_cast<std::size_t>(rng.uniform() * static_cast<double>(S));
    const auto path = finite_path(xs);
    for (const auto& w : {Weights::unit(), Weights::inverse_gap(), Weights::inverse_later_index()}) {
      const auto fam = KernelFamily::separable(BaseKernel::table(h), w, n);
      double direct = 0.0;
      for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = i + 1; j <= n; ++j) {
          direct += w(i, j) * h(static_cast<Eigen::Index>(xs[i - 1]), static_cast<Eigen::Index>(xs[j - 1]));
        }
      }
      CHECK(std::abs(raw_pair_sum(path, fam) - direct) <= 1e-12 * (1.0 + std::abs(direct)));
    }
    // Unit-weight wrapping leaves the statistic unchanged.
    const auto plain = KernelFamily::separable(BaseKernel::table(h), Weights::unit(), n);
    const auto wrapped = KernelFamily::general(
        [h](std::size_t, std::size_t, StateView x, StateView y) {
          return 1.0 * h(static_cast<Eigen::Index>(x[0]), static_cast<Eigen::Index>(y[0]));
        },
        n, h.cwiseAbs().maxCoeff(), false, "wrapped");
    CHECK(std::abs(raw_pair_sum(path, plain) - raw_pair_sum(path, wrapped)) < 1e-12);
  }
}

TEST_CASE("joint centering equals the path-space mean") {
  RandomStream rng(32, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t S = 2 + trial % 2;
    const std::size_t n = 5;
    const Matrix P = testsupport::random_transition(rng, S);
    const Vector chi = testsupport::random_law(rng, S);
    const auto chain = FiniteChain::create(P);
    const Matrix h = testsupport::random_table(rng, S);
    const auto fam = KernelFamily::separable(BaseKernel::table(h), Weights::inverse_gap(), n);
    const auto space = testsupport::enumerate_paths(P, chi, n);
    double mean = 0.0;
    for (std::size_t k = 0; k < space.paths.size(); ++k) {
      mean += space.prob[k] * raw_pair_sum(finite_path(space.paths[k]), fam);
    }
    CHECK(std::abs(joint_centering(chain, chi, fam).total - mean) < 1e-12);
  }
}

TEST_CASE("decomposition levels match path-space enumeration at n = 6") {
  RandomStream rng(33, 0);
  const std::size_t n = 6;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t S = trial < 3 ? 2 : 3;
    const Matrix P = trial == 0 ? ref_P() : testsupport::random_transition(rng, S);
    const auto chain = FiniteChain::create(P);
    const bool stationary = trial % 2 == 0;
    const Vector chi = stationary ? stationary_distribution(chain) : testsupport::random_law(rng, S);
    const Matrix h = trial == 0 ? BaseKernel::product(f_vec()).finite_table(2) : testsupport::random_table(rng, S);
    const auto fam = KernelFamily::separable(BaseKernel::table(h), trial % 3 == 2 ? Weights::inverse_gap() : Weights::unit(), n);
    const auto space = testsupport::enumerate_paths(P, chi, n);
    const auto path = simulate(chain, n, 100 + trial, stationary ? InitialLaw::stationary() : InitialLaw::from_distribution(chi));
    const auto xs = path.indices();
    for (std::size_t tn = 1; tn <= n; ++tn) {
      const auto d = martingale_decomposition(chain, stationary ? Vector{} : chi, path, fam, tn);
      REQUIRE(d.levels.size() == tn);
      std::vector<double> levels(tn, 0.0);
      double R = 0.0;
      double U = 0.0;
      for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = i + 1; j <= n; ++j) {
          const auto g = [&](const std::vector<std::size_t>& q) {
            return fam.weights()(i, j) * h(static_cast<Eigen::Index>(q[i - 1]), static_cast<Eigen::Index>(q[j - 1]));
          };
          const auto E = [&](long m) { return testsupport::conditional_mean(space, xs, m, g); };
          for (std::size_t k = 1; k <= tn; ++k) {
            levels[k - 1] += E(static_cast<long>(j) - static_cast<long>(k) + 1) - E(static_cast<long>(j) - static_cast<long>(k));
          }
          R += E(static_cast<long>(j) - static_cast<long>(tn)) - E(0);
          U += g(xs) - E(0);
        }
      }
      for (std::size_t k = 0; k < tn; ++k) CHECK(std::abs(d.levels[k] - levels[k]) < 1e-11);
      CHECK(std::abs(d.R - R) < 1e-11);
      CHECK(std::abs(d.u_stat - U) < 1e-11);
      CHECK(std::abs(d.M + d.R - d.u_stat) <= 1e-9 * (1.0 + std::abs(d.u_stat)));
      if (tn == n) CHECK(std::abs(d.R) < 1e-12);
    }
  }
}

TEST_CASE("martingale increments have zero conditional mean") {
  RandomStream rng(34, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t S = 2 + trial % 4;
    const auto chain = FiniteChain::create(testsupport::random_transition(rng, S));
    const auto fam = KernelFamily::separable(BaseKernel::table(testsupport::random_table(rng, S)), Weights::inverse_gap(), 30);
    const auto path = simulate(chain, 30, static_cast<std::uint64_t>(trial));
    const auto res = martingale_increment_residuals(chain, path, fam);
    CHECK(res.size() == 29);
    CHECK(*std::max_element(res.begin(), res.end()) <= 1e-10);
  }
}

TEST_CASE("decomposition rejects bad input") {
  const auto chain = FiniteChain::create(ref_P());
  const auto fam = KernelFamily::separable(BaseKernel::product(f_vec()), Weights::unit(), 5);
  const auto path = simulate(chain, 5, 1);
  CHECK_THROWS_AS(martingale_decomposition(chain, Vector{}, path, fam, 0), std::invalid_argument);
  CHECK_THROWS_AS(martingale_decomposition(chain, Vector{}, path, fam, 6), std::invalid_argument);
}

TEST_CASE("rank statistics") {
  for (std::size_t n = 2; n <= 100; ++n) {
    std::vector<double> up(n);
    std::iota(up.begin(), up.end(), 1.0);
    std::vector<double> down(up.rbegin(), up.rend());
    CHECK(tau_kendall(up) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(tau_kendall(down) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(tau_ap(up) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(tau_ap(down) == doctest::Approx(-1.0).epsilon(1e-15));
  }
  const std::vector<double> x{2, 1, 3};
  CHECK(tau_kendall(x) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(tau_ap(x)) < 1e-15);
  CHECK_THROWS_AS(tau_kendall(std::vector<double>{1, 1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(tau_ap(std::vector<double>{1}), std::invalid_argument);
  CHECK_FALSE(tau_ap_kernel(10).depends_on_i());
}

TEST_CASE("tau statistics match their pair-count definitions") {
  RandomStream rng(35, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial;
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform();
    double conc = 0.0;
    double ap = 0.0;
    for (std::size_t j = 1; j < n; ++j) {
      double inner = 0.0;
      for (std::size_t i = 0; i < j; ++i) {
        if (x[i] < x[j]) {
          conc += 2.0;
          inner += 1.0;
        }
      }
      ap += inner / static_cast<double>(j);
    }
    const double N = static_cast<double>(n);
    CHECK(std::abs(tau_kendall(x) - (2.0 * conc / (N * (N - 1.0)) - 1.0)) < 1e-14);
    CHECK(std::abs(tau_ap(x) - (2.0 / (N - 1.0) * ap - 1.0)) < 1e-14);
  }
}

TEST_CASE("weighted Wilcoxon") {
  const std::vector<double> lo{1, 2, 3};
  const std::vector<double> hi{4, 5};
  const std::vector<double> w3{1, 1, 1};
  const std::vector<double> w2{1, 1};
  CHECK(wilcoxon_weighted(lo, hi, w3, w2) == 1.0);
  const std::vector<double> five{5};
  const std::vector<double> one{1};
  CHECK(wilcoxon_weighted(five, five, one, one) == 0.5);
  const std::vector<double> s0{1, 10};
  const std::vector<double> w0{3, 1};
  CHECK(std::abs(wilcoxon_weighted(s0, five, w0, one) - 0.75) <= 1e-15);

  // Unit weights: classical rank-sum count.
  RandomStream rng(36, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(5 + trial % 7);
    std::vector<double> b(3 + trial % 5);
    for (auto& v : a) v = std::floor(10.0 * rng.uniform());
    for (auto& v : b) v = std::floor(10.0 * rng.uniform());
    double count = 0.0;
    for (double u : a) {
      for (double v : b) count += u < v ? 1.0 : (u == v ? 0.5 : 0.0);
    }
    const std::vector<double> wa(a.size(), 1.0);
    const std::vector<double> wb(b.size(), 1.0);
    CHECK(std::abs(wilcoxon_weighted(a, b, wa, wb) - count / static_cast<double>(a.size() * b.size())) < 1e-15);
  }
  const std::vector<double> zero{0};
  CHECK_THROWS_AS(wilcoxon_weighted(five, five, zero, one), std::invalid_argument);
  const std::vector<double> bad{std::nan("")};
  CHECK_THROWS_AS(wilcoxon_weighted(five, five, bad, one), std::invalid_argument);
  CHECK_THROWS_AS(wilcoxon_weighted(std::vector<double>{}, five, std::vector<double>{}, one), std::invalid_argument);
}

TEST_CASE("centering and normalization names") {
  CHECK(parse_centering("joint-expectation") == Centering::joint_expectation);
  CHECK(parse_centering("pi") == Centering::pi_expectation);
  CHECK(parse_normalization("pairs") == Normalization::pairs);
  CHECK_THROWS_AS(parse_centering("median"), std::invalid_argument);
  CHECK(statistic_csv_row("tau-ap", 3, 0, "none", 0.0, 0.0) == "tau-ap,3,0,none,0,0\n");
}

TEST_CASE("continuous centering needs a budget") {
  AR1Model ar;
  ar.drift = BoundedMap{BoundedMap::Shape::tanh, 0.5, 1.0, 0.0};
  ar.drift_bound = 0.5;
  const auto fam = KernelFamily::separable(BaseKernel::cosine(1.0), Weights::unit(), 10);
  CHECK_THROWS_AS(make_centering(ChainModel{ar}, fam, Centering::joint_expectation), std::invalid_argument);
  CenteringOptions o;
  o.mc_budget = 100;
  const auto c = make_centering(ChainModel{ar}, fam, Centering::joint_expectation, o);
  CHECK_FALSE(c.exact);
  CHECK(c.standard_error > 0.0);
}
