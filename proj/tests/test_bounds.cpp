#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "ustatlab/bounds.hpp"

using namespace ustatlab;

namespace {

Matrix ref_P() {
  Matrix P(2, 2);
  P << 0.9, 0.1, 0.2, 0.8;
  return P;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

}  // namespace

TEST_CASE("t_n choice") {
  CHECK(compute_tn(0.5, 100, 3.0).t_n == 13);
  const auto d = compute_tn(0.7, 100);
  CHECK(d.r == doctest::Approx(1.05 * 2.0 / std::log(1.0 / 0.7)));
  CHECK(d.t_n == 27);
  CHECK_FALSE(d.clamped);
  const auto small = compute_tn(0.05, 2, 1.2);
  CHECK(small.t_n == 1);
  CHECK(small.clamped);
  CHECK_FALSE(small.warning.empty());
  CHECK_THROWS_AS(compute_tn(0.5, 100, 2.5), std::invalid_argument);
  CHECK_THROWS_AS(compute_tn(1.0, 100), std::invalid_argument);
  CHECK_THROWS_AS(compute_tn(0.5, 1), std::invalid_argument);
}

TEST_CASE("B_n and C_n on the reference instance") {
  // Stationary chain, h = f (x) f with f = (1, -2), n = 3. E_pi f^2 = 2 and
  // E_nu f^2 = 9/17 + 4 * 8/17 = 41/17, so C_n^2 = 3 * 2 * 41/17 = 246/17.
  // P^k f = 0.7^k f, so k = 0 carries B_n:
  // first branch sup_x f(x)^2 (n - 1) E_nu f^2 = 4 * 2 * 41/17 = 328/17,
  // second branch sup_y f(y)^2 (n - 1) E_pi f^2 = 4 * 2 * 2 = 16.
  const auto chain = FiniteChain::create(ref_P());
  const auto fam = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::unit(), 3);
  const double Cn = compute_Cn(chain, fam);
  CHECK(std::abs(Cn * Cn - 246.0 / 17.0) < 1e-9);
  for (std::size_t tn : {0, 1, 2, 3}) {
    const double Bn = compute_Bn(chain, fam, tn);
    CHECK(std::abs(Bn * Bn - 328.0 / 17.0) < 1e-9);
  }
  const auto zero = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 3);
  CHECK(compute_Cn(chain, zero) == 0.0);
  CHECK(compute_Bn(chain, zero, 2) == 0.0);
}

TEST_CASE("B_n and C_n against nested-loop oracles") {
  RandomStream rng(41, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t S = 2 + trial % 3;
    const std::size_t n = 3 + trial % 6;
    const Matrix P = testsupport::random_transition(rng, S);
    const auto chain = FiniteChain::create(P);
    const auto e = ergodicity_constants(chain);
    const Weights w = trial % 3 == 0 ? Weights::unit() : (trial % 3 == 1 ? Weights::inverse_gap() : Weights::inverse_later_index());
    const auto fam = KernelFamily::separable(BaseKernel::table(testsupport::random_table(rng, S)), w, n);
    const bool stationary = trial % 2 == 0;
    const Vector chi = stationary ? e.pi : testsupport::random_law(rng, S);
    const std::size_t tn = 1 + trial % 4;
    const auto oracle = testsupport::brute_force_BnCn(P, e.pi, e.nu, chi, fam, n, tn);
    const double Bn = compute_Bn(chain, fam, tn);
    const double Cn = compute_Cn(chain, fam, stationary ? Vector{} : chi);
    CHECK(std::abs(Bn * Bn - oracle.Bn2) <= 1e-10 * (1.0 + oracle.Bn2));
    CHECK(std::abs(Cn * Cn - oracle.Cn2) <= 1e-10 * (1.0 + oracle.Cn2));
    // Coarse dominance.
    const double A = sup_constant_A(fam, S).A;
    CHECK(Bn <= A * std::sqrt(static_cast<double>(n)) + 1e-9);
    CHECK(Cn <= A * static_cast<double>(n) + 1e-9);
  }
}

TEST_CASE("independent setting") {
  Matrix iid(2, 2);
  iid << 0.5, 0.5, 0.5, 0.5;
  const auto chain = FiniteChain::create(iid);
  const auto fam = KernelFamily::separable(BaseKernel::product(vec({1.0, -1.0})), Weights::unit(), 3);
  const auto ind = independent_Bn_Cn(vec({0.5, 0.5}), fam, 3);
  CHECK(std::abs(ind.Cn * ind.Cn - 3.0) < 1e-12);
  CHECK(std::abs(ind.Bn * ind.Bn - 2.0) < 1e-12);
  CHECK(std::abs(compute_Bn(chain, fam, 1) - ind.Bn) < 1e-12);
  CHECK(std::abs(compute_Cn(chain, fam) - ind.Cn) < 1e-12);
  const auto zero = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 3);
  CHECK(independent_Bn_Cn(vec({0.5, 0.5}), zero, 3).Bn == 0.0);
  CHECK(independent_Bn_Cn(vec({0.5, 0.5}), zero, 3).Cn == 0.0);
}

TEST_CASE("weighted kernel constants stay bounded") {
  const auto chain = FiniteChain::create(ref_P());
  for (std::size_t n : {10, 100, 1000}) {
    const auto fam = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::inverse_gap(), n);
    const double A = sup_constant_A(fam, 2).A;
    const std::size_t tn = compute_tn(0.7, n).t_n;
    const double Bn = compute_Bn(chain, fam, tn);
    const double Cn = compute_Cn(chain, fam);
    CHECK(Bn * Bn <= A * A * std::numbers::pi * std::numbers::pi / 6.0 + 1e-9);
    CHECK(Cn * Cn <= A * A * (1.0 + std::log(static_cast<double>(n))) + 1e-9);
    // Direct pair count: n - s pairs sit at gap s.
    double gaps = 0.0;
    for (std::size_t s = 1; s < n; ++s) gaps += static_cast<double>(n - s) / static_cast<double>(s * s);
    CHECK(Cn * Cn <= A * A * gaps + 1e-9);
  }
}

TEST_CASE("finite bound constants document") {
  const auto chain = FiniteChain::create(ref_P());
  const auto e = ergodicity_constants(chain);
  const auto fam = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::unit(), 100);
  const auto c = finite_bound_constants(chain, e, fam, Vector{});
  CHECK(c.A == 8.0);
  CHECK(c.tn == 27);
  CHECK(c.method == BoundMethod::exact_enumeration);
  const auto j = to_json(c);
  for (const char* key : {"A", "Bn", "Cn", "tn", "r", "kappa", "beta", "method", "budgets", "flags"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("theorem right-hand sides") {
  BoundConstants c;
  c.A = 1.0;
  const std::size_t n = 100;
  c.Bn = std::sqrt(100.0);
  c.Cn = 100.0;
  const double L = std::log(100.0);
  const double t1a = L * (10.0 * L * 1.0 + (1.0 + 10.0 * 10.0) * 1.0 + 2.0 * 10.0 * 1.0 + 1.0 + 100.0);
  CHECK(theorem_rhs(TheoremVariant::T1a, c, n, 1.0) == doctest::Approx(t1a).epsilon(1e-14));
  const double t1b = t1a + L * 100.0;
  CHECK(theorem_rhs(TheoremVariant::T1b, c, n, 1.0) == doctest::Approx(t1b).epsilon(1e-14));
  const double t2 = t1b - L * 100.0 + L * L;
  CHECK(theorem_rhs(TheoremVariant::T2, c, n, 1.0) == doctest::Approx(t2).epsilon(1e-14));
  c.A = 6.0;
  CHECK(theorem_rhs(TheoremVariant::Eq3, c, n, 100.0) == doctest::Approx(2.0 * 3.0 * L).epsilon(1e-14));
  // Small-u limits.
  c.A = 2.0;
  CHECK(theorem_rhs(TheoremVariant::T1a, c, n, 1e-14) == doctest::Approx(L * 2.0 * 100.0).epsilon(1e-5));
  CHECK(theorem_rhs(TheoremVariant::T2, c, n, 1e-14) == doctest::Approx(L * 2.0 * L).epsilon(1e-5));
  CHECK_THROWS_AS(theorem_rhs(TheoremVariant::T1a, c, n, 0.0), std::invalid_argument);
  c.has_Cn = false;
  CHECK_THROWS_AS(theorem_rhs(TheoremVariant::T1b, c, n, 1.0), std::invalid_argument);
  c.kappa = 3.0;
  CHECK(theorem_rhs(TheoremVariant::T1a, c, n, 2.0) ==
        doctest::Approx(3.0 * (theorem_rhs(TheoremVariant::T1a, BoundConstants{c.A, c.Bn}, n, 2.0))));
  CHECK(parse_theorem_variant("T1b") == TheoremVariant::T1b);
  CHECK(probability_level(1.0, 100, 1.0) == doctest::Approx(1.0 - std::exp(-1.0) * L));
}

TEST_CASE("remainder bounds") {
  CHECK(remainder_bound(RemainderVariant::general, 8.0, 1.0, 100, 13) == 10416.0);
  CHECK(remainder_bound(RemainderVariant::stationary, 8.0, 1.0, 100, 13) == 2928.0);
  CHECK(remainder_bound(RemainderVariant::stationary, 3.0, 2.0, 50, 0) == 12.0);
}

TEST_CASE("density ratio norm") {
  const Vector pi = vec({2.0 / 3.0, 1.0 / 3.0});
  for (double p : {1.5, 2.0, 4.0, std::numeric_limits<double>::infinity()}) {
    CHECK(density_ratio_norm(pi, pi, p).value == doctest::Approx(1.0).epsilon(1e-14));
  }
  const Vector point = vec({1.0, 0.0});
  const auto inf = density_ratio_norm(point, pi, std::numeric_limits<double>::infinity());
  CHECK(inf.value == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(inf.q == 1.0);
  const auto two = density_ratio_norm(point, pi, 2.0);
  CHECK(two.value == doctest::Approx(std::sqrt(1.5)).epsilon(1e-14));
  CHECK(two.q == doctest::Approx(2.0));
  CHECK_THROWS_AS(density_ratio_norm(vec({0.5, 0.5}), vec({1.0, 0.0}), 2.0), std::domain_error);
}

TEST_CASE("Bernstein bound for additive functionals") {
  const auto p0 = bernstein_params(0.0, 1.0, 1.0);
  CHECK(p0.A1 == doctest::Approx(1.0 / 3.0));
  CHECK(p0.A2 == doctest::Approx(1.0));
  const auto p = bernstein_params(0.7, 1.0, 1.0);
  CHECK(p.A1 == doctest::Approx(5.0 / 0.3));
  CHECK(p.A2 == doctest::Approx(1.7 / 0.3));
  const Vector pi = vec({2.0 / 3.0, 1.0 / 3.0});
  const auto norm = density_ratio_norm(pi, pi, std::numeric_limits<double>::infinity());
  const auto b = bernstein_mc_bound(p, norm, 100, 1.0);
  CHECK(b.threshold == doctest::Approx(2.0 * (5.0 / 0.3) / 100.0 + std::sqrt(2.0 * (1.7 / 0.3) / 100.0)));
  CHECK(b.probability == doctest::Approx(std::exp(-1.0)));
  const auto z = bernstein_mc_bound(p, norm, 100, 0.0);
  CHECK(z.threshold == 0.0);
  CHECK(z.probability == doctest::Approx(1.0));
}

TEST_CASE("Monte Carlo constants for a one-dimensional AR(1)") {
  AR1Model ar;
  ar.drift = BoundedMap{BoundedMap::Shape::tanh, 0.8, 1.0, 0.0};
  ar.drift_bound = 0.8;
  const auto fam = KernelFamily::separable(BaseKernel::cosine(1.0), Weights::unit(), 40);
  MonteCarloBudget budget;
  budget.probes = 200;
  budget.outer = 50;
  budget.inner = 20;
  const auto c = monte_carlo_bound_constants(ChainModel{ar}, fam, 0.9, budget);
  CHECK(c.method == BoundMethod::monte_carlo);
  CHECK_FALSE(c.flags.empty());
  CHECK(c.Bn <= c.A * std::sqrt(40.0) + 1e-9);
  CHECK(c.Cn <= c.A * 40.0 + 1e-9);
  const auto again = monte_carlo_bound_constants(ChainModel{ar}, fam, 0.9, budget);
  CHECK(again.Bn == c.Bn);
  CHECK(again.Cn == c.Cn);
}
