#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "ustatlab/kernels.hpp"

using namespace ustatlab;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

const Vector kPi = vec({2.0 / 3.0, 1.0 / 3.0});

// Marginal pi-means computed by hand loops.
double marginal_spread(const Matrix& h, const Vector& pi) {
  double worst = 0.0;
  const auto S = h.rows();
  for (Eigen::Index y = 0; y < S; ++y) {
    for (Eigen::Index y2 = 0; y2 < S; ++y2) {
      double a = 0.0;
      double b = 0.0;
      double c = 0.0;
      double d = 0.0;
      for (Eigen::Index x = 0; x < S; ++x) {
        a += pi[x] * h(x, y);
        b += pi[x] * h(x, y2);
        c += pi[x] * h(y, x);
        d += pi[x] * h(y2, x);
      }
      worst = std::max({worst, std::abs(a - b), std::abs(c - d)});
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("canonicality examples") {
  const auto ff = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::unit(), 5);
  CHECK(pi_canonical_deviation(ff, kPi).deviation < 1e-15);
  CHECK(pi_canonical_deviation(ff, kPi).canonical);
  const auto one = KernelFamily::separable(BaseKernel::constant(1.0), Weights::unit(), 5);
  CHECK(pi_canonical_deviation(one, kPi).deviation == 0.0);
  const auto eq = KernelFamily::separable(BaseKernel::indicator_equal(), Weights::unit(), 5);
  const auto rep = pi_canonical_deviation(eq, kPi);
  CHECK(std::abs(rep.deviation - 1.0 / 3.0) < 1e-15);
  CHECK_FALSE(rep.canonical);
}

TEST_CASE("worked Hoeffding projection") {
  const Matrix h = BaseKernel::indicator_equal().finite_table(2);
  const Matrix t = hoeffding_project(h, kPi);
  Matrix expect(2, 2);
  expect << -1.0 / 3.0, -1.0, -1.0, 1.0 / 3.0;
  CHECK((t - expect).cwiseAbs().maxCoeff() < 1e-15);
  for (Eigen::Index y = 0; y < 2; ++y) {
    CHECK(std::abs(kPi.dot(t.col(y)) + 5.0 / 9.0) < 1e-15);
  }
  const Matrix c = hoeffding_project(BaseKernel::constant(2.5).finite_table(3), vec({0.2, 0.3, 0.5}));
  CHECK((c.array() + 2.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("projection makes random kernels canonical and is idempotent") {
  RandomStream rng(21, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t S = 2 + trial % 4;
    const Vector pi = testsupport::random_law(rng, S);
    const Matrix h = testsupport::random_table(rng, S);
    const auto fam = KernelFamily::separable(BaseKernel::table(h), Weights::inverse_gap(), 7);
    const auto proj = hoeffding_project(fam, pi);
    CHECK(pi_canonical_deviation(proj, pi).deviation <= 1e-10);
    const Matrix t = proj.base().finite_table(S);
    CHECK(marginal_spread(t, pi) <= 1e-12);
    // Centre it, then project again: unchanged.
    const Matrix centred = (t.array() - pi_expectation(t, pi)).matrix();
    CHECK((hoeffding_project(centred, pi) - centred).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("weighted kernels") {
  const auto base = BaseKernel::product(vec({1.0, -2.0}));
  const auto w = weighted_kernel(base, Weights::inverse_gap(), 10, &kPi);
  const double x[] = {1.0};
  const double y[] = {1.0};
  CHECK(w(1, 3, x, y) == doctest::Approx(0.5 * 4.0));
  CHECK(w.sup_bound() == doctest::Approx(4.0));
  const auto unit = weighted_kernel(base, Weights::unit(), 10);
  CHECK(unit.table(2, 7, 2) == base.finite_table(2));
  const auto zero = weighted_kernel(base, Weights::constant(0.0), 10);
  CHECK(zero.sup_bound() == 0.0);
  CHECK(zero.table(1, 2, 2).cwiseAbs().maxCoeff() == 0.0);
  const auto inf = Weights::custom([](std::size_t, std::size_t) { return std::nan(""); }, true, "nan");
  CHECK_THROWS_AS(weighted_kernel(base, inf, 5), std::invalid_argument);
  const auto eq = BaseKernel::indicator_equal();
  CHECK_THROWS_AS(weighted_kernel(eq, Weights::unit(), 5, &kPi), std::invalid_argument);
}

TEST_CASE("sup constant A") {
  const auto ff = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::unit(), 4);
  CHECK(sup_constant_A(ff, 2).A == doctest::Approx(8.0));
  const auto zero = KernelFamily::separable(BaseKernel::constant(0.0), Weights::unit(), 4);
  CHECK(sup_constant_A(zero, 2).A == 0.0);
  const auto wf = KernelFamily::separable(BaseKernel::product(vec({1.0, -2.0})), Weights::inverse_gap(), 30);
  CHECK(sup_constant_A(wf, 2).A == doctest::Approx(8.0));
  RandomStream rng(22, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix h = testsupport::random_table(rng, 3);
    const auto base = KernelFamily::separable(BaseKernel::table(h), Weights::unit(), 6);
    const auto scaled = KernelFamily::separable(BaseKernel::table(h), Weights::constant(-2.5), 6);
    CHECK(sup_constant_A(scaled, 3).A == doctest::Approx(2.5 * sup_constant_A(base, 3).A).epsilon(1e-14));
    CHECK(sup_constant_A(base, 3).A == doctest::Approx(2.0 * h.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("centered kernels have zero pi-marginals") {
  RandomStream rng(23, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector pi = testsupport::random_law(rng, 3);
    const auto proj = hoeffding_project(BaseKernel::table(testsupport::random_table(rng, 3)), pi);
    const Matrix t = proj.finite_table(3);
    const Matrix c = (t.array() - pi_expectation(t, pi)).matrix();
    CHECK((pi.transpose() * c).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((c * pi).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("built-in kernels evaluate as documented") {
  const double a[] = {0.3};
  const double b[] = {1.2};
  CHECK(BaseKernel::indicator_less()(a, b) == 1.0);
  CHECK(BaseKernel::indicator_less()(b, a) == 0.0);
  CHECK(BaseKernel::wilcoxon()(a, a) == 0.5);
  CHECK(BaseKernel::cosine(2.0)(a, b) == doctest::Approx(std::cos(2.0 * (0.3 - 1.2))));
  CHECK(BaseKernel::constant(-1.5)(a, b) == -1.5);
  BoundedMap f{BoundedMap::Shape::tanh, 2.0, 1.0, 0.0};
  CHECK(BaseKernel::product(f)(a, b) == doctest::Approx(4.0 * std::tanh(0.3) * std::tanh(1.2)));
}

TEST_CASE("Monte Carlo canonicality on a continuous sample") {
  RandomStream rng(24, 0);
  std::vector<std::vector<double>> sample(4000);
  for (auto& s : sample) s = {rng.normal()};
  BoundedMap f{BoundedMap::Shape::tanh, 1.0, 1.0, 0.0};
  const auto fam = KernelFamily::separable(BaseKernel::product(f), Weights::unit(), 5);
  const auto proj = hoeffding_project(fam, sample);
  CHECK(pi_canonical_deviation(proj, sample, 50).canonical);
  const auto raw = KernelFamily::separable(BaseKernel::product(BoundedMap{BoundedMap::Shape::constant, 1.0, 1.0, 0.0}),
                                           Weights::unit(), 5);
  CHECK(pi_canonical_deviation(raw, sample, 50).canonical);
}

TEST_CASE("sample projection equals its defining averages") {
  RandomStream rng(25, 0);
  std::vector<std::vector<double>> sample(300);
  for (auto& s : sample) s = {rng.normal()};
  BoundedMap f{BoundedMap::Shape::tanh, 1.5, 1.0, 0.2};
  const BaseKernel h = BaseKernel::product(f);
  const BaseKernel p = BaseKernel::projected(h, sample);
  for (int k = 0; k < 20; ++k) {
    const std::vector<double> x{rng.normal()};
    const std::vector<double> y{rng.normal()};
    double row = 0.0;
    double col = 0.0;
    for (const auto& s : sample) {
      row += h(x, s);
      col += h(s, y);
    }
    const double expect = h(x, y) - row / 300.0 - col / 300.0;
    CHECK(std::abs(p(x, y) - expect) < 1e-12);
  }
}
