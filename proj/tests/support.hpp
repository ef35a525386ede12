#pragma once

// Shared generators and brute-force oracles. Nothing here calls the
// library's own expectation code, so the oracles stay independent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ustatlab/chain.hpp"
#include "ustatlab/kernels.hpp"
#include "ustatlab/rng.hpp"

namespace testsupport {

using ustatlab::Matrix;
using ustatlab::Vector;

// Strictly positive rows, so Dobrushin rho < 1 and delta_1 > 0.
inline Matrix random_transition(ustatlab::RandomStream& rng, std::size_t S, double floor = 0.02) {
  Matrix P(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  for (Eigen::Index x = 0; x < P.rows(); ++x) {
    for (Eigen::Index y = 0; y < P.cols(); ++y) P(x, y) = floor + rng.uniform();
    P.row(x) /= P.row(x).sum();
  }
  return P;
}

inline Matrix random_table(ustatlab::RandomStream& rng, std::size_t S, double scale = 2.0) {
  Matrix h(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  for (Eigen::Index x = 0; x < h.rows(); ++x) {
    for (Eigen::Index y = 0; y < h.cols(); ++y) h(x, y) = scale * (2.0 * rng.uniform() - 1.0);
  }
  return h;
}

inline Vector random_law(ustatlab::RandomStream& rng, std::size_t S) {
  Vector v(static_cast<Eigen::Index>(S));
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = 0.05 + rng.uniform();
  return v / v.sum();
}

// Stationary law by power iteration (independent of the library's solver).
inline Vector power_iteration_pi(const Matrix& P, int iterations = 20000) {
  Vector v = Vector::Constant(P.rows(), 1.0 / static_cast<double>(P.rows()));
  for (int t = 0; t < iterations; ++t) v = (v.transpose() * P).transpose();
  return v;
}

// Every path of length n with its probability under (chi, P).
struct PathSpace {
  std::vector<std::vector<std::size_t>> paths;
  std::vector<double> prob;
};

inline PathSpace enumerate_paths(const Matrix& P, const Vector& chi, std::size_t n) {
  PathSpace out;
  const auto S = static_cast<std::size_t>(P.rows());
  std::vector<std::size_t> x(n, 0);
  while (true) {
    double p = chi[static_cast<Eigen::Index>(x[0])];
    for (std::size_t t = 1; t < n; ++t) p *= P(static_cast<Eigen::Index>(x[t - 1]), static_cast<Eigen::Index>(x[t]));
    out.paths.push_back(x);
    out.prob.push_back(p);
    std::size_t k = n;
    while (k > 0) {
      --k;
      if (++x[k] < S) break;
      x[k] = 0;
      if (k == 0) return out;
    }
  }
}

// E[g(X) | X_1..X_m = prefix] by summing over every path that extends the
// prefix; m <= 0 gives the unconditional mean.
inline double conditional_mean(const PathSpace& space, const std::vector<std::size_t>& path, long m,
                               const std::function<double(const std::vector<std::size_t>&)>& g) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < space.paths.size(); ++k) {
    const auto& q = space.paths[k];
    bool match = true;
    for (long t = 0; t < m && match; ++t) match = q[static_cast<std::size_t>(t)] == path[static_cast<std::size_t>(t)];
    if (!match) continue;
    num += space.prob[k] * g(q);
    den += space.prob[k];
  }
  return num / den;
}

inline ustatlab::ChainPath finite_path(const std::vector<std::size_t>& states) {
  ustatlab::ChainPath p;
  p.dim = 1;
  p.model_kind = "finite";
  for (std::size_t s : states) p.values.push_back(static_cast<double>(s));
  return p;
}

}  // namespace testsupport

namespace testsupport {

// B_n and C_n straight from their defining sums with nested loops.
struct BnCn {
  double Bn2 = 0.0;
  double Cn2 = 0.0;
};

inline BnCn brute_force_BnCn(const Matrix& P, const Vector& pi, const Vector& nu, const Vector& chi,
                             const ustatlab::KernelFamily& kernel, std::size_t n, std::size_t tn) {
  const auto S = P.rows();
  const auto p = [&](std::size_t i, std::size_t j) {
    Matrix h = kernel.table(i, j, static_cast<std::size_t>(S));
    double m = 0.0;
    for (Eigen::Index x = 0; x < S; ++x) {
      for (Eigen::Index y = 0; y < S; ++y) m += pi[x] * pi[y] * h(x, y);
    }
    return Matrix((h.array() - m).matrix());
  };
  std::vector<Matrix> Pk{Matrix::Identity(S, S)};
  for (std::size_t k = 1; k <= tn; ++k) {
    Matrix next = Matrix::Zero(S, S);
    for (Eigen::Index a = 0; a < S; ++a) {
      for (Eigen::Index b = 0; b < S; ++b) {
        for (Eigen::Index c = 0; c < S; ++c) next(a, b) += Pk.back()(a, c) * P(c, b);
      }
    }
    Pk.push_back(next);
  }
  BnCn out;
  for (std::size_t k = 0; k <= tn; ++k) {
    for (std::size_t i = 1; i <= n; ++i) {
      for (Eigen::Index x = 0; x < S; ++x) {
        double first = 0.0;
        for (std::size_t j = i + 1; j <= n; ++j) {
          const Matrix pij = p(i, j);
          for (Eigen::Index xp = 0; xp < S; ++xp) {
            double inner = 0.0;
            for (Eigen::Index X = 0; X < S; ++X) inner += Pk[k](xp, X) * pij(x, X);
            first += nu[xp] * inner * inner;
          }
        }
        out.Bn2 = std::max(out.Bn2, first);
      }
    }
    for (std::size_t j = 2; j <= n; ++j) {
      for (Eigen::Index y = 0; y < S; ++y) {
        double second = 0.0;
        for (std::size_t i = 1; i < j; ++i) {
          const Matrix pij = p(i, j);
          for (Eigen::Index xt = 0; xt < S; ++xt) {
            double inner = 0.0;
            for (Eigen::Index X = 0; X < S; ++X) inner += Pk[k](y, X) * pij(xt, X);
            second += pi[xt] * inner * inner;
          }
        }
        out.Bn2 = std::max(out.Bn2, second);
      }
    }
  }
  Vector law = chi;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = i + 1; j <= n; ++j) {
      const Matrix pij = p(i, j);
      for (Eigen::Index x = 0; x < S; ++x) {
        for (Eigen::Index xp = 0; xp < S; ++xp) out.Cn2 += law[x] * nu[xp] * pij(x, xp) * pij(x, xp);
      }
    }
    Vector next = Vector::Zero(S);
    for (Eigen::Index a = 0; a < S; ++a) {
      for (Eigen::Index b = 0; b < S; ++b) next[b] += law[a] * P(a, b);
    }
    law = next;
  }
  return out;
}

}  // namespace testsupport
