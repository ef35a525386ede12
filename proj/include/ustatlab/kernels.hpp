#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ustatlab/chain.hpp"

namespace ustatlab {

/// A bounded bivariate kernel h(x, y) shared by every index pair of a
/// separable family.
///
/// Built-ins are serializable by name and parameters: lookup tables and
/// f (x) f products for finite chains, continuous products over the first
/// coordinate, cos(omega * sum_c (x_c - y_c)), the indicators 1{x = y} and
/// 1{x < y}, the Wilcoxon kernel 1/2 1{x < y} + 1/2 1{x <= y}, constants, and
/// Hoeffding projections of any of these.
class BaseKernel {
 public:
  enum class Kind { table, product, cosine, equal, less, wilcoxon, constant, projected };

  static BaseKernel table(Matrix values);
  static BaseKernel product(Vector f);
  static BaseKernel product(BoundedMap f);
  static BaseKernel cosine(double omega);
  static BaseKernel indicator_equal();
  static BaseKernel indicator_less();
  static BaseKernel wilcoxon();
  static BaseKernel constant(double c);
  /// h(x, y) - E_{X~sample} h(x, X) - E_{X~sample} h(X, y), with the
  /// expectations taken over a fixed sample from pi.
  static BaseKernel projected(BaseKernel base, std::vector<std::vector<double>> pi_sample);

  double operator()(StateView x, StateView y) const;
  /// Declared sup |h|.
  double sup_bound() const { return sup_bound_; }
  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  BaseKernel renamed(std::string name) const;
  /// Values on the finite state set {0..S-1}^2.
  Matrix finite_table(std::size_t S) const;
  /// State-set size fixed by a table or product vector; 0 when any size works.
  std::size_t finite_size() const;

 private:
  struct Projection;
  // The single-argument factor g of a product kernel g(x) g(y).
  double factor(StateView x) const;

  Kind kind_ = Kind::constant;
  std::string name_;
  double sup_bound_ = 0.0;
  double param_ = 0.0;
  Matrix table_;
  Vector f_;
  BoundedMap map_;
  bool continuous_product_ = false;
  std::shared_ptr<const Projection> projection_;
};

/// Index weights a_{i,j} (1-based, i < j).
struct Weights {
  enum class Kind { unit, constant, inverse_gap, inverse_later_index, custom };
  Kind kind = Kind::unit;
  double value = 1.0;
  std::function<double(std::size_t, std::size_t)> fn;
  bool custom_depends_on_i = true;
  std::string custom_name;

  static Weights unit() { return {}; }
  static Weights constant(double c) { return {Kind::constant, c, {}, false, {}}; }
  /// a_{i,j} = |j - i|^{-1}.
  static Weights inverse_gap() { return {Kind::inverse_gap, 1.0, {}, true, {}}; }
  /// a_{i,j} = 1 / (j - 1); the average-precision weights.
  static Weights inverse_later_index() { return {Kind::inverse_later_index, 1.0, {}, false, {}}; }
  static Weights custom(std::function<double(std::size_t, std::size_t)> fn, bool depends_on_i,
                        std::string name);

  double operator()(std::size_t i, std::size_t j) const {
    switch (kind) {
      case Kind::unit:
        return 1.0;
      case Kind::constant:
        return value;
      case Kind::inverse_gap:
        return 1.0 / static_cast<double>(j - i);
      case Kind::inverse_later_index:
        return 1.0 / static_cast<double>(j - 1);
      case Kind::custom:
        return fn(i, j);
    }
    return 0.0;
  }
  bool depends_on_i() const;
  std::string name() const;
};

/// Index-dependent kernels h_{i,j}, 1 <= i < j <= horizon.
///
/// Separable families h_{i,j} = a_{i,j} h expose their structure so that
/// sums over index pairs can be factored; general families are defined by
/// an evaluation callback and, for finite chains, a per-pair table callback.
class KernelFamily {
 public:
  using PairEval = std::function<double(std::size_t, std::size_t, StateView, StateView)>;
  using PairTable = std::function<Matrix(std::size_t, std::size_t)>;

  static KernelFamily separable(BaseKernel base, Weights weights, std::size_t horizon);
  static KernelFamily general(PairEval eval, std::size_t horizon, double sup_bound,
                              bool depends_on_i, std::string name, PairTable table = {});

  double operator()(std::size_t i, std::size_t j, StateView x, StateView y) const {
    return separable_ ? weights_(i, j) * base_(x, y) : eval_(i, j, x, y);
  }

  std::size_t horizon() const { return horizon_; }
  /// Declared max_{i,j} sup |h_{i,j}|.
  double sup_bound() const { return sup_bound_; }
  bool depends_on_i() const { return depends_on_i_; }
  bool is_separable() const { return separable_; }
  const BaseKernel& base() const { return base_; }
  const Weights& weights() const { return weights_; }
  const std::string& name() const { return name_; }
  /// max_{1 <= i < j <= horizon} |a_{i,j}| (1 for general families).
  double max_abs_weight() const { return max_abs_weight_; }

  /// h_{i,j} on {0..S-1}^2.
  Matrix table(std::size_t i, std::size_t j, std::size_t S) const;
  KernelFamily with_horizon(std::size_t horizon) const;

 private:
  bool separable_ = true;
  BaseKernel base_;
  Weights weights_;
  PairEval eval_;
  PairTable table_;
  std::size_t horizon_ = 2;
  double sup_bound_ = 0.0;
  double max_abs_weight_ = 1.0;
  bool depends_on_i_ = false;
  std::string name_;
};

/// Per-pair finite tables with the base table of a separable family
/// computed once.
class PairTables {
 public:
  PairTables(const KernelFamily& family, std::size_t S);
  Matrix operator()(std::size_t i, std::size_t j) const;
  bool separable() const { return family_->is_separable(); }
  const Matrix& base_table() const { return base_; }
  double weight(std::size_t i, std::size_t j) const { return family_->weights()(i, j); }
  std::size_t states() const { return S_; }

 private:
  const KernelFamily* family_;
  std::size_t S_;
  Matrix base_;
};

struct CanonicalityReport {
  double deviation = 0.0;
  double tolerance = 0.0;
  double standard_error = 0.0;
  bool canonical = false;
  bool exact = true;
};

/// Largest spread of the pi-marginal means E_pi h(X, y) over y and
/// E_pi h(x, X) over x; exact on finite chains, tolerance 1e-10.
CanonicalityReport pi_canonical_deviation(const KernelFamily& kernel, const Vector& pi,
                                          double tolerance = 1e-10);
double pi_canonical_deviation(const Matrix& table, const Vector& pi);

/// Monte Carlo version for continuous models: marginal means at `probes`
/// points of the sample, each averaged over the whole sample. Canonical iff
/// the spread is within 3 standard errors. Separable families only.
CanonicalityReport pi_canonical_deviation(const KernelFamily& kernel,
                                          const std::vector<std::vector<double>>& pi_sample,
                                          std::size_t probes);

/// h~ = h - E_pi h(x, .) - E_pi h(., y).
Matrix hoeffding_project(const Matrix& table, const Vector& pi);
BaseKernel hoeffding_project(const BaseKernel& base, const Vector& pi);
KernelFamily hoeffding_project(const KernelFamily& kernel, const Vector& pi);
KernelFamily hoeffding_project(const KernelFamily& kernel,
                               const std::vector<std::vector<double>>& pi_sample);

/// h_{i,j} = a_{i,j} h. If `pi` is given the base is checked to be
/// pi-canonical. Throws on non-finite weights over the horizon.
KernelFamily weighted_kernel(const BaseKernel& base, const Weights& weights, std::size_t horizon,
                             const Vector* pi = nullptr);

struct SupConstant {
  double A = 0.0;
  /// max |h| actually observed (times 2).
  double lower = 0.0;
  /// 2 * declared sup bound.
  double upper = 0.0;
  bool exact = true;
};

/// A = 2 max_{i,j} sup |h_{i,j}|: exact enumeration on S states.
SupConstant sup_constant_A(const KernelFamily& kernel, std::size_t S);
/// Probe-based pair for continuous models; A reports the declared upper value.
SupConstant sup_constant_A(const KernelFamily& kernel,
                           const std::vector<std::vector<double>>& probes);

/// E_{pi x pi} h_{i,j}.
double pi_expectation(const Matrix& table, const Vector& pi);

/// p_{i,j}(x, y) = h_{i,j}(x, y) - E_pi[h_{i,j}] on finite chains.
struct CenteredKernel {
  KernelFamily family;
  Vector pi;
  double e_pi(std::size_t i, std::size_t j) const;
  Matrix table(std::size_t i, std::size_t j) const;
};

}  // namespace ustatlab
