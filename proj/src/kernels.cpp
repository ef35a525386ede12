#include "ustatlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace ustatlab {

struct BaseKernel::Projection {
  BaseKernel base;
  std::vector<std::vector<double>> sample;
  // Product kernels factor, so both sample means collapse to g(.) * mean g.
  bool factored = false;
  double mean_factor = 0.0;
};

namespace {

double state_scalar(StateView x) { return x[0]; }

std::size_t state_index(StateView x, std::size_t S) {
  const double v = x[0];
  if (v < 0.0 || v >= static_cast<double>(S)) {
    throw std::out_of_range(fmt::format("state {} outside the finite state set of size {}", v, S));
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

// ----------------------------------------------------------- BaseKernel

BaseKernel BaseKernel::table(Matrix values) {
  if (values.rows() == 0 || values.rows() != values.cols()) {
    throw std::invalid_argument("kernel table must be square and non-empty");
  }
  if (!values.allFinite()) throw std::invalid_argument("kernel table has non-finite entries");
  BaseKernel k;
  k.kind_ = Kind::table;
  k.name_ = "table";
  k.sup_bound_ = values.cwiseAbs().maxCoeff();
  k.table_ = std::move(values);
  return k;
}

BaseKernel BaseKernel::product(Vector f) {
  if (f.size() == 0 || !f.allFinite()) throw std::invalid_argument("product kernel needs finite f");
  BaseKernel k;
  k.kind_ = Kind::product;
  k.name_ = "product";
  const double m = f.cwiseAbs().maxCoeff();
  k.sup_bound_ = m * m;
  k.f_ = std::move(f);
  return k;
}

BaseKernel BaseKernel::product(BoundedMap f) {
  BaseKernel k;
  k.kind_ = Kind::product;
  k.name_ = "product";
  k.sup_bound_ = f.sup_abs() * f.sup_abs();
  k.map_ = f;
  k.continuous_product_ = true;
  return k;
}

BaseKernel BaseKernel::cosine(double omega) {
  if (!std::isfinite(omega)) throw std::invalid_argument("cosine frequency must be finite");
  BaseKernel k;
  k.kind_ = Kind::cosine;
  k.name_ = "cosine";
  k.param_ = omega;
  k.sup_bound_ = 1.0;
  return k;
}

BaseKernel BaseKernel::indicator_equal() {
  BaseKernel k;
  k.kind_ = Kind::equal;
  k.name_ = "indicator-equal";
  k.sup_bound_ = 1.0;
  return k;
}

BaseKernel BaseKernel::indicator_less() {
  BaseKernel k;
  k.kind_ = Kind::less;
  k.name_ = "indicator-less";
  k.sup_bound_ = 1.0;
  return k;
}

BaseKernel BaseKernel::wilcoxon() {
  BaseKernel k;
  k.kind_ = Kind::wilcoxon;
  k.name_ = "wilcoxon";
  k.sup_bound_ = 1.0;
  return k;
}

BaseKernel BaseKernel::constant(double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("constant kernel must be finite");
  BaseKernel k;
  k.kind_ = Kind::constant;
  k.name_ = "constant";
  k.param_ = c;
  k.sup_bound_ = std::abs(c);
  return k;
}

BaseKernel BaseKernel::projected(BaseKernel base, std::vector<std::vector<double>> pi_sample) {
  if (pi_sample.empty()) throw std::invalid_argument("projection needs a non-empty pi sample");
  BaseKernel k;
  k.kind_ = Kind::projected;
  k.name_ = "hoeffding(" + base.name() + ")";
  k.sup_bound_ = 3.0 * base.sup_bound();
  Projection proj{std::move(base), std::move(pi_sample)};
  if (proj.base.kind_ == Kind::product) {
    proj.factored = true;
    for (const auto& s : proj.sample) proj.mean_factor += proj.base.factor(s);
    proj.mean_factor /= static_cast<double>(proj.sample.size());
  }
  k.projection_ = std::make_shared<const Projection>(std::move(proj));
  return k;
}

double BaseKernel::operator()(StateView x, StateView y) const {
  switch (kind_) {
    case Kind::table:
      return table_(static_cast<Eigen::Index>(state_index(x, static_cast<std::size_t>(table_.rows()))),
                    static_cast<Eigen::Index>(state_index(y, static_cast<std::size_t>(table_.rows()))));
    case Kind::product:
      if (continuous_product_) return map_(state_scalar(x)) * map_(state_scalar(y));
      return f_[static_cast<Eigen::Index>(state_index(x, static_cast<std::size_t>(f_.size())))] *
             f_[static_cast<Eigen::Index>(state_index(y, static_cast<std::size_t>(f_.size())))];
    case Kind::cosine: {
      double s = 0.0;
      for (std::size_t c = 0; c < x.size(); ++c) s += x[c] - y[c];
      return std::cos(param_ * s);
    }
    case Kind::equal:
      return std::equal(x.begin(), x.end(), y.begin(), y.end()) ? 1.0 : 0.0;
    case Kind::less:
      return state_scalar(x) < state_scalar(y) ? 1.0 : 0.0;
    case Kind::wilcoxon: {
      const double a = state_scalar(x);
      const double b = state_scalar(y);
      return 0.5 * (a < b ? 1.0 : 0.0) + 0.5 * (a <= b ? 1.0 : 0.0);
    }
    case Kind::constant:
      return param_;
    case Kind::projected: {
      const auto& proj = *projection_;
      if (proj.factored) {
        const double gx = proj.base.factor(x);
        const double gy = proj.base.factor(y);
        return gx * gy - gx * proj.mean_factor - proj.mean_factor * gy;
      }
      double row = 0.0;
      double col = 0.0;
      for (const auto& s : proj.sample) {
        row += proj.base(x, s);
        col += proj.base(s, y);
      }
      const auto N = static_cast<double>(proj.sample.size());
      return proj.base(x, y) - row / N - col / N;
    }
  }
  return 0.0;
}

double BaseKernel::factor(StateView x) const {
  if (continuous_product_) return map_(state_scalar(x));
  return f_[static_cast<Eigen::Index>(state_index(x, static_cast<std::size_t>(f_.size())))];
}

BaseKernel BaseKernel::renamed(std::string name) const {
  BaseKernel k = *this;
  k.name_ = std::move(name);
  return k;
}

std::size_t BaseKernel::finite_size() const {
  if (kind_ == Kind::table) return static_cast<std::size_t>(table_.rows());
  if (kind_ == Kind::product && !continuous_product_) return static_cast<std::size_t>(f_.size());
  return 0;
}

Matrix BaseKernel::finite_table(std::size_t S) const {
  if (kind_ == Kind::table) {
    if (static_cast<std::size_t>(table_.rows()) != S) {
      throw std::invalid_argument(
          fmt::format("kernel table is {}x{} but the chain has {} states", table_.rows(), table_.cols(), S));
    }
    return table_;
  }
  if (kind_ == Kind::product && !continuous_product_ && static_cast<std::size_t>(f_.size()) != S) {
    throw std::invalid_argument(
        fmt::format("product kernel f has {} entries but the chain has {} states", f_.size(), S));
  }
  const auto n = static_cast<Eigen::Index>(S);
  Matrix out(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    const double xv = static_cast<double>(x);
    for (Eigen::Index y = 0; y < n; ++y) {
      const double yv = static_cast<double>(y);
      out(x, y) = (*this)(StateView(&xv, 1), StateView(&yv, 1));
    }
  }
  return out;
}

// -------------------------------------------------------------- Weights

Weights Weights::custom(std::function<double(std::size_t, std::size_t)> fn, bool depends_on_i,
                        std::string name) {
  Weights w;
  w.kind = Kind::custom;
  w.fn = std::move(fn);
  w.custom_depends_on_i = depends_on_i;
  w.custom_name = std::move(name);
  return w;
}

bool Weights::depends_on_i() const {
  switch (kind) {
    case Kind::inverse_gap:
      return true;
    case Kind::custom:
      return custom_depends_on_i;
    default:
      return false;
  }
}

std::string Weights::name() const {
  switch (kind) {
    case Kind::unit:
      return "unit";
    case Kind::constant:
      return fmt::format("constant({})", value);
    case Kind::inverse_gap:
      return "inverse-gap";
    case Kind::inverse_later_index:
      return "inverse-later-index";
    case Kind::custom:
      return custom_name.empty() ? "custom" : custom_name;
  }
  return "unknown";
}

// --------------------------------------------------------- KernelFamily

KernelFamily KernelFamily::separable(BaseKernel base, Weights weights, std::size_t horizon) {
  if (horizon < 2) throw std::invalid_argument("kernel horizon must be at least 2");
  KernelFamily k;
  k.separable_ = true;
  k.horizon_ = horizon;
  switch (weights.kind) {
    case Weights::Kind::unit:
    case Weights::Kind::inverse_gap:
    case Weights::Kind::inverse_later_index:
      k.max_abs_weight_ = 1.0;
      break;
    case Weights::Kind::constant:
      if (!std::isfinite(weights.value)) throw std::invalid_argument("non-finite kernel weight");
      k.max_abs_weight_ = std::abs(weights.value);
      break;
    case Weights::Kind::custom: {
      double m = 0.0;
      for (std::size_t j = 2; j <= horizon; ++j) {
        for (std::size_t i = 1; i < j; ++i) {
          const double a = weights(i, j);
          if (!std::isfinite(a)) {
            throw std::invalid_argument(fmt::format("non-finite kernel weight a({}, {}) = {}", i, j, a));
          }
          m = std::max(m, std::abs(a));
        }
      }
      k.max_abs_weight_ = m;
      break;
    }
  }
  k.sup_bound_ = k.max_abs_weight_ * base.sup_bound();
  k.depends_on_i_ = weights.depends_on_i();
  k.name_ = weights.kind == Weights::Kind::unit ? base.name()
                                                : weights.name() + "*" + base.name();
  k.base_ = std::move(base);
  k.weights_ = std::move(weights);
  return k;
}

KernelFamily KernelFamily::general(PairEval eval, std::size_t horizon, double sup_bound,
                                   bool depends_on_i, std::string name, PairTable table) {
  if (horizon < 2) throw std::invalid_argument("kernel horizon must be at least 2");
  if (!eval) throw std::invalid_argument("general kernel family needs an evaluation callback");
  KernelFamily k;
  k.separable_ = false;
  k.eval_ = std::move(eval);
  k.table_ = std::move(table);
  k.horizon_ = horizon;
  k.sup_bound_ = sup_bound;
  k.max_abs_weight_ = 1.0;
  k.depends_on_i_ = depends_on_i;
  k.name_ = std::move(name);
  return k;
}

Matrix KernelFamily::table(std::size_t i, std::size_t j, std::size_t S) const {
  if (separable_) return weights_(i, j) * base_.finite_table(S);
  if (table_) return table_(i, j);
  const auto n = static_cast<Eigen::Index>(S);
  Matrix out(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    const double xv = static_cast<double>(x);
    for (Eigen::Index y = 0; y < n; ++y) {
      const double yv = static_cast<double>(y);
      out(x, y) = eval_(i, j, StateView(&xv, 1), StateView(&yv, 1));
    }
  }
  return out;
}

KernelFamily KernelFamily::with_horizon(std::size_t horizon) const {
  if (separable_) return separable(base_, weights_, horizon);
  KernelFamily k = *this;
  if (horizon < 2) throw std::invalid_argument("kernel horizon must be at least 2");
  k.horizon_ = horizon;
  return k;
}

PairTables::PairTables(const KernelFamily& family, std::size_t S) : family_(&family), S_(S) {
  if (family.is_separable()) base_ = family.base().finite_table(S);
}

Matrix PairTables::operator()(std::size_t i, std::size_t j) const {
  if (family_->is_separable()) return family_->weights()(i, j) * base_;
  return family_->table(i, j, S_);
}

// --------------------------------------------------------- canonicality

double pi_canonical_deviation(const Matrix& table, const Vector& pi) {
  // E_pi h(X, y) as a function of y, and E_pi h(x, X) as a function of x.
  const Vector first_arg = table.transpose() * pi;
  const Vector second_arg = table * pi;
  return std::max(first_arg.maxCoeff() - first_arg.minCoeff(),
                  second_arg.maxCoeff() - second_arg.minCoeff());
}

CanonicalityReport pi_canonical_deviation(const KernelFamily& kernel, const Vector& pi,
                                          double tolerance) {
  if (pi.size() == 0) throw std::invalid_argument("pi_canonical_deviation needs pi");
  const auto S = static_cast<std::size_t>(pi.size());
  CanonicalityReport report;
  report.tolerance = tolerance;
  report.exact = true;
  if (kernel.is_separable()) {
    report.deviation = kernel.max_abs_weight() * pi_canonical_deviation(kernel.base().finite_table(S), pi);
  } else {
    for (std::size_t j = 2; j <= kernel.horizon(); ++j) {
      for (std::size_t i = 1; i < j; ++i) {
        report.deviation = std::max(report.deviation, pi_canonical_deviation(kernel.table(i, j, S), pi));
      }
    }
  }
  report.canonical = report.deviation <= tolerance;
  return report;
}

CanonicalityReport pi_canonical_deviation(const KernelFamily& kernel,
                                          const std::vector<std::vector<double>>& pi_sample,
                                          std::size_t probes) {
  if (pi_sample.size() < 2) throw std::invalid_argument("Monte Carlo canonicality needs a sampling budget");
  if (!kernel.is_separable()) {
    throw std::invalid_argument("Monte Carlo canonicality is only available for separable kernels");
  }
  probes = std::clamp<std::size_t>(probes, 2, pi_sample.size());
  const BaseKernel& h = kernel.base();
  const auto N = static_cast<double>(pi_sample.size());

  double worst_se = 0.0;
  const auto spread = [&](bool first) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t p = 0; p < probes; ++p) {
      double sum = 0.0;
      double sq = 0.0;
      for (const auto& s : pi_sample) {
        const double v = first ? h(s, pi_sample[p]) : h(pi_sample[p], s);
        sum += v;
        sq += v * v;
      }
      const double mean = sum / N;
      const double var = std::max(0.0, sq / N - mean * mean) * N / (N - 1.0);
      worst_se = std::max(worst_se, std::sqrt(var / N));
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
    }
    return hi - lo;
  };
  CanonicalityReport report;
  report.exact = false;
  const double w = kernel.max_abs_weight();
  report.deviation = w * std::max(spread(true), spread(false));
  report.standard_error = w * worst_se;
  // Difference of two means, each within one standard error.
  report.tolerance = 3.0 * std::sqrt(2.0) * report.standard_error;
  report.canonical = report.deviation <= report.tolerance;
  return report;
}

Matrix hoeffding_project(const Matrix& table, const Vector& pi) {
  const Vector second_arg_mean = table * pi;             // x -> E_pi h(x, X)
  const Vector first_arg_mean = table.transpose() * pi;  // y -> E_pi h(X, y)
  Matrix out = table;
  out.colwise() -= second_arg_mean;
  out.rowwise() -= first_arg_mean.transpose();
  return out;
}

BaseKernel hoeffding_project(const BaseKernel& base, const Vector& pi) {
  return BaseKernel::table(hoeffding_project(base.finite_table(static_cast<std::size_t>(pi.size())), pi))
      .renamed("hoeffding(" + base.name() + ")");
}

KernelFamily hoeffding_project(const KernelFamily& kernel, const Vector& pi) {
  if (pi.size() == 0) throw std::invalid_argument("hoeffding_project needs pi");
  if (kernel.is_separable()) {
    return KernelFamily::separable(hoeffding_project(kernel.base(), pi), kernel.weights(),
                                   kernel.horizon());
  }
  const auto S = static_cast<std::size_t>(pi.size());
  auto table_fn = [kernel, pi, S](std::size_t i, std::size_t j) {
    return hoeffding_project(kernel.table(i, j, S), pi);
  };
  auto eval = [table_fn, S](std::size_t i, std::size_t j, StateView x, StateView y) {
    const Matrix t = table_fn(i, j);
    return t(static_cast<Eigen::Index>(state_index(x, S)), static_cast<Eigen::Index>(state_index(y, S)));
  };
  return KernelFamily::general(eval, kernel.horizon(), 3.0 * kernel.sup_bound(), kernel.depends_on_i(),
                               "hoeffding(" + kernel.name() + ")", table_fn);
}

KernelFamily hoeffding_project(const KernelFamily& kernel,
                               const std::vector<std::vector<double>>& pi_sample) {
  if (!kernel.is_separable()) {
    throw std::invalid_argument("Monte Carlo projection is only available for separable kernels");
  }
  return KernelFamily::separable(BaseKernel::projected(kernel.base(), pi_sample), kernel.weights(),
                                 kernel.horizon());
}

KernelFamily weighted_kernel(const BaseKernel& base, const Weights& weights, std::size_t horizon,
                             const Vector* pi) {
  if (pi != nullptr) {
    const double dev = pi_canonical_deviation(base.finite_table(static_cast<std::size_t>(pi->size())), *pi);
    if (dev > 1e-10) {
      throw std::invalid_argument(
          fmt::format("weighted_kernel: base kernel is not pi-canonical (deviation {})", dev));
    }
  }
  return KernelFamily::separable(base, weights, horizon);
}

// ------------------------------------------------------------ constants

SupConstant sup_constant_A(const KernelFamily& kernel, std::size_t S) {
  SupConstant out;
  out.exact = true;
  double m = 0.0;
  if (kernel.is_separable()) {
    m = kernel.max_abs_weight() * kernel.base().finite_table(S).cwiseAbs().maxCoeff();
  } else {
    for (std::size_t j = 2; j <= kernel.horizon(); ++j) {
      for (std::size_t i = 1; i < j; ++i) m = std::max(m, kernel.table(i, j, S).cwiseAbs().maxCoeff());
    }
  }
  out.A = 2.0 * m;
  out.lower = out.A;
  out.upper = out.A;
  return out;
}

SupConstant sup_constant_A(const KernelFamily& kernel,
                           const std::vector<std::vector<double>>& probes) {
  if (!kernel.is_separable()) {
    throw std::invalid_argument("probe-based A is only available for separable kernels");
  }
  double m = 0.0;
  for (const auto& x : probes) {
    for (const auto& y : probes) m = std::max(m, std::abs(kernel.base()(x, y)));
  }
  SupConstant out;
  out.exact = false;
  out.lower = 2.0 * kernel.max_abs_weight() * m;
  out.upper = 2.0 * kernel.sup_bound();
  out.A = out.upper;
  return out;
}

double pi_expectation(const Matrix& table, const Vector& pi) { return pi.dot(table * pi); }

double CenteredKernel::e_pi(std::size_t i, std::size_t j) const {
  return pi_expectation(family.table(i, j, static_cast<std::size_t>(pi.size())), pi);
}

Matrix CenteredKernel::table(std::size_t i, std::size_t j) const {
  Matrix t = family.table(i, j, static_cast<std::size_t>(pi.size()));
  t.array() -= pi_expectation(t, pi);
  return t;
}

}  // namespace ustatlab
