#include "ustatlab/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "ustatlab/rng.hpp"

namespace ustatlab {

namespace {

std::vector<double> cumulative(const Vector& p) {
  std::vector<double> c(static_cast<std::size_t>(p.size()));
  double s = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    s += p[k];
    c[static_cast<std::size_t>(k)] = s;
  }
  return c;
}

}  // namespace

Matrix residual_kernel(const Matrix& P, double delta, const Vector& mu) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument(fmt::format("residual kernel needs delta in (0, 1), got {}", delta));
  }
  Matrix R = P;
  R.rowwise() -= delta * mu.transpose();
  R /= 1.0 - delta;
  // Minorization guarantees nonnegativity up to rounding.
  if (R.minCoeff() < -1e-12) {
    throw std::domain_error(fmt::format("residual kernel has a negative entry {}", R.minCoeff()));
  }
  return R.cwiseMax(0.0);
}

double reconstruction_error(const Matrix& P, double delta, const Vector& mu) {
  if (delta >= 1.0) {
    Matrix diff = P;
    diff.rowwise() -= mu.transpose();
    return diff.cwiseAbs().maxCoeff();
  }
  Matrix R = P;
  R.rowwise() -= delta * mu.transpose();
  R /= 1.0 - delta;
  Matrix back = (1.0 - delta) * R;
  back.rowwise() += delta * mu.transpose();
  return (back - P).cwiseAbs().maxCoeff();
}

SplitTrace split_simulate(const FiniteChain& chain, const ErgodicityConstants& constants, std::size_t n,
                          std::uint64_t seed, std::uint64_t stream_id) {
  const double delta = constants.delta_m;
  if (!(delta > 0.0)) throw std::invalid_argument("split chain needs delta_1 > 0");
  if (delta > 1.0 + 1e-12) throw std::invalid_argument("delta_1 must not exceed 1");
  if (constants.m != 1) throw std::invalid_argument("only m = 1 splitting is implemented");
  if (n < 1) throw std::invalid_argument("split trace needs n >= 1");
  const std::size_t S = chain.size();
  if (constants.mu.size() != static_cast<Eigen::Index>(S)) {
    throw std::invalid_argument("mu has the wrong number of states");
  }

  const bool full = delta >= 1.0 - 1e-15;
  const auto mu_cum = cumulative(constants.mu);
  std::vector<std::vector<double>> res_cum;
  if (!full) {
    const Matrix R = residual_kernel(chain.transition, delta, constants.mu);
    for (std::size_t x = 0; x < S; ++x) res_cum.push_back(cumulative(R.row(static_cast<Eigen::Index>(x)).transpose()));
  }

  RandomStream rng(seed, stream_id);
  SplitTrace t;
  t.delta = delta;
  t.seed = seed;
  t.stream_id = stream_id;
  t.path.reserve(n);
  t.bells.reserve(n);
  const Vector init = chain.stationary_start() ? stationary_distribution(chain) : chain.initial;
  std::size_t x = rng.from_cumulative(cumulative(init));
  t.path.push_back(x);
  for (std::size_t step = 1; step <= n; ++step) {
    const bool bell = full || rng.bernoulli(delta);
    t.bells.push_back(bell ? 1 : 0);
    if (step == n) break;
    x = bell ? rng.from_cumulative(mu_cum) : rng.from_cumulative(res_cum[x]);
    t.path.push_back(x);
  }

  std::size_t last = 0;
  for (std::size_t step = 1; step <= n; ++step) {
    if (!t.bells[step - 1]) continue;
    t.regen_times.push_back(step - last);
    if (last > 0) t.blocks.emplace_back(last + 1, step);
    last = step;
  }
  return t;
}

std::vector<std::size_t> regeneration_times(const SplitTrace& trace) {
  if (trace.regen_times.empty()) {
    throw std::domain_error(
        fmt::format("no bell rang in {} steps; simulate a longer trace", trace.bells.size()));
  }
  return trace.regen_times;
}

OrliczEstimate orlicz_norm_estimate(std::span<const double> samples) {
  if (samples.size() < 1000) {
    throw std::invalid_argument(fmt::format("Orlicz estimate needs at least 1000 samples, got {}", samples.size()));
  }
  double mx = 0.0;
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("Orlicz estimate: non-finite sample");
    mx = std::max(mx, std::abs(v));
  }
  if (!(mx > 0.0)) throw std::domain_error("Orlicz estimate: all samples are zero");
  const auto N = static_cast<double>(samples.size());
  const auto moment = [&](double gamma) {
    double s = 0.0;
    for (double v : samples) s += std::exp(std::abs(v) / gamma);
    return s / N;
  };
  double lo = mx / 50.0;
  double hi = 50.0 * mx;
  if (!(moment(lo) > 2.0) || !(moment(hi) <= 2.0)) {
    throw std::domain_error(fmt::format("Orlicz bracket not found in [{}, {}]", lo, hi));
  }
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (moment(mid) <= 2.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  OrliczEstimate e;
  e.tau_hat = hi;
  e.lower = lo;
  e.upper = hi;
  e.sample_size = samples.size();
  e.moment = moment(hi);
  return e;
}

BlockSummary block_sums(const SplitTrace& trace, const std::function<double(std::size_t)>& f) {
  if (trace.blocks.size() < 2) {
    throw std::domain_error(fmt::format("block sums need at least 2 complete blocks, got {}", trace.blocks.size()));
  }
  BlockSummary b;
  b.sums.reserve(trace.blocks.size());
  for (const auto& [first, last] : trace.blocks) {
    double z = 0.0;
    for (std::size_t t = first; t <= last; ++t) z += f(trace.path[t - 1]);
    b.sums.push_back(z);
  }
  const auto N = static_cast<double>(b.sums.size());
  double s = 0.0;
  for (double z : b.sums) s += z;
  b.mean = s / N;
  double v = 0.0;
  for (double z : b.sums) v += (z - b.mean) * (z - b.mean);
  b.standard_error = std::sqrt(v / (N - 1.0) / N);
  return b;
}

TailFit geometric_tail_fit(std::span<const std::size_t> times, std::size_t min_count) {
  if (times.empty()) throw std::invalid_argument("tail fit needs samples");
  const std::size_t tmax = *std::max_element(times.begin(), times.end());
  std::vector<std::size_t> exceed(tmax + 1, 0);
  for (std::size_t v : times) {
    for (std::size_t t = 0; t < v && t <= tmax; ++t) ++exceed[t];
  }
  std::vector<double> xs;
  std::vector<double> ys;
  const auto N = static_cast<double>(times.size());
  for (std::size_t t = 1; t <= tmax; ++t) {
    if (exceed[t] < min_count) break;
    xs.push_back(static_cast<double>(t));
    ys.push_back(std::log(static_cast<double>(exceed[t]) / N));
  }
  if (xs.size() < 3) throw std::domain_error("tail fit needs at least 3 populated tail points");
  const auto m = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - mx) * (xs[k] - mx);
    sxy += (xs[k] - mx) * (ys[k] - my);
  }
  TailFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double r = ys[k] - fit.intercept - fit.slope * xs[k];
    rss += r * r;
  }
  fit.slope_se = std::sqrt(rss / (m - 2.0) / sxx);
  fit.points = xs.size();
  return fit;
}

std::string split_trace_csv(const SplitTrace& trace) {
  std::string out = "step,state,bell\n";
  for (std::size_t t = 0; t < trace.path.size(); ++t) {
    out += fmt::format("{},{},{}\n", t + 1, trace.path[t], static_cast<int>(trace.bells[t]));
  }
  return out;
}

nlohmann::ordered_json regeneration_summary(const SplitTrace& trace) {
  const auto T = regeneration_times(trace);
  double mean = 0.0;
  for (std::size_t v : T) mean += static_cast<double>(v);
  mean /= static_cast<double>(T.size());
  nlohmann::ordered_json j;
  j["delta1"] = trace.delta;
  j["n_regen"] = T.size();
  j["mean_T"] = mean;
  if (T.size() >= 1000) {
    const std::vector<double> samples(T.begin(), T.end());
    j["tau_hat"] = orlicz_norm_estimate(samples).tau_hat;
  } else {
    j["tau_hat"] = nullptr;
  }
  return j;
}

}  // namespace ustatlab
