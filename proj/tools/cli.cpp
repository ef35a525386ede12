#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ustatlab/bounds.hpp"
#include "ustatlab/chain.hpp"
#include "ustatlab/config.hpp"
#include "ustatlab/experiments.hpp"
#include "ustatlab/kernels.hpp"
#include "ustatlab/report_io.hpp"
#include "ustatlab/splitting.hpp"
#include "ustatlab/ustat.hpp"

namespace ustatlab::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Exit code 2 is reserved for verify; everything else that fails is 1.
struct VerifyFailure {
  std::vector<std::string> failures;
};

// One instance per subcommand so each --help shows its own defaults.
struct Flags {
  std::string config;
  std::string out = "ustatlab-out";
  std::size_t threads = default_threads();
  std::uint64_t seed = 1;
  std::size_t n = 100;
  std::size_t replicates = 100;
  std::size_t tn = 0;
  double r = 0.0;
  std::string initial;
  std::string centering = "joint-expectation";
  std::string normalization = "raw";
  std::size_t mc_budget = 0;
  std::vector<std::size_t> n_grid;
  std::vector<double> u_grid;
  double beta = 1.0;
  bool fit_beta = false;
  double kappa = 1.0;
  bool no_calibrate = false;
  double held_out_u = 0.0;
  double quantile = 0.99;
  std::size_t steps = 100000;
  double rho = 0.0;
  std::size_t probes = 1000;
  std::size_t outer = 200;
  std::size_t inner = 50;
  std::string kind;
  std::string ranks;
  std::string sample0;
  std::string sample1;
  std::string weights0;
  std::string weights1;
};

bool given(const CLI::App& sub, const std::string& flag) {
  const auto* opt = sub.get_option_no_throw(flag);
  return opt != nullptr && opt->count() > 0;
}

// Flag value if given, else [run] entry, else the built-in default; the
// resolved value is recorded in the run table.
class Resolver {
 public:
  Resolver(const CLI::App& sub, Json& run) : sub_(sub), run_(run) {}

  template <typename T>
  T get(const std::string& key, const std::string& flag, const T& flag_value) {
    T v = flag_value;
    if (!given(sub_, flag) && run_.contains(key)) v = config_value<T>(run_, key, flag_value);
    run_[key] = v;
    return v;
  }

 private:
  const CLI::App& sub_;
  Json& run_;
};

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])) != 0) ++used;
    if (used == 0 || used != item.size()) throw std::invalid_argument(fmt::format("{}: '{}' is not a number", what, item));
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(what + " is empty");
  return out;
}

Json json_vector(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

Json ergodicity_json(const ErgodicityConstants& e) {
  Json j;
  j["pi"] = json_vector(e.pi);
  j["rho"] = e.rho;
  j["L"] = e.L;
  j["source"] = e.source == ErgodicitySource::dobrushin ? "dobrushin" : "user-supplied";
  j["lambda"] = e.lambda;
  j["m"] = e.m;
  j["delta1"] = e.delta_m;
  j["mu"] = json_vector(e.mu);
  j["delta_M"] = e.delta_M;
  j["nu"] = json_vector(e.nu);
  j["t_mix"] = e.t_mix;
  return j;
}

class Session {
 public:
  Session(const std::string& command, const CLI::App& sub, const Flags& f) : command_(command), f_(f) {
    if (!f.config.empty()) config_ = parse_config(read_text_file(f.config));
    if (!config_.is_object()) config_ = Json::object();
    if (!config_.contains("run") || !config_["run"].is_object()) config_["run"] = Json::object();
    resolver_.emplace(sub, config_["run"]);
    config_["run"]["command"] = command;
    if (given(sub, "--initial")) {
      if (!config_.contains("model")) config_["model"] = Json::object();
      config_["model"]["initial"] = f.initial;
    }
  }

  Resolver& run() { return *resolver_; }

  const Json& table(const std::string& name) const {
    if (!config_.contains(name)) throw ConfigError(fmt::format("{} needs a [{}] table (pass --config)", command_, name));
    return config_.at(name);
  }

  ChainModel model() const { return model_from_config(table("model")); }

  InitialLaw initial() const { return initial_from_config(config_.value("model", Json::object())); }

  FiniteChain finite_chain() const {
    auto m = model();
    if (!std::holds_alternative<FiniteChain>(m)) {
      throw std::invalid_argument(fmt::format("{} needs a finite chain ([model] kind = \"finite\")", command_));
    }
    return std::get<FiniteChain>(m);
  }

  ErgodicityConstants ergodicity(const FiniteChain& chain) const {
    const Json& m = table("model");
    if (m.contains("rho") || m.contains("L")) {
      return ergodicity_constants(chain, config_value<double>(m, "L", 1.0), config_value<double>(m, "rho", 0.0));
    }
    return ergodicity_constants(chain);
  }

  KernelFamily kernel(std::size_t horizon, const ChainModel& model) const {
    return kernel_from_config(table("kernel"), horizon, model);
  }

  // Provenance files; the resolved config omits --out and --threads so that
  // it does not depend on where or how wide the run was.
  fs::path output_dir(std::uint64_t seed) {
    const fs::path dir(f_.out);
    fs::create_directories(dir);
    write_text_file(dir / "resolved_config.cfg", serialize_config(config_));
    write_text_file(dir / "seed", fmt::format("{}\n", seed));
    write_text_file(dir / "VERSION", std::string(USTATLAB_VERSION) + "\n");
    return dir;
  }

 private:
  std::string command_;
  const Flags& f_;
  Json config_;
  std::optional<Resolver> resolver_;
};

std::optional<double> positive_or_empty(double v) { return v > 0.0 ? std::optional<double>(v) : std::nullopt; }

std::size_t resolve_tn(std::size_t tn_override, double rho, std::size_t n, std::optional<double> r) {
  if (tn_override > 0) return tn_override;
  const auto choice = compute_tn(rho, n, r);
  if (choice.clamped) std::cerr << "warning: " << choice.warning << "\n";
  return choice.t_n;
}

// ------------------------------------------------------------ subcommands

int cmd_simulate(const CLI::App& sub, const Flags& f) {
  Session s("simulate", sub, f);
  const auto n = s.run().get<std::size_t>("n", "--n", f.n);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto path = simulate(s.model(), n, seed, s.initial());
  const auto dir = s.output_dir(seed);
  write_text_file(dir / "path.csv", path_to_csv(path));
  if (path.approximate_stationary) std::cerr << "note: X_1 drawn after a burn-in of " << path.burn_in << " steps\n";
  return 0;
}

int cmd_constants(const CLI::App& sub, const Flags& f) {
  Session s("constants", sub, f);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto model = s.model();
  Json j;
  j["model"] = model_kind(model);
  if (const auto* chain = std::get_if<FiniteChain>(&model)) {
    const Json e = ergodicity_json(s.ergodicity(*chain));
    for (const auto& [k, v] : e.items()) j[k] = v;
  } else {
    const ARCHModel arch =
        std::holds_alternative<ARCHModel>(model) ? std::get<ARCHModel>(model) : as_arch(std::get<AR1Model>(model));
    const auto probes = s.run().get<std::size_t>("probes", "--probes", f.probes);
    const auto env = arch_envelopes(arch);
    j["delta_m"] = env.delta_m;
    j["delta_M"] = env.delta_M;
    j["quadrature_error_m"] = env.quadrature_error_m;
    j["quadrature_error_M"] = env.quadrature_error_M;
    j["envelope_probes"] = probes;
    j["envelope_violations"] = count_envelope_violations(arch, env, probes, seed);
  }
  const auto dir = s.output_dir(seed);
  const std::string text = dump_json(j);
  write_text_file(dir / "constants.json", text);
  std::cout << text;
  return 0;
}

int cmd_ustat(const CLI::App& sub, const Flags& f) {
  Session s("ustat", sub, f);
  const auto n = s.run().get<std::size_t>("n", "--n", f.n);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto centering = parse_centering(s.run().get<std::string>("centering", "--centering", f.centering));
  const auto norm = parse_normalization(s.run().get<std::string>("normalization", "--normalization", f.normalization));
  const auto budget = s.run().get<std::size_t>("mc_budget", "--mc-budget", f.mc_budget);
  const auto model = s.model();
  const auto kernel = s.kernel(n, model);
  const auto initial = s.initial();
  CenteringOptions opts;
  opts.mc_budget = budget;
  opts.mc_seed = seed;
  opts.initial = initial;
  const auto center = make_centering(model, kernel, centering, opts);
  const auto path = simulate(model, n, seed, initial);
  const auto res = u_stat(path, kernel, center, norm);
  const std::string row = statistic_csv_row("ustat", n, seed, to_string(centering), res.value, res.standard_error);
  const auto dir = s.output_dir(seed);
  write_text_file(dir / "statistic.csv", statistic_csv_header() + row);
  std::cout << row;
  return 0;
}

int cmd_decompose(const CLI::App& sub, const Flags& f) {
  Session s("decompose", sub, f);
  const auto n = s.run().get<std::size_t>("n", "--n", f.n);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto tn_flag = s.run().get<std::size_t>("tn", "--tn", f.tn);
  const auto r = positive_or_empty(s.run().get<double>("r", "--r", f.r));
  const auto chain = s.finite_chain();
  const auto ergo = s.ergodicity(chain);
  const auto kernel = s.kernel(n, chain);
  const auto initial = s.initial();
  const std::size_t tn = resolve_tn(tn_flag, ergo.rho, n, r);
  const auto path = simulate(chain, n, seed, initial);
  const auto d = martingale_decomposition(chain, initial_distribution(chain, initial), path, kernel, tn);
  Json j;
  j["n"] = n;
  j["seed"] = seed;
  j["t_n"] = d.t_n;
  j["M"] = d.M;
  j["R"] = d.R;
  j["u_stat"] = d.u_stat;
  j["residual"] = std::abs(d.M + d.R - d.u_stat);
  j["levels"] = d.levels;
  const auto dir = s.output_dir(seed);
  const std::string text = dump_json(j);
  write_text_file(dir / "decomposition.json", text);
  std::cout << text;
  return 0;
}

int cmd_bounds(const CLI::App& sub, const Flags& f) {
  Session s("bounds", sub, f);
  const auto n = s.run().get<std::size_t>("n", "--n", f.n);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto tn_flag = s.run().get<std::size_t>("tn", "--tn", f.tn);
  const auto r = positive_or_empty(s.run().get<double>("r", "--r", f.r));
  const auto u_grid = s.run().get<std::vector<double>>("u_grid", "--u-grid", f.u_grid);
  const auto kappa = s.run().get<double>("kappa", "--kappa", f.kappa);
  const auto beta = s.run().get<double>("beta", "--beta", f.beta);
  const auto model = s.model();
  const auto kernel = s.kernel(n, model);
  const std::optional<std::size_t> tn = tn_flag > 0 ? std::optional<std::size_t>(tn_flag) : std::nullopt;

  BoundConstants c;
  if (const auto* chain = std::get_if<FiniteChain>(&model)) {
    const auto ergo = s.ergodicity(*chain);
    c = finite_bound_constants(*chain, ergo, kernel, initial_distribution(*chain, s.initial()), r, tn);
  } else {
    const auto rho = s.run().get<double>("rho", "--rho", f.rho);
    MonteCarloBudget b;
    b.probes = s.run().get<std::size_t>("probes", "--probes", f.probes);
    b.outer = s.run().get<std::size_t>("outer", "--outer", f.outer);
    b.inner = s.run().get<std::size_t>("inner", "--inner", f.inner);
    b.seed = seed;
    c = monte_carlo_bound_constants(model, kernel, rho, b, r, tn);
  }
  c.kappa = kappa;
  c.beta = beta;

  std::string rhs = "n,u,level,T1a,T1b,T2,Eq3\n";
  for (double u : u_grid) {
    const auto cell = [&](TheoremVariant v) {
      return (v == TheoremVariant::T1a || v == TheoremVariant::Eq3 || c.has_Cn) ? format_number(theorem_rhs(v, c, n, u))
                                                                                 : std::string("nan");
    };
    rhs += fmt::format("{},{},{},{},{},{},{}\n", n, format_number(u), format_number(probability_level(beta, n, u)),
                       cell(TheoremVariant::T1a), cell(TheoremVariant::T1b), cell(TheoremVariant::T2),
                       cell(TheoremVariant::Eq3));
  }
  const auto dir = s.output_dir(seed);
  const std::string text = dump_json(to_json(c));
  write_text_file(dir / "constants.json", text);
  write_text_file(dir / "rhs.csv", rhs);
  std::cout << text;
  return 0;
}

int cmd_split(const CLI::App& sub, const Flags& f) {
  Session s("split", sub, f);
  const auto steps = s.run().get<std::size_t>("steps", "--steps", f.steps);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto chain = s.finite_chain();
  const auto ergo = s.ergodicity(chain);
  const auto trace = split_simulate(chain, ergo, steps, seed);
  const auto dir = s.output_dir(seed);
  write_text_file(dir / "trace.csv", split_trace_csv(trace));
  const std::string text = dump_json(regeneration_summary(trace));
  write_text_file(dir / "regeneration.json", text);
  std::cout << text;
  return 0;
}

int cmd_stats(const CLI::App& sub, const Flags& f) {
  Session s("stats", sub, f);
  const auto kind = s.run().get<std::string>("statistic", "kind", f.kind);
  double value = 0.0;
  std::size_t n = 0;
  if (kind == "tau-kendall" || kind == "tau-ap") {
    const auto ranks = parse_list(s.run().get<std::string>("ranks", "--ranks", f.ranks), "--ranks");
    n = ranks.size();
    value = kind == "tau-kendall" ? tau_kendall(ranks) : tau_ap(ranks);
  } else if (kind == "wilcoxon") {
    const auto x0 = parse_list(s.run().get<std::string>("sample0", "--sample0", f.sample0), "--sample0");
    const auto x1 = parse_list(s.run().get<std::string>("sample1", "--sample1", f.sample1), "--sample1");
    const auto w0s = s.run().get<std::string>("weights0", "--weights0", f.weights0);
    const auto w1s = s.run().get<std::string>("weights1", "--weights1", f.weights1);
    const auto w0 = w0s.empty() ? std::vector<double>(x0.size(), 1.0) : parse_list(w0s, "--weights0");
    const auto w1 = w1s.empty() ? std::vector<double>(x1.size(), 1.0) : parse_list(w1s, "--weights1");
    if (w0.size() != x0.size() || w1.size() != x1.size()) {
      throw std::invalid_argument("each weight list must match its sample in length");
    }
    n = x0.size() + x1.size();
    value = wilcoxon_weighted(x0, x1, w0, w1);
  } else {
    throw std::invalid_argument("unknown statistic '" + kind + "' (tau-kendall, tau-ap, wilcoxon)");
  }
  const auto dir = s.output_dir(0);
  write_text_file(dir / "statistic.csv", statistic_csv_header() + statistic_csv_row(kind, n, 0, "none", value, 0.0));
  std::cout << format_number(value) << "\n";
  return 0;
}

int cmd_verify(const CLI::App& sub, const Flags& f) {
  Session s("verify", sub, f);
  const auto n = s.run().get<std::size_t>("n", "--n", f.n);
  const auto seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  const auto replicates = s.run().get<std::size_t>("replicates", "--replicates", f.replicates);
  const auto tn_flag = s.run().get<std::size_t>("tn", "--tn", f.tn);
  const auto r = positive_or_empty(s.run().get<double>("r", "--r", f.r));
  const auto steps = s.run().get<std::size_t>("steps", "--steps", f.steps);
  const auto chain = s.finite_chain();
  const auto ergo = s.ergodicity(chain);
  const auto kernel = s.kernel(n, chain);
  IdentityOptions o;
  o.seed = seed;
  o.initial = s.initial();
  o.threads = f.threads;
  const auto identity = identity_suite(chain, kernel, n, resolve_tn(tn_flag, ergo.rho, n, r), replicates, o);
  const auto regen = regeneration_suite(chain, ergo, steps, seed);
  const auto dir = s.output_dir(seed);
  write_report(identity, dir / "identity");
  write_report(regen, dir / "regeneration");
  std::cout << fmt::format("identity: {} (decomposition {}, martingale {}, |R| {})\n",
                           identity.passed ? "ok" : "FAILED", format_number(identity.summary["max_decomposition_residual"]),
                           format_number(identity.summary["max_martingale_residual"]),
                           format_number(identity.summary["max_abs_R"]));
  std::cout << fmt::format("regeneration: {} ({} regenerations)\n", regen.passed ? "ok" : "FAILED",
                           regen.summary["n_regen"].get<std::size_t>());
  VerifyFailure vf;
  for (const auto& m : identity.failures) vf.failures.push_back("identity: " + m);
  for (const auto& m : regen.failures) vf.failures.push_back("regeneration: " + m);
  if (!vf.failures.empty()) throw vf;
  return 0;
}

ExperimentPlan make_plan(Session& s, const Flags& f, Statistic statistic) {
  ExperimentPlan p;
  p.statistic = statistic;
  p.threads = f.threads;
  p.seed = s.run().get<std::uint64_t>("seed", "--seed", f.seed);
  p.n_grid = s.run().get<std::vector<std::size_t>>("n_grid", "--n-grid", f.n_grid);
  p.replicates = s.run().get<std::size_t>("replicates", "--replicates", f.replicates);
  p.centering = parse_centering(s.run().get<std::string>("centering", "--centering", f.centering));
  p.mc_budget = s.run().get<std::size_t>("mc_budget", "--mc-budget", f.mc_budget);
  p.r = positive_or_empty(s.run().get<double>("r", "--r", f.r));
  p.model = s.model();
  p.initial = s.initial();
  if (p.n_grid.empty()) throw std::invalid_argument("n_grid is empty");
  p.kernel = s.kernel(p.n_grid.front(), p.model);
  return p;
}

void finish_experiment(Session& s, const ExperimentReport& rep, std::uint64_t seed) {
  const auto dir = s.output_dir(seed);
  write_report(rep, dir);
  for (const auto& m : rep.failures) std::cerr << "check failed: " << m << "\n";
  std::cout << dump_json(rep.summary);
}

int cmd_rate(const CLI::App& sub, const Flags& f) {
  Session s("rate", sub, f);
  auto p = make_plan(s, f, Statistic::rate);
  p.rate_quantile = s.run().get<double>("quantile", "--quantile", f.quantile);
  finish_experiment(s, rate_experiment(p), p.seed);
  return 0;
}

int cmd_tail(const CLI::App& sub, const Flags& f) {
  Session s("tail", sub, f);
  auto p = make_plan(s, f, Statistic::tail);
  p.u_grid = s.run().get<std::vector<double>>("u_grid", "--u-grid", f.u_grid);
  const bool fit_beta = s.run().get<bool>("fit_beta", "--fit-beta", f.fit_beta);
  const double beta = s.run().get<double>("beta", "--beta", f.beta);
  p.beta = fit_beta ? std::nullopt : std::optional<double>(beta);
  p.kappa = s.run().get<double>("kappa", "--kappa", f.kappa);
  p.calibrate = !s.run().get<bool>("no_calibrate", "--no-calibrate", f.no_calibrate);
  p.held_out_u = positive_or_empty(s.run().get<double>("held_out_u", "--held-out-u", f.held_out_u));
  finish_experiment(s, tail_experiment(p), p.seed);
  return 0;
}

// ------------------------------------------------------------ wiring

void add_common(CLI::App& sub, Flags& f, bool with_config = true) {
  if (with_config) sub.add_option("--config", f.config, "Config file (see README for the grammar)");
  sub.add_option("--out", f.out, "Output directory");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Concentration-bound lab for U-statistics of uniformly ergodic Markov chains", "ustatlab"};
  app.set_version_flag("--version", USTATLAB_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::map<std::string, Flags> flags;
  std::map<std::string, int (*)(const CLI::App&, const Flags&)> handlers;
  const auto add = [&](const std::string& name, const std::string& help, auto handler) {
    auto* sub = app.add_subcommand(name, help);
    handlers[name] = handler;
    return std::pair<CLI::App*, Flags*>(sub, &flags[name]);
  };

  {
    auto [sub, f] = add("simulate", "Simulate one path and write path.csv", cmd_simulate);
    add_common(*sub, *f);
    sub->add_option("--n", f->n, "Path length");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:v1,v2,...");
  }
  {
    auto [sub, f] = add("constants", "Ergodicity and Doeblin constants (envelopes for AR(1)/ARCH)", cmd_constants);
    add_common(*sub, *f);
    sub->add_option("--seed", f->seed, "Seed for the envelope probes");
    sub->add_option("--probes", f->probes, "Envelope probe points (AR(1)/ARCH)");
  }
  {
    auto [sub, f] = add("ustat", "Centered U-statistic of one simulated path", cmd_ustat);
    add_common(*sub, *f);
    sub->add_option("--n", f->n, "Path length");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:v1,v2,...");
    sub->add_option("--centering", f->centering, "none | pi-expectation | joint-expectation");
    sub->add_option("--normalization", f->normalization, "raw | pairs");
    sub->add_option("--mc-budget", f->mc_budget, "Monte Carlo centering budget (AR(1)/ARCH)");
  }
  {
    auto [sub, f] = add("decompose", "Martingale decomposition U = M + R of one path", cmd_decompose);
    add_common(*sub, *f);
    sub->add_option("--n", f->n, "Path length");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:state");
    sub->add_option("--tn", f->tn, "Truncation level t_n (0 = from rho and r)");
    sub->add_option("--r", f->r, "Multiplier r in t_n = floor(r log n) (0 = 1.05 x threshold)");
  }
  {
    auto [sub, f] = add("bounds", "A, B_n, C_n, t_n and the theorem right-hand sides", cmd_bounds);
    f->u_grid = {1.0, 2.0, 4.0, 8.0};
    add_common(*sub, *f);
    sub->add_option("--n", f->n, "Horizon");
    sub->add_option("--seed", f->seed, "Seed for Monte Carlo constants");
    sub->add_option("--initial", f->initial, "Initial law for C_n: stationary | point:state");
    sub->add_option("--tn", f->tn, "Truncation level t_n (0 = from rho and r)");
    sub->add_option("--r", f->r, "Multiplier r (0 = 1.05 x threshold)");
    sub->add_option("--u-grid", f->u_grid, "u values for rhs.csv")->delimiter(',');
    sub->add_option("--kappa", f->kappa, "kappa");
    sub->add_option("--beta", f->beta, "beta");
    sub->add_option("--rho", f->rho, "Ergodicity rate for AR(1)/ARCH");
    sub->add_option("--probes", f->probes, "Monte Carlo probe points");
    sub->add_option("--outer", f->outer, "Monte Carlo outer samples");
    sub->add_option("--inner", f->inner, "Monte Carlo inner samples");
  }
  {
    auto [sub, f] = add("split", "Split-chain trace and regeneration summary", cmd_split);
    add_common(*sub, *f);
    sub->add_option("--steps", f->steps, "Trace length");
    sub->add_option("--seed", f->seed, "Base seed");
  }
  {
    auto [sub, f] = add("stats", "Rank statistics: tau-kendall | tau-ap | wilcoxon", cmd_stats);
    add_common(*sub, *f, false);
    sub->add_option("kind", f->kind, "tau-kendall | tau-ap | wilcoxon")->required();
    sub->add_option("--ranks", f->ranks, "Comma-separated values (tau statistics)");
    sub->add_option("--sample0", f->sample0, "Comma-separated first sample (wilcoxon)");
    sub->add_option("--sample1", f->sample1, "Comma-separated second sample (wilcoxon)");
    sub->add_option("--weights0", f->weights0, "Weights of the first sample (empty = unit)");
    sub->add_option("--weights1", f->weights1, "Weights of the second sample (empty = unit)");
  }
  {
    auto [sub, f] = add("verify", "Decomposition, martingale, remainder and regeneration checks", cmd_verify);
    f->n = 50;
    add_common(*sub, *f);
    sub->add_option("--n", f->n, "Path length");
    sub->add_option("--replicates", f->replicates, "Replicates of the identity suite");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:state");
    sub->add_option("--tn", f->tn, "Truncation level t_n (0 = from rho and r)");
    sub->add_option("--r", f->r, "Multiplier r (0 = 1.05 x threshold)");
    sub->add_option("--steps", f->steps, "Split-chain steps for the regeneration suite");
    sub->add_option("--threads", f->threads, "Worker threads (results do not depend on it)");
  }
  {
    auto [sub, f] = add("rate", "Log-log rate of the pairs-normalized U-statistic, weighted vs unweighted", cmd_rate);
    f->n_grid = {64, 128, 256, 512, 1024};
    f->replicates = 500;
    add_common(*sub, *f);
    sub->add_option("--n-grid", f->n_grid, "Horizons")->delimiter(',');
    sub->add_option("--replicates", f->replicates, "Replicates per horizon");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:...");
    sub->add_option("--centering", f->centering, "none | pi-expectation | joint-expectation");
    sub->add_option("--mc-budget", f->mc_budget, "Monte Carlo centering budget (AR(1)/ARCH)");
    sub->add_option("--quantile", f->quantile, "Quantile level of |U| used in the fit");
    sub->add_option("--threads", f->threads, "Worker threads (results do not depend on it)");
  }
  {
    auto [sub, f] = add("tail", "Empirical tail quantiles against the theorem bounds", cmd_tail);
    f->n_grid = {64, 128, 256};
    f->u_grid = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    f->replicates = 200;
    add_common(*sub, *f);
    sub->add_option("--n-grid", f->n_grid, "Horizons")->delimiter(',');
    sub->add_option("--u-grid", f->u_grid, "u values")->delimiter(',');
    sub->add_option("--replicates", f->replicates, "Replicates per horizon (>= 100)");
    sub->add_option("--seed", f->seed, "Base seed");
    sub->add_option("--initial", f->initial, "Initial law: stationary | point:...");
    sub->add_option("--centering", f->centering, "none | pi-expectation | joint-expectation");
    sub->add_option("--mc-budget", f->mc_budget, "Monte Carlo centering budget (AR(1)/ARCH)");
    sub->add_option("--r", f->r, "Multiplier r (0 = 1.05 x threshold)");
    sub->add_option("--beta", f->beta, "Supplied beta");
    sub->add_flag("--fit-beta", f->fit_beta, "Pick beta from a grid instead of --beta");
    sub->add_option("--kappa", f->kappa, "kappa used when calibration is off");
    sub->add_flag("--no-calibrate", f->no_calibrate, "Skip the kappa calibration");
    sub->add_option("--held-out-u", f->held_out_u, "u excluded from calibration (0 = largest u)");
    sub->add_option("--threads", f->threads, "Worker threads (results do not depend on it)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 1;
  }

  for (auto* sub : app.get_subcommands()) {
    const std::string name = sub->get_name();
    try {
      return handlers.at(name)(*sub, flags.at(name));
    } catch (const VerifyFailure& v) {
      for (const auto& m : v.failures) std::cerr << "verify failed: " << one_line(m) << "\n";
      return 2;
    } catch (const ConfigError& e) {
      std::cerr << "error: config: " << one_line(e.what()) << "\n";
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: config: " << one_line(e.what()) << "\n";
    } catch (const std::exception& e) {
      std::cerr << "error: " << name << ": " << one_line(e.what()) << "\n";
    }
    return 1;
  }
  return 1;
}

}  // namespace ustatlab::cli
