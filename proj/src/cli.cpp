#include "polq/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "polq/error.hpp"
#include "polq/io.hpp"
#include "polq/measure.hpp"
#include "polq/oracle.hpp"
#include "polq/rng.hpp"
#include "polq/solver.hpp"

namespace polq {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_stamp(const char* fmt) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

struct Loaded {
  GridScenario grid;
  std::string hash;
};

Loaded load(const CliOptions& opt) {
  ValidatedScenario vs = validate_scenario(load_scenario(opt.scenario));
  Loaded ld;
  ld.hash = scenario_hash(vs.scenario());
  ld.grid = opt.steps ? discretize(vs, *opt.steps) : discretize(vs);
  return ld;
}

json opt_to_json(const CliOptions& o) {
  auto opt_or_null = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return json{{"command", o.command},
              {"scenario", o.scenario.string()},
              {"seed", o.seed},
              {"paths", opt_or_null(o.paths)},
              {"inner", opt_or_null(o.inner)},
              {"kc", opt_or_null(o.kc)},
              {"budgets", o.budgets},
              {"epsilon", o.epsilon},
              {"steps", opt_or_null(o.steps)},
              {"theta", opt_or_null(o.theta)},
              {"tol", opt_or_null(o.tol)},
              {"max_iter", opt_or_null(o.max_iter)},
              {"which", o.which},
              {"blocks", opt_or_null(o.blocks)},
              {"lattice_points", o.lattice_points},
              {"lattice_range", o.lattice_range}};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json cost_json(const CostEstimate& c) {
  return json{{"mean", c.mean}, {"stderr", c.se}, {"n_paths", c.n_paths}, {"measure", to_string(c.measure)}};
}

SolveConfig solve_config(const CliOptions& opt) {
  SolveConfig c;
  if (opt.paths) c.M = *opt.paths;
  if (opt.inner) c.L = *opt.inner;
  if (opt.kc) c.Kc = *opt.kc;
  if (opt.theta) c.theta = *opt.theta;
  if (opt.tol) c.tol = *opt.tol;
  if (opt.max_iter) c.max_iter = *opt.max_iter;
  if (opt.blocks) c.blocks = *opt.blocks;
  c.seed = opt.seed;
  c.validate();
  return c;
}

std::string history_csv(const SolveResult& r) {
  std::ostringstream os;
  CsvWriter w(os);
  w.header({"iteration", "cost_mean", "cost_stderr", "grad_norm"});
  for (std::size_t k = 0; k < r.cost_history.size(); ++k) {
    w.field(static_cast<long long>(k)).field(r.cost_history[k].mean).field(r.cost_history[k].se);
    if (k < r.grad_norm_history.size())
      w.field(r.grad_norm_history[k]);
    else
      w.field(std::string());
    w.end_row();
  }
  return os.str();
}

std::string tau_csv(const GridScenario& grid, const TauStats& tau) {
  std::ostringstream os;
  CsvWriter w(os);
  w.header({"bin_lo", "bin_hi", "count"});
  const auto bins = static_cast<int>(tau.histogram.size());
  for (int b = 0; b < bins; ++b)
    w.field(grid.T() * b / bins).field(grid.T() * (b + 1) / bins).field(tau.histogram[static_cast<std::size_t>(b)]).end_row();
  return os.str();
}

std::string certificate_csv(const SolveResult& r) {
  std::ostringstream os;
  CsvWriter w(os);
  w.header({"direction", "norm", "adjoint_derivative", "adjoint_stderr", "masked_fraction"});
  for (const auto& v : r.certificate)
    w.field(v.direction).field(v.norm).field(v.adjoint_derivative).field(v.adjoint_se).field(v.masked_fraction).end_row();
  return os.str();
}

void write_solve_artifacts(RunDir& run, const GridScenario& grid, const SolveResult& r, const std::string& prefix,
                           json extra) {
  json doc = solve_result_to_json(r);
  for (auto& [k, v] : extra.items()) doc[k] = v;
  run.write_json(prefix + "result.json", doc);
  run.write_json(prefix + "policy.json", policy_to_json(r.policy));
  run.write_text(prefix + "history.csv", history_csv(r));
  run.write_text(prefix + "certificate.csv", certificate_csv(r));
  run.write_text(prefix + "tau_histogram.csv", tau_csv(grid, r.tau));
}

bool is_input_error(ErrorKind k) {
  switch (k) {
    case ErrorKind::DimensionMismatch:
    case ErrorKind::NotPositive:
    case ErrorKind::NonfiniteEntry:
    case ErrorKind::InvalidArgument:
    case ErrorKind::ParseError:
    case ErrorKind::IoError:
    case ErrorKind::MemoryBudgetExceeded:
    case ErrorKind::CombinatorialBudgetExceeded:
      return true;
    default:
      return false;
  }
}

}  // namespace

RunDir::RunDir(const fs::path& out, const std::string& command, const std::string& scenario_hash)
    : command_(command), scenario_hash_(scenario_hash), started_(utc_stamp("%Y-%m-%dT%H:%M:%SZ")) {
  const std::string base = utc_stamp("%Y%m%dT%H%M%SZ") + "_" + scenario_hash + "_" + command;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out.string() + ": " + ec.message());
  for (int k = 0;; ++k) {
    dir_ = out / (k == 0 ? base : base + "_" + std::to_string(k));
    if (fs::create_directory(dir_, ec)) break;
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir_.string() + ": " + ec.message());
  }
}

fs::path RunDir::file(const std::string& name) {
  for (const auto& a : artifacts_)
    if (a == name) throw Error(ErrorKind::IoError, "artifact written twice: " + name);
  artifacts_.push_back(name);
  return dir_ / name;
}

void RunDir::write_json(const std::string& name, const json& doc) { write_json_file(file(name), doc); }

void RunDir::write_text(const std::string& name, const std::string& text) { write_text_file(file(name), text); }

void RunDir::finish(json meta) {
  json m{{"command", command_},
         {"scenario_hash", scenario_hash_},
         {"version", POLQ_VERSION},
         {"started", started_},
         {"finished", utc_stamp("%Y-%m-%dT%H:%M:%SZ")},
         {"artifacts", artifacts_}};
  for (auto& [k, v] : meta.items()) m[k] = v;
  write_json_file(dir_ / "manifest.json", m);
}

PolicyRep diagnostic_policy(int steps, int d, double Kc) {
  const BasisSpec basis{1, true, false};
  PolicyRep p = PolicyRep::zero(steps, d, basis, Kc);
  for (auto& c : p.coeffs)
    for (int k = 0; k < d; ++k) {
      c(0, k) = -0.3;
      c(1 + basis.lag * d + k, k) = -0.5;
    }
  return p;
}

RunOutcome cmd_diagnose(const CliOptions& opt, std::ostream& log) {
  const Loaded ld = load(opt);
  const GridScenario& grid = ld.grid;
  const int K = grid.steps(), d = grid.d();
  const double Kc = opt.kc.value_or(kNoBudget);
  const int paths = opt.paths.value_or(100000);
  const int inner = opt.inner.value_or(400);
  const PolicyRep pol = diagnostic_policy(K, d, Kc);
  RunDir run(opt.out, "diagnose", ld.hash);

  std::vector<Diagnostic> diags;
  const std::vector<int> cps = default_checkpoints(K);
  const EnsembleSummary sp = summarize_ensemble(grid, pol, Measure::P, derive_seed(opt.seed, "diagnose_P", 0), paths);
  const EnsembleSummary sq = summarize_ensemble(grid, pol, Measure::Q, derive_seed(opt.seed, "diagnose_Q", 0), paths);
  const Diagnostic mp = martingale_diagnostic(grid, sp, DensityProcess::NUnderP, cps);
  const Diagnostic mq = martingale_diagnostic(grid, sq, DensityProcess::ZUnderQ, cps);
  Diagnostic mart;
  mart.name = "martingale";
  mart.rule = "|mean(N) - 1| <= 3 stderr under P and |mean(Z) - 1| <= 3 stderr under Q at every checkpoint";
  mart.checkpoints = mp.checkpoints;
  mart.pass = mp.pass && mq.pass;
  mart.details = json{{"N_under_P", diagnostic_to_json(mp)}, {"Z_under_Q", diagnostic_to_json(mq)}, {"paths", paths}};
  diags.push_back(mart);
  log << "martingale: " << (mart.pass ? "pass" : "FAIL") << "\n";

  const MomentProbe probe = moment_probe(grid, pol, 0.1, {20000, 40000, 80000}, derive_seed(opt.seed, "moment", 0));
  Diagnostic mom;
  mom.name = "moment_stability";
  mom.rule = "E_Q[Z(T)^1.1] at the two largest sample sizes within 20%";
  mom.estimates = probe.estimates;
  mom.stderrs = probe.stderrs;
  mom.pass = probe.stable;
  mom.details = json{{"k", probe.k}, {"sample_sizes", probe.sample_sizes},
                     {"max_relative_change", probe.max_relative_change}};
  diags.push_back(mom);
  log << "moment_stability: " << (mom.pass ? "pass" : "FAIL") << "\n";

  std::vector<NoiseBundle> noises;
  for (int k = 0; k < 200; ++k) noises.push_back(make_noise(grid, derive_seed(opt.seed, "bound", static_cast<std::uint64_t>(k))));
  const std::vector<PolicyRep> policies{pol, PolicyRep::zero(K, d, pol.basis, Kc)};
  diags.push_back(state_bound_check(grid, policies, noises));
  log << diags.back().name << ": " << (diags.back().pass ? "pass" : "FAIL") << "\n";

  const NestedEnsemble nested = build_nested(grid, pol, 40, inner, derive_seed(opt.seed, "ks", 0));
  diags.push_back(ks_consistency(grid, nested, [](const Vector& x) { return x(0); }, K / 2, 4000,
                                 derive_seed(opt.seed, "ks_posterior", 0)));
  log << diags.back().name << ": " << (diags.back().pass ? "pass" : "FAIL") << "\n";

  json arr = json::array();
  bool all = true;
  for (const auto& dg : diags) {
    arr.push_back(diagnostic_to_json(dg));
    all = all && dg.pass;
  }
  run.write_json("diagnostics.json", json{{"scenario_hash", ld.hash}, {"all_pass", all}, {"diagnostics", arr}});
  run.finish(json{{"master_seed", opt.seed}, {"config", opt_to_json(opt)}});
  return RunOutcome{all ? 0 : 1, run.path()};
}

RunOutcome cmd_solve(const CliOptions& opt, std::ostream& log) {
  const Loaded ld = load(opt);
  const GridScenario& grid = ld.grid;
  const SolveConfig cfg = solve_config(opt);
  RunDir run(opt.out, "solve", ld.hash);
  const json meta{{"master_seed", opt.seed}, {"config", config_to_json(cfg)}, {"options", opt_to_json(opt)}};
  SolveResult res;
  int code = 0;
  try {
    res = picard_solve(grid, cfg);
  } catch (const SolveDiverged& e) {
    log << e.what() << "\n";
    res = e.partial();
    code = 1;
  }
  json extra = json::object();
  if (const auto deg = analytic_degenerate(grid)) {
    const double gap = std::abs(res.final_cost.mean - deg->value);
    extra["oracle_check"] = json{{"pattern", deg->pattern},
                                 {"analytic_value", deg->value},
                                 {"abs_gap", gap},
                                 {"within_3_stderr", gap <= 3.0 * res.final_cost.se + 1e-12}};
  }
  write_solve_artifacts(run, grid, res, "", extra);
  run.finish(meta);
  log << "status: " << res.status << ", iterations " << res.iterations << ", cost " << res.final_cost.mean << " +- "
      << res.final_cost.se << "\n";
  return RunOutcome{code, run.path()};
}

RunOutcome cmd_ladder(const CliOptions& opt, std::ostream& log) {
  const Loaded ld = load(opt);
  const GridScenario& grid = ld.grid;
  const SolveConfig cfg = solve_config(opt);
  RunDir run(opt.out, "ladder", ld.hash);
  const LadderResult lr = ladder_run(grid, opt.budgets, opt.epsilon, cfg);

  std::ostringstream os;
  CsvWriter w(os);
  w.header({"budget", "cost_mean", "cost_stderr", "status", "saturation_fraction", "grad_norm"});
  for (std::size_t k = 0; k < lr.budgets.size(); ++k) {
    const SolveResult& s = lr.solves[k];
    w.field(lr.budgets[k]).field(lr.costs[k].mean).field(lr.costs[k].se).field(s.status).field(s.tau.saturation_fraction);
    w.field(s.grad_norm_history.empty() ? std::nan("") : s.grad_norm_history.back()).end_row();
  }
  w.field(std::string("riccati_full_information")).field(lr.riccati_value).field(0.0).field(std::string("lower_bound"));
  w.field(std::string()).field(std::string()).end_row();
  run.write_text("ladder.csv", os.str());

  json solves = json::array();
  for (std::size_t k = 0; k < lr.solves.size(); ++k) {
    json s = solve_result_to_json(lr.solves[k]);
    s["budget"] = lr.budgets[k];
    solves.push_back(s);
  }
  json costs = json::array();
  for (const auto& c : lr.costs) costs.push_back(cost_json(c));
  run.write_json("ladder.json", json{{"budgets", lr.budgets},
                                     {"costs", costs},
                                     {"epsilon", lr.epsilon},
                                     {"chosen_n", lr.chosen_n},
                                     {"selection", "epsilon-optimal relative to the explored class"},
                                     {"riccati_value", finite_or_null(lr.riccati_value)},
                                     {"solves", solves}});
  run.finish(json{{"master_seed", opt.seed}, {"config", config_to_json(cfg)}, {"options", opt_to_json(opt)}});
  log << "chosen_n: " << lr.chosen_n << "\n";
  return RunOutcome{0, run.path()};
}

RunOutcome cmd_oracle(const CliOptions& opt, std::ostream& log) {
  const Loaded ld = load(opt);
  const GridScenario& grid = ld.grid;
  const std::string& which = opt.which;
  const bool all = which == "all";
  if (!all && which != "riccati" && which != "pontryagin" && which != "brute" && which != "degenerate")
    throw Error(ErrorKind::InvalidArgument, "unknown oracle '" + which + "'");
  bool h_zero = true;
  for (const auto& h : grid.H) h_zero = h_zero && h.isZero(0.0);

  // Input errors surface before the run directory is created.
  std::vector<double> lattice;
  const int blocks = opt.blocks.value_or(2);
  if (which == "brute" || (all && h_zero)) {
    lattice = lattice_around(0.0, opt.lattice_range, opt.lattice_points);
    long long combos = 1;
    for (int k = 0; k < blocks * grid.d(); ++k) {
      combos *= static_cast<long long>(lattice.size());
      if (combos > kMaxCombinations)
        throw Error(ErrorKind::CombinatorialBudgetExceeded,
                    "lattice^(blocks*d) exceeds " + std::to_string(kMaxCombinations) + " combinations");
    }
  }

  RunDir run(opt.out, "oracle", ld.hash);
  if (all || which == "riccati") {
    const RiccatiSolution rs = riccati_full_info(grid);
    std::ostringstream os;
    CsvWriter w(os);
    std::vector<std::string> head{"t"};
    for (int a = 0; a < grid.n(); ++a)
      for (int b = 0; b < grid.n(); ++b) head.push_back("S" + std::to_string(a) + std::to_string(b));
    w.header(head);
    for (std::size_t i = 0; i < rs.Sigma.size(); ++i) {
      w.field(grid.t[i]);
      for (int a = 0; a < grid.n(); ++a)
        for (int b = 0; b < grid.n(); ++b) w.field(rs.Sigma[i](a, b));
      w.end_row();
    }
    run.write_text("riccati.csv", os.str());
    run.write_json("oracle_riccati.json", oracle_report(ld.hash, "riccati", rs.value, json{{"steps", grid.steps()}}));
    log << "riccati: " << rs.value << "\n";
  }
  if (which == "pontryagin" || (all && h_zero)) {
    const PontryaginResult pr = deterministic_pontryagin(grid);
    json u = json::array();
    for (int i = 0; i < pr.u.rows(); ++i) {
      json row = json::array();
      for (int k = 0; k < pr.u.cols(); ++k) row.push_back(pr.u(i, k));
      u.push_back(row);
    }
    run.write_json("oracle_pontryagin.json",
                   oracle_report(ld.hash, "pontryagin", pr.value,
                                 json{{"iterations", pr.iterations}, {"grad_norm", pr.grad_norm}, {"control", u}}));
    log << "pontryagin: " << pr.value << "\n";
  }
  if (which == "brute" || (all && h_zero)) {
    const int paths = opt.paths.value_or(20000);
    const GridSearchResult gs = brute_force_small(grid, blocks, lattice, paths, derive_seed(opt.seed, "brute", 0));
    json best = json::array();
    for (int b = 0; b < gs.best_control.rows(); ++b) {
      json row = json::array();
      for (int k = 0; k < gs.best_control.cols(); ++k) row.push_back(gs.best_control(b, k));
      best.push_back(row);
    }
    run.write_json("oracle_brute.json",
                   oracle_report(ld.hash, "brute", gs.best_value.mean,
                                 json{{"stderr", gs.best_value.se},
                                      {"paths", paths},
                                      {"best_control", best},
                                      {"grid_spec", {{"blocks", gs.blocks}, {"lattice", gs.lattice},
                                                     {"combinations", gs.combinations}}}}));
    log << "brute: " << gs.best_value.mean << " +- " << gs.best_value.se << "\n";
  }
  if (all || which == "degenerate") {
    const auto deg = analytic_degenerate(grid);
    run.write_json("oracle_degenerate.json",
                   deg ? oracle_report(ld.hash, "degenerate", deg->value, json{{"pattern", deg->pattern}})
                       : oracle_report(ld.hash, "degenerate", std::nan(""), json{{"status", "NotApplicable"}}));
    log << "degenerate: " << (deg ? std::to_string(deg->value) : std::string("NotApplicable")) << "\n";
  }
  run.finish(json{{"master_seed", opt.seed}, {"config", opt_to_json(opt)}});
  return RunOutcome{0, run.path()};
}

RunOutcome run_command(const CliOptions& opt, std::ostream& log) {
  try {
    if (opt.command == "diagnose") return cmd_diagnose(opt, log);
    if (opt.command == "solve") return cmd_solve(opt, log);
    if (opt.command == "ladder") return cmd_ladder(opt, log);
    if (opt.command == "oracle") return cmd_oracle(opt, log);
    throw Error(ErrorKind::InvalidArgument, "unknown command '" + opt.command + "'");
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return RunOutcome{is_input_error(e.kind()) ? 2 : 1, {}};
  } catch (const nlohmann::json::exception& e) {
    log << "error: ParseError: " << e.what() << "\n";
    return RunOutcome{2, {}};
  }
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Partially observed stochastic LQ control: diagnostics, solver, ladder and oracles"};
  app.set_version_flag("--version", POLQ_VERSION);
  app.require_subcommand(1, 1);
  CliOptions opt;
  std::string scenario;
  std::string budgets;
  for (const char* name : {"diagnose", "solve", "ladder", "oracle"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("scenario", scenario, "scenario JSON file")->required();
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--paths", opt.paths, "outer / Monte-Carlo path count");
    sub->add_option("--inner", opt.inner, "inner particles per outer path");
    sub->add_option("--kc", opt.kc, "energy budget K_c");
    sub->add_option("--budgets", budgets, "comma-separated budget ladder");
    sub->add_option("--epsilon", opt.epsilon, "ladder tolerance");
    sub->add_option("--steps", opt.steps, "time steps K");
    sub->add_option("--out", opt.out, "output root directory");
    sub->add_option("--theta", opt.theta, "Picard damping");
    sub->add_option("--tol", opt.tol, "certificate tolerance");
    sub->add_option("--max-iter", opt.max_iter, "Picard iteration cap");
    sub->add_option("--which", opt.which, "riccati|pontryagin|brute|degenerate|all");
    sub->add_option("--blocks", opt.blocks, "time blocks (certificate directions or lattice)");
    sub->add_option("--lattice-points", opt.lattice_points, "lattice points per block value");
    sub->add_option("--lattice-range", opt.lattice_range, "lattice half-width around 0");
    sub->add_option("--threads", opt.threads, "OpenMP threads");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  opt.command = app.get_subcommands().front()->get_name();
  opt.scenario = scenario;
  if (!budgets.empty()) {
    opt.budgets.clear();
    std::stringstream ss(budgets);
    std::string tok;
    try {
      while (std::getline(ss, tok, ',')) opt.budgets.push_back(std::stod(tok));
    } catch (const std::exception&) {
      std::cerr << "error: ParseError: bad --budgets list '" << budgets << "'\n";
      return 2;
    }
  }
  if (opt.threads) omp_set_num_threads(*opt.threads);
  const RunOutcome r = run_command(opt, std::cerr);
  if (!r.run_dir.empty()) std::cout << r.run_dir.string() << "\n";
  return r.exit_code;
}

}  // namespace polq
