#include "polq/solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "polq/oracle.hpp"
#include "polq/rng.hpp"
#include "polq/stats.hpp"

namespace polq {

using nlohmann::json;

void SolveConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
  if (M < 2 || L < 2) bad("nested ensemble needs M >= 2 and L >= 2");
  if (p_paths < 2 || eval_paths < 2) bad("ensemble sizes must be at least 2");
  if (!(theta > 0.0 && theta <= 1.0)) bad("damping theta must lie in (0, 1]");
  if (!(tol > 0.0)) bad("tolerance must be positive");
  if (max_iter < 1) bad("max_iter must be at least 1");
  if (blocks < 1) bad("blocks must be at least 1");
  if (!(ridge >= 0.0)) bad("ridge must be nonnegative");
  if (!(Kc > 0.0)) bad("budget K_c must be positive");
  if (basis.lag < 0) bad("lag must be nonnegative");
}

json config_to_json(const SolveConfig& c) {
  return json{{"M", c.M},
              {"L", c.L},
              {"p_paths", c.p_paths},
              {"eval_paths", c.eval_paths},
              {"basis", {{"lag", c.basis.lag}, {"level", c.basis.level}, {"quadratic", c.basis.quadratic}}},
              {"K_c", std::isfinite(c.Kc) ? json(c.Kc) : json(nullptr)},
              {"theta", c.theta},
              {"max_iter", c.max_iter},
              {"tol", c.tol},
              {"ridge", c.ridge},
              {"blocks", c.blocks},
              {"seed", c.seed}};
}

namespace {

// Step i carries an unmodified control on this path.
bool active(const PathBundle& b, int i) { return !b.saturated || i < b.tau_index - 1; }

}  // namespace

CandidateTargets candidate_control(const GridScenario& grid, const NestedEnsemble& nested, const AdjointPaths& adj) {
  const int K = grid.steps(), d = grid.d(), M = nested.M, L = nested.L;
  if (adj.particles() != nested.size()) throw Error(ErrorKind::DimensionMismatch, "adjoints do not match the ensemble");
  CandidateTargets out;
  out.u.assign(static_cast<std::size_t>(K), Matrix::Zero(M, d));
  out.zhat.assign(static_cast<std::size_t>(K), Vector::Zero(M));
  out.weight.assign(static_cast<std::size_t>(K), Vector::Zero(M));
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    Eigen::SelfAdjointEigenSolver<Matrix> es(grid.R[k], Eigen::EigenvaluesOnly);
    const double condR = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    const Eigen::LDLT<Matrix> Rinv(grid.R[k]);
    const Matrix Bt = grid.B[k].transpose(), Ct = grid.C[k].transpose();
    for (int j = 0; j < M; ++j) {
      double zsum = 0.0;
      Vector g = Vector::Zero(d);
      for (int l = 0; l < L; ++l) {
        const int r = j * L + l;
        zsum += nested.at(j, l).Z(i);
        g += Bt * adj.P_ahead[k].row(r).transpose() + Ct * adj.Q1[k].row(r).transpose();
      }
      const double zhat = zsum / L;
      g /= L;
      out.zhat[k](j) = zhat;
      if (!active(nested.at(j, 0), i)) continue;
      if (!(zhat > 1e-10) || !(condR <= 1e10)) {
        std::ostringstream os;
        os << "scaled control weight is singular at step " << i << " (zhat " << zhat << ", cond(R) " << condR << ")";
        throw Error(ErrorKind::SingularScaledR, os.str());
      }
      out.u[k].row(j) = (-0.5 / zhat * Rinv.solve(g)).transpose();
      out.weight[k](j) = zhat;
    }
  }
  return out;
}

std::string Direction::id() const {
  std::ostringstream os;
  os << "b" << block << "_f" << feature << "_u" << component;
  return os.str();
}

std::vector<Direction> basis_directions(int steps, int features, int d, int blocks) {
  std::vector<Direction> out;
  const int nb = std::min(blocks, steps);
  for (int b = 0; b < nb; ++b) {
    const int first = (b * steps) / nb, last = ((b + 1) * steps) / nb;
    for (int f = 0; f < features; ++f)
      for (int c = 0; c < d; ++c) out.push_back(Direction{b, f, c, first, last});
  }
  return out;
}

json variation_to_json(const VariationReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json fd = json::array(), fdse = json::array();
  for (double v : r.fd_by_epsilon) fd.push_back(num(v));
  for (double v : r.fd_se_by_epsilon) fdse.push_back(num(v));
  return json{{"direction", r.direction},
              {"norm", r.norm},
              {"adjoint_derivative", num(r.adjoint_derivative)},
              {"adjoint_stderr", num(r.adjoint_se)},
              {"fd_derivative", num(r.fd_derivative)},
              {"fd_stderr", num(r.fd_se)},
              {"epsilon_fd", r.epsilon_fd},
              {"fd_by_epsilon", fd},
              {"fd_stderr_by_epsilon", fdse},
              {"richardson", num(r.richardson)},
              {"noise_dominated", r.noise_dominated},
              {"masked_fraction", r.masked_fraction}};
}

namespace {

struct MaskedDirection {
  std::vector<Matrix> v;  // per outer path: (last-first) x 1 values of v_i (unnormalized)
  double norm = 0.0;
  double masked_fraction = 0.0;
};

MaskedDirection mask_direction(const GridScenario& grid, const PolicyRep& policy, const Direction& dir,
                               const NestedEnsemble& nested) {
  const int span = dir.last - dir.first;
  MaskedDirection md;
  md.v.resize(static_cast<std::size_t>(nested.M));
  int masked = 0;
  double ss = 0.0;
  Vector f(policy.feature_count());
  for (int j = 0; j < nested.M; ++j) {
    const PathBundle& b = nested.at(j, 0);
    Matrix vals = Matrix::Zero(span, 1);
    bool cut = false;
    for (int i = dir.first; i < dir.last; ++i) {
      features(policy.basis, b.Y, i, f.data());
      const double fv = f(dir.feature);
      if (!active(b, i)) {
        if (fv != 0.0) cut = true;
        continue;
      }
      vals(i - dir.first, 0) = fv;
      ss += fv * fv * grid.dt[static_cast<std::size_t>(i)];
    }
    if (cut) ++masked;
    md.v[static_cast<std::size_t>(j)] = std::move(vals);
  }
  md.norm = std::sqrt(ss / nested.M);
  md.masked_fraction = static_cast<double>(masked) / nested.M;
  return md;
}

}  // namespace

double direction_norm(const GridScenario& grid, const PolicyRep& policy, const Direction& v, const NestedEnsemble& nested) {
  return mask_direction(grid, policy, v, nested).norm;
}

VariationReport variational_derivative(const GridScenario& grid, const PolicyRep& policy, const Direction& dir,
                                       const NestedEnsemble& nested, const AdjointPaths& adj) {
  if (adj.particles() != nested.size()) throw Error(ErrorKind::DimensionMismatch, "adjoints do not match the ensemble");
  if (dir.feature < 0 || dir.feature >= policy.feature_count() || dir.component < 0 || dir.component >= grid.d() ||
      dir.first < 0 || dir.last > grid.steps() || dir.first >= dir.last)
    throw Error(ErrorKind::InvalidArgument, "direction outside the policy class");
  const MaskedDirection md = mask_direction(grid, policy, dir, nested);
  VariationReport rep;
  rep.direction = dir.id();
  rep.norm = md.norm;
  rep.masked_fraction = md.masked_fraction;
  if (md.masked_fraction > 0.01)
    throw Error(ErrorKind::BudgetViolatingDirection,
                "direction " + dir.id() + " is cut by budget saturation on " + std::to_string(100.0 * md.masked_fraction) +
                    "% of outer paths");
  if (md.norm == 0.0) return rep;
  const int c = dir.component;
  std::vector<double> contrib(static_cast<std::size_t>(nested.size()));
  for (int j = 0; j < nested.M; ++j) {
    const Matrix& vals = md.v[static_cast<std::size_t>(j)];
    for (int l = 0; l < nested.L; ++l) {
      const int r = j * nested.L + l;
      const PathBundle& b = nested.at(j, l);
      double acc = 0.0;
      for (int i = dir.first; i < dir.last; ++i) {
        const double vi = vals(i - dir.first, 0);
        if (vi == 0.0) continue;
        const auto k = static_cast<std::size_t>(i);
        const double grad = 2.0 * b.Z(i) * grid.R[k].row(c).dot(b.u.row(i)) +
                            grid.B[k].col(c).dot(adj.P_ahead[k].row(r)) + grid.C[k].col(c).dot(adj.Q1[k].row(r));
        acc += grad * vi * grid.dt[k];
      }
      contrib[static_cast<std::size_t>(r)] = acc / md.norm;
    }
  }
  const MeanStderr ms = clustered_mean_stderr(contrib, static_cast<std::size_t>(nested.L));
  rep.adjoint_derivative = ms.mean;
  rep.adjoint_se = ms.se;
  return rep;
}

PolicyRep perturb(const PolicyRep& policy, const Direction& v, double amount) {
  PolicyRep out = policy;
  for (int i = v.first; i < v.last; ++i) out.coeffs[static_cast<std::size_t>(i)](v.feature, v.component) += amount;
  return out;
}

VariationReport gateaux_fd(const GridScenario& grid, const PolicyRep& policy, const Direction& v, double norm,
                           const std::vector<double>& eps_list, int M, int L, std::uint64_t master, bool strict,
                           Exec exec) {
  if (eps_list.empty()) throw Error(ErrorKind::InvalidArgument, "empty epsilon list");
  for (std::size_t e = 0; e < eps_list.size(); ++e)
    if (!(eps_list[e] > 0.0) || (e > 0 && !(eps_list[e] < eps_list[e - 1])))
      throw Error(ErrorKind::InvalidArgument, "epsilons must be positive and decreasing");
  VariationReport rep;
  rep.direction = v.id();
  rep.norm = norm;
  if (!(norm > 0.0)) {
    rep.fd_derivative = 0.0;
    rep.fd_se = 0.0;
    rep.epsilon_fd = eps_list.back();
    rep.fd_by_epsilon.assign(eps_list.size(), 0.0);
    rep.fd_se_by_epsilon.assign(eps_list.size(), 0.0);
    return rep;
  }
  bool all_noisy = true;
  for (double eps : eps_list) {
    const std::vector<double> up = nested_path_costs(grid, perturb(policy, v, eps / norm), M, L, master, exec);
    const std::vector<double> dn = nested_path_costs(grid, perturb(policy, v, -eps / norm), M, L, master, exec);
    std::vector<double> diff(up.size());
    for (std::size_t r = 0; r < up.size(); ++r) diff[r] = (up[r] - dn[r]) / (2.0 * eps);
    const MeanStderr ms = clustered_mean_stderr(diff, static_cast<std::size_t>(L));
    rep.fd_by_epsilon.push_back(ms.mean);
    rep.fd_se_by_epsilon.push_back(ms.se);
    if (!(ms.se > std::abs(ms.mean))) all_noisy = false;
  }
  rep.fd_derivative = rep.fd_by_epsilon.back();
  rep.fd_se = rep.fd_se_by_epsilon.back();
  rep.epsilon_fd = eps_list.back();
  if (eps_list.size() >= 2) {
    const std::size_t a = eps_list.size() - 2, b = eps_list.size() - 1;
    const double r2 = (eps_list[a] / eps_list[b]) * (eps_list[a] / eps_list[b]);
    rep.richardson = (r2 * rep.fd_by_epsilon[b] - rep.fd_by_epsilon[a]) / (r2 - 1.0);
  }
  rep.noise_dominated = all_noisy;
  if (strict && all_noisy)
    throw Error(ErrorKind::NoiseDominated, "finite-difference stderr exceeds the estimate for every epsilon on " + v.id());
  return rep;
}

TauStats tau_stats(const GridScenario& grid, const std::vector<int>& tau_index, const std::vector<char>& saturated) {
  TauStats ts;
  ts.histogram.assign(10, 0);
  if (tau_index.empty()) return ts;
  const double T = grid.T();
  int sat = 0;
  double sum = 0.0;
  ts.min_tau = T;
  for (std::size_t k = 0; k < tau_index.size(); ++k) {
    const double tau = saturated[k] ? grid.t[static_cast<std::size_t>(tau_index[k])] : T;
    if (saturated[k]) ++sat;
    sum += tau;
    ts.min_tau = std::min(ts.min_tau, tau);
    const int bin = std::min(9, static_cast<int>(10.0 * tau / T));
    ++ts.histogram[static_cast<std::size_t>(bin)];
  }
  ts.saturation_fraction = static_cast<double>(sat) / static_cast<double>(tau_index.size());
  ts.mean_tau = sum / static_cast<double>(tau_index.size());
  return ts;
}

json solve_result_to_json(const SolveResult& r) {
  json costs = json::array();
  for (const auto& c : r.cost_history) costs.push_back({{"mean", c.mean}, {"stderr", c.se}});
  json cert = json::array();
  for (const auto& v : r.certificate) cert.push_back(variation_to_json(v));
  return json{{"status", r.status},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"cost_history", costs},
              {"grad_norm_history", r.grad_norm_history},
              {"theta_history", r.theta_history},
              {"final_cost", {{"mean", r.final_cost.mean}, {"stderr", r.final_cost.se}, {"n_paths", r.final_cost.n_paths},
                              {"measure", to_string(r.final_cost.measure)}}},
              {"control_norm", r.control_norm},
              {"tau", {{"saturation_fraction", r.tau.saturation_fraction}, {"mean_tau", r.tau.mean_tau},
                       {"min_tau", r.tau.min_tau}, {"histogram", r.tau.histogram}}},
              {"residual_P", r.residual_P},
              {"residual_p", r.residual_p},
              {"rank_deficient_fits", r.rank_deficient_fits},
              {"skipped_directions", r.skipped_directions},
              {"certificate", cert},
              {"policy", policy_to_json(r.policy)}};
}

Linearization linearize(const GridScenario& grid, const PolicyRep& policy, const SolveConfig& c) {
  Linearization lin;
  lin.nested = build_nested(grid, policy, c.M, c.L, derive_seed(c.seed, "nested", 0), c.exec);
  const Ensemble ensP = simulate_ensemble(grid, policy, Measure::P, derive_seed(c.seed, "pside", 0), c.p_paths, "paths", c.exec);
  lin.pside = solve_p_bsde(grid, ensP, policy.basis, c.ridge, c.residual_bound);
  lin.adj = solve_P_bsde(grid, lin.nested, lin.pside, c.ridge, c.residual_bound);
  return lin;
}

namespace {

CostEstimate nested_cost(const GridScenario& grid, const NestedEnsemble& nested) {
  std::vector<double> c(static_cast<std::size_t>(nested.size()));
  for (int r = 0; r < nested.size(); ++r) c[static_cast<std::size_t>(r)] = path_cost(grid, nested.particles[static_cast<std::size_t>(r)], true);
  const MeanStderr ms = clustered_mean_stderr(c, static_cast<std::size_t>(nested.L));
  return CostEstimate{ms.mean, ms.se, c.size(), Measure::Q};
}

void finalize(const GridScenario& grid, const SolveConfig& c, SolveResult& res) {
  const EnsembleSummary ev = summarize_ensemble(grid, res.policy, Measure::P, derive_seed(c.seed, "eval", 0),
                                                c.eval_paths, "paths", c.exec);
  std::vector<double> cost(static_cast<std::size_t>(ev.cost.size()));
  double energy = 0.0;
  for (Eigen::Index k = 0; k < ev.cost.size(); ++k) {
    cost[static_cast<std::size_t>(k)] = ev.cost(k);
    energy += ev.energy(k);
  }
  const MeanStderr ms = mean_stderr(cost);
  res.final_cost = CostEstimate{ms.mean, ms.se, cost.size(), Measure::P};
  res.control_norm = std::sqrt(energy / static_cast<double>(ev.cost.size()));
  res.tau = tau_stats(grid, ev.tau_index, ev.saturated);
}

}  // namespace

SolveResult picard_solve(const GridScenario& grid, const SolveConfig& c, const PolicyRep* initial) {
  c.validate();
  const int K = grid.steps(), d = grid.d();
  SolveResult res;
  res.policy = initial ? *initial : PolicyRep::zero(K, d, c.basis, c.Kc);
  if (res.policy.steps() != K || res.policy.d != d) throw Error(ErrorKind::DimensionMismatch, "initial policy shape");
  res.policy.Kc = c.Kc;
  const std::vector<Direction> dirs = basis_directions(K, res.policy.feature_count(), d, c.blocks);
  int increases = 0;
  double theta = c.theta;
  std::vector<Matrix> prev_step;
  for (int it = 0;; ++it) {
    const Linearization lin = linearize(grid, res.policy, c);
    res.cost_history.push_back(nested_cost(grid, lin.nested));
    res.residual_P = lin.adj.residual_P;
    res.residual_p = lin.pside.residual_rms;
    res.certificate.clear();
    res.skipped_directions = 0;
    double grad = 0.0;
    for (const auto& v : dirs) {
      try {
        VariationReport r = variational_derivative(grid, res.policy, v, lin.nested, lin.adj);
        grad = std::max(grad, std::abs(r.adjoint_derivative));
        res.certificate.push_back(std::move(r));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::BudgetViolatingDirection) throw;
        ++res.skipped_directions;
      }
    }
    res.grad_norm_history.push_back(grad);
    res.iterations = it + 1;

    if (it > 0) {
      const CostEstimate& a = res.cost_history[res.cost_history.size() - 2];
      const CostEstimate& b = res.cost_history.back();
      increases = (b.mean - a.mean > 3.0 * std::sqrt(a.se * a.se + b.se * b.se)) ? increases + 1 : 0;
      if (increases >= 5) {
        res.status = "diverged";
        finalize(grid, c, res);
        throw SolveDiverged("cost increased on 5 consecutive iterations", res);
      }
    }
    if (grad <= c.tol) {
      res.converged = true;
      break;
    }
    if (it + 1 >= c.max_iter) break;

    const CandidateTargets tg = candidate_control(grid, lin.nested, lin.adj);
    const PolicyFit fit = fit_policy(lin.nested, tg.u, c.basis, c.ridge, c.Kc, &tg.weight);
    res.rank_deficient_fits += fit.rank_deficient_steps;
    std::vector<Matrix> step(static_cast<std::size_t>(K));
    double turn = 0.0;
    for (int i = 0; i < K; ++i) {
      const auto k = static_cast<std::size_t>(i);
      step[k] = fit.policy.coeffs[k] - res.policy.coeffs[k];
      if (!prev_step.empty()) turn += (step[k].array() * prev_step[k].array()).sum();
    }
    if (turn < 0.0) theta = std::max(0.5 * theta, kMinTheta);
    res.theta_history.push_back(theta);
    for (int i = 0; i < K; ++i) res.policy.coeffs[static_cast<std::size_t>(i)] += theta * step[static_cast<std::size_t>(i)];
    prev_step = std::move(step);
  }
  res.status = res.converged ? "converged" : "max_iter";
  finalize(grid, c, res);
  return res;
}

double choose_budget(const std::vector<double>& budgets, const std::vector<double>& costs, double epsilon) {
  if (budgets.empty() || budgets.size() != costs.size()) throw Error(ErrorKind::InvalidArgument, "budget table shape");
  const double best = *std::min_element(costs.begin(), costs.end());
  for (std::size_t k = 0; k < budgets.size(); ++k)
    if (costs[k] <= best + 0.5 * epsilon) return budgets[k];
  return budgets.back();
}

LadderResult ladder_run(const GridScenario& grid, const std::vector<double>& budgets, double epsilon,
                        const SolveConfig& config) {
  if (budgets.empty()) throw Error(ErrorKind::InvalidArgument, "empty budget list");
  for (std::size_t k = 0; k < budgets.size(); ++k)
    if (!(budgets[k] > 0.0) || (k > 0 && !(budgets[k] > budgets[k - 1])))
      throw Error(ErrorKind::InvalidArgument, "budgets must be positive and strictly increasing");
  if (!(epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
  LadderResult lr;
  lr.budgets = budgets;
  lr.epsilon = epsilon;
  std::vector<double> means;
  for (double n : budgets) {
    SolveConfig c = config;
    c.Kc = n;
    lr.solves.push_back(picard_solve(grid, c));
    lr.costs.push_back(lr.solves.back().final_cost);
    means.push_back(lr.costs.back().mean);
  }
  lr.chosen_n = choose_budget(budgets, means, epsilon);
  lr.riccati_value = riccati_full_info(grid).value;
  return lr;
}

}  // namespace polq
