#include "polq/measure.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "polq/error.hpp"
#include "polq/rng.hpp"
#include "polq/stats.hpp"

namespace polq {

using nlohmann::json;

json diagnostic_to_json(const Diagnostic& d) {
  json j{{"name", d.name},           {"checkpoints", d.checkpoints}, {"estimates", d.estimates},
         {"stderrs", d.stderrs},     {"pass", d.pass},               {"rule", d.rule}};
  if (!d.reference.empty()) j["reference"] = d.reference;
  if (!d.details.empty()) j["details"] = d.details;
  return j;
}

std::vector<int> default_checkpoints(int K) {
  std::vector<int> c;
  for (int q = 1; q <= 4; ++q) c.push_back(std::max(1, (K * q) / 4));
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

Diagnostic martingale_diagnostic(const GridScenario& grid, const EnsembleSummary& ens, DensityProcess process,
                                 const std::vector<int>& checkpoints) {
  const bool wantP = process == DensityProcess::NUnderP;
  if ((ens.measure == Measure::P) != wantP)
    throw Error(ErrorKind::MeasureMismatch, std::string(wantP ? "N" : "Z") + " martingale test needs an ensemble under " +
                                                (wantP ? "P" : "Q"));
  const Matrix& dens = wantP ? ens.N : ens.Z;
  if (dens.rows() == 0) throw Error(ErrorKind::EmptyEnsemble, "martingale test on an empty ensemble");
  Diagnostic d;
  d.name = wantP ? "martingale_N_under_P" : "martingale_Z_under_Q";
  d.rule = "|mean - 1| <= 3*stderr at every checkpoint";
  d.pass = true;
  std::vector<double> col(static_cast<std::size_t>(dens.rows()));
  for (int node : checkpoints) {
    if (node < 0 || node >= dens.cols()) throw Error(ErrorKind::InvalidArgument, "checkpoint off the grid");
    for (Eigen::Index r = 0; r < dens.rows(); ++r) col[static_cast<std::size_t>(r)] = dens(r, node);
    const MeanStderr ms = mean_stderr(col);
    d.checkpoints.push_back(grid.t[static_cast<std::size_t>(node)]);
    d.estimates.push_back(ms.mean);
    d.stderrs.push_back(ms.se);
    if (!(std::abs(ms.mean - 1.0) <= 3.0 * ms.se)) d.pass = false;
  }
  d.details["paths"] = dens.rows();
  return d;
}

MomentProbe moment_probe(const GridScenario& grid, const PolicyRep& policy, double k, const std::vector<int>& sizes,
                         std::uint64_t master, Exec exec) {
  if (!(k > 0.0 && k < 1.0)) throw Error(ErrorKind::InvalidArgument, "moment exponent offset k must lie in (0,1)");
  if (sizes.size() < 2) throw Error(ErrorKind::InvalidArgument, "moment probe needs at least two sample sizes");
  MomentProbe mp;
  mp.k = k;
  mp.sample_sizes = sizes;
  const int K = grid.steps();
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const EnsembleSummary ens = summarize_ensemble(grid, policy, Measure::Q, derive_seed(master, "moment", s),
                                                   sizes[s], "paths", exec);
    std::vector<double> v(static_cast<std::size_t>(ens.Z.rows()));
    for (Eigen::Index r = 0; r < ens.Z.rows(); ++r) v[static_cast<std::size_t>(r)] = std::pow(ens.Z(r, K), 1.0 + k);
    const MeanStderr ms = mean_stderr(v);
    mp.estimates.push_back(ms.mean);
    mp.stderrs.push_back(ms.se);
  }
  for (std::size_t s = 1; s < sizes.size(); ++s) {
    const double rel = std::abs(mp.estimates[s] - mp.estimates[s - 1]) / std::abs(mp.estimates[s - 1]);
    mp.max_relative_change = std::max(mp.max_relative_change, rel);
  }
  const std::size_t top = sizes.size() - 1;
  mp.stable = std::abs(mp.estimates[top] - mp.estimates[top - 1]) < 0.2 * std::abs(mp.estimates[top - 1]);
  return mp;
}

StateBound state_bound(const GridScenario& grid, const ZetaPath& ez, const PathBundle& path, double Kc) {
  const int K = grid.steps(), n = grid.n();
  StateBound sb;
  Vector M = Vector::Zero(n);
  for (int i = 0; i <= K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    sb.sup_x = std::max(sb.sup_x, path.X.row(i).norm());
    sb.zeta_inv_norm = std::max(sb.zeta_inv_norm, ez.zeta_inv[k].operatorNorm());
    sb.sup_m = std::max(sb.sup_m, M.norm());
    if (i < K) {
      sb.zeta_b_norm = std::max(sb.zeta_b_norm, (ez.zeta[k + 1] * grid.B[k]).operatorNorm());
      M += ez.zeta[k + 1] * grid.C[k] * path.u.row(i).transpose() * path.dW(i);
    }
  }
  // Without a finite budget the path's own energy plays the role of K_c^2.
  const double energy_root = std::isfinite(Kc) ? Kc : std::sqrt(path.energy(K));
  const double b_term = sb.zeta_b_norm > 0.0 ? sb.zeta_b_norm * energy_root * std::sqrt(grid.T()) : 0.0;
  sb.bound = sb.zeta_inv_norm * (grid.x().norm() + b_term + sb.sup_m);
  return sb;
}

Diagnostic state_bound_check(const GridScenario& grid, const std::vector<PolicyRep>& policies,
                             const std::vector<NoiseBundle>& noises) {
  if (policies.empty() || noises.empty()) throw Error(ErrorKind::EmptyEnsemble, "state bound check needs policies and noise");
  const double Kc = policies.front().Kc;
  for (const auto& p : policies)
    if (!(p.Kc == Kc)) throw Error(ErrorKind::BudgetMismatch, "policies in a state bound check must share K_c");
  const ZetaPath ez = euler_zeta(grid);
  Diagnostic d;
  d.name = "state_bound";
  d.rule = "sup_t |X| <= |zeta^-1| (|x| + |zeta B| K_c sqrt(T) + sup_t |M|) on every path";
  d.pass = true;
  int violations = 0;
  double worst_ratio = 0.0;
  for (const auto& p : policies) {
    double sup_x = 0.0, bound = std::numeric_limits<double>::infinity();
    for (const auto& nb : noises) {
      const PathBundle b = simulate_under_P(grid, p, nb);
      const StateBound sb = state_bound(grid, ez, b, Kc);
      // One ulp-scale slack: at u = 0 with zeta = I the bound is attained exactly.
      if (sb.sup_x > sb.bound * (1.0 + 1e-12)) {
        d.pass = false;
        ++violations;
      }
      worst_ratio = std::max(worst_ratio, sb.bound > 0.0 ? sb.sup_x / sb.bound : 0.0);
      if (sb.sup_x > sup_x || (sb.sup_x == sup_x && sb.bound < bound)) {
        sup_x = sb.sup_x;
        bound = sb.bound;
      }
    }
    d.estimates.push_back(sup_x);
    d.reference.push_back(bound);
    d.stderrs.push_back(0.0);
  }
  d.checkpoints.push_back(grid.T());
  d.details["policies"] = policies.size();
  d.details["noise_realizations"] = noises.size();
  d.details["violations"] = violations;
  d.details["max_ratio"] = worst_ratio;
  return d;
}

GaussianPosterior kalman_posterior(const GridScenario& grid, const Matrix& Y, const Matrix& u, int node) {
  const int n = grid.n(), d = grid.d();
  if (node < 0 || node > grid.steps()) throw Error(ErrorKind::InvalidArgument, "node off the grid");
  Vector m = grid.x();
  Matrix S = Matrix::Zero(n, n);
  const Matrix I = Matrix::Identity(n, n);
  for (int i = 0; i < node; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    // Observation increment Y_{i+1} - Y_i = H X_i dt + N(0, dt I).
    const Matrix Hd = grid.H[k] * dt;
    const Matrix Sy = Hd * S * Hd.transpose() + dt * Matrix::Identity(d, d);
    const Matrix gain = S * Hd.transpose() * Sy.ldlt().solve(Matrix::Identity(d, d));
    const Vector innov = (Y.row(i + 1) - Y.row(i)).transpose() - Hd * m;
    m += gain * innov;
    S = (I - gain * Hd) * S;
    S = 0.5 * (S + S.transpose());
    const Matrix F = I + grid.A[k] * dt;
    const Vector ui = u.row(i).transpose();
    const Vector cu = grid.C[k] * ui;
    m = F * m + grid.B[k] * ui * dt;
    S = F * S * F.transpose() + cu * cu.transpose() * dt;
  }
  return GaussianPosterior{m, S};
}

Diagnostic ks_consistency(const GridScenario& grid, const NestedEnsemble& nested, const StateFunction& phi, int node,
                          int p_particles, std::uint64_t master) {
  if (nested.particles.empty()) throw Error(ErrorKind::EmptyEnsemble, "empty nested ensemble");
  if (nested.particles.front().measure != Measure::Q)
    throw Error(ErrorKind::MeasureMismatch, "consistency check needs a nested ensemble under Q");
  if (p_particles < 2) throw Error(ErrorKind::InvalidArgument, "need at least two posterior particles");
  const int n = grid.n();
  Diagnostic d;
  d.name = "ks_consistency";
  d.rule = "median_j |E_Q[phi Z|Y]/E_Q[Z|Y] - E_P[phi|Y]| <= 5 * pooled stderr";
  d.checkpoints.push_back(grid.t[static_cast<std::size_t>(node)]);
  std::vector<double> dev(static_cast<std::size_t>(nested.M));
  double pooled_var = 0.0, min_ess = std::numeric_limits<double>::infinity();
  for (int j = 0; j < nested.M; ++j) {
    double sw = 0.0, sw2 = 0.0, swphi = 0.0;
    std::vector<double> w(static_cast<std::size_t>(nested.L)), f(static_cast<std::size_t>(nested.L));
    for (int l = 0; l < nested.L; ++l) {
      const PathBundle& b = nested.at(j, l);
      w[static_cast<std::size_t>(l)] = b.Z(node);
      f[static_cast<std::size_t>(l)] = phi(b.X.row(node).transpose());
      sw += w[static_cast<std::size_t>(l)];
      sw2 += w[static_cast<std::size_t>(l)] * w[static_cast<std::size_t>(l)];
      swphi += w[static_cast<std::size_t>(l)] * f[static_cast<std::size_t>(l)];
    }
    const double ess = sw * sw / sw2;
    min_ess = std::min(min_ess, ess);
    if (ess < 10.0)
      throw Error(ErrorKind::DegenerateWeights, "effective sample size " + std::to_string(ess) + " on outer path " +
                                                    std::to_string(j));
    const double q_est = swphi / sw;
    double q_var = 0.0;
    for (int l = 0; l < nested.L; ++l) {
      const double r = w[static_cast<std::size_t>(l)] * (f[static_cast<std::size_t>(l)] - q_est);
      q_var += r * r;
    }
    q_var /= sw * sw;

    const PathBundle& b0 = nested.at(j, 0);
    const GaussianPosterior post = kalman_posterior(grid, b0.Y, b0.u, node);
    Eigen::SelfAdjointEigenSolver<Matrix> es(post.cov);
    const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    std::mt19937_64 gen(derive_seed(master, "posterior", static_cast<std::uint64_t>(j)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> pv(static_cast<std::size_t>(p_particles));
    Vector z(n);
    for (int s = 0; s < p_particles; ++s) {
      for (int c = 0; c < n; ++c) z(c) = normal(gen);
      pv[static_cast<std::size_t>(s)] = phi(post.mean + root * z);
    }
    const MeanStderr pm = mean_stderr(pv);
    d.estimates.push_back(q_est);
    d.stderrs.push_back(std::sqrt(q_var));
    d.reference.push_back(pm.mean);
    dev[static_cast<std::size_t>(j)] = std::abs(q_est - pm.mean);
    pooled_var += q_var + pm.se * pm.se;
  }
  const double pooled = std::sqrt(pooled_var / nested.M);
  const double med = median(dev);
  d.pass = med <= 5.0 * pooled;
  d.details["median_abs_deviation"] = med;
  d.details["pooled_stderr"] = pooled;
  d.details["min_ess"] = min_ess;
  d.details["outer_paths"] = nested.M;
  d.details["inner_particles"] = nested.L;
  d.details["posterior_particles"] = p_particles;
  return d;
}

}  // namespace polq
