#include "polq/adjoint.hpp"

#include <cmath>
#include <ostream>

#include "polq/error.hpp"
#include "polq/io.hpp"

namespace polq {

namespace {

// Regression state s = (X_i, [Z_i], Y level, Y increments). The basis holds 1,
// every s_a and every product s_a s_b except products of two increments.
int basis_size(int m, int increments) { return quad_basis_size(m) - increments * (increments + 1) / 2; }

int increment_count(const BasisSpec& feats, int d) { return feats.lag * d; }

void regression_row(const PathBundle& b, int i, const BasisSpec& feats, bool with_z, double* s, double* out) {
  const auto n = b.X.cols();
  const int d = static_cast<int>(b.Y.cols());
  const int lin = feats.linear_count(d), inc = increment_count(feats, d);
  int k = 0;
  for (Eigen::Index c = 0; c < n; ++c) s[k++] = b.X(i, c);
  if (with_z) s[k++] = b.Z(i);
  if (lin > 64) throw Error(ErrorKind::InvalidArgument, "too many observation features for the adjoint basis");
  double tmp[64];
  linear_features(feats, b.Y, i, tmp);
  for (int c = inc; c < lin; ++c) s[k++] = tmp[c];
  for (int c = 0; c < inc; ++c) s[k++] = tmp[c];
  const int m = k, first_inc = m - inc;
  int o = 0;
  out[o++] = 1.0;
  for (int a = 0; a < m; ++a) out[o++] = s[a];
  for (int a = 0; a < m; ++a)
    for (int c = a; c < m; ++c)
      if (a < first_inc) out[o++] = s[a] * s[c];
}

double running_cost(const GridScenario& grid, const PathBundle& b, int i) {
  const auto k = static_cast<std::size_t>(i);
  const Vector x = b.X.row(i).transpose();
  const Vector u = b.u.row(i).transpose();
  return x.dot(grid.G[k] * x) + u.dot(grid.R[k] * u);
}

double terminal_cost(const GridScenario& grid, const PathBundle& b) {
  const Vector x = b.X.row(grid.steps()).transpose();
  return x.dot(grid.G1() * x);
}

// Products Z X_a X_b (a <= b) and Z X_a v for the observation features v of a
// state s = (X, Z, features).
int cubic_size(int n, int features) { return n * (n + 1) / 2 + n * features; }

void cubic_row(const double* s, int n, int features, double* out) {
  const double z = s[n];
  int o = 0;
  for (int a = 0; a < n; ++a) {
    for (int b = a; b < n; ++b) out[o++] = z * s[a] * s[b];
    for (int v = 0; v < features; ++v) out[o++] = z * s[a] * s[n + 1 + v];
  }
}

// Joint one-step design [phi, psi dW, psi dV_1, ..., psi dV_d].
Matrix one_step_design(const Matrix& phi, const Matrix& psi, const std::vector<PathBundle>& paths, int i) {
  const Eigen::Index N = phi.rows(), Fa = phi.cols(), Fm = psi.cols();
  const int d = static_cast<int>(paths.front().dV.cols());
  Matrix J(N, Fa + Fm * (1 + d));
  for (Eigen::Index r = 0; r < N; ++r) {
    const PathBundle& b = paths[static_cast<std::size_t>(r)];
    J.row(r).head(Fa) = phi.row(r);
    J.row(r).segment(Fa, Fm) = psi.row(r) * b.dW(i);
    for (int c = 0; c < d; ++c) J.row(r).segment(Fa + Fm * (1 + c), Fm) = psi.row(r) * b.dV(i, c);
  }
  return J;
}

void check_residual(double value, double bound, const char* which) {
  if (!std::isfinite(value)) throw Error(ErrorKind::RegressionFailure, std::string(which) + " residual is not finite");
  if (value > bound)
    throw Error(ErrorKind::ResidualTooLarge, std::string(which) + " residual " + std::to_string(value) +
                                                 " exceeds the bound " + std::to_string(bound));
}

}  // namespace

void PAdjoint::evaluate(int i, const PathBundle& path, double& p_ahead, double& q1v, Eigen::Ref<Vector> q2v) const {
  const int m = state_dim();
  Vector s(m), row(basis_size(m, increment_count(features, d)));
  regression_row(path, i, features, false, s.data(), row.data());
  const auto k = static_cast<std::size_t>(i);
  p_ahead = row.dot(coef_ahead[k].col(0));
  q1v = row.dot(coef_q1[k].col(0));
  q2v = coef_q2[k].transpose() * row;
}

PAdjoint solve_p_bsde(const GridScenario& grid, const Ensemble& ens, const BasisSpec& feats, double ridge,
                      double residual_bound) {
  if (ens.paths.empty()) throw Error(ErrorKind::EmptyEnsemble, "scalar adjoint on an empty ensemble");
  if (ens.measure != Measure::P) throw Error(ErrorKind::MeasureMismatch, "scalar adjoint is solved under P");
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  const auto N = static_cast<Eigen::Index>(ens.paths.size());
  PAdjoint out;
  out.features = feats;
  out.n = n;
  out.d = d;
  const int m = out.state_dim();
  const int Fb = basis_size(m, increment_count(feats, d));
  out.p.resize(static_cast<std::size_t>(K) + 1);
  out.q1.resize(static_cast<std::size_t>(K));
  out.q2.resize(static_cast<std::size_t>(K));
  out.coef_ahead.resize(static_cast<std::size_t>(K));
  out.coef_q1.resize(static_cast<std::size_t>(K));
  out.coef_q2.resize(static_cast<std::size_t>(K));

  Vector target(N);  // p at node i+1
  for (Eigen::Index r = 0; r < N; ++r) target(r) = terminal_cost(grid, ens.paths[static_cast<std::size_t>(r)]);
  out.p[static_cast<std::size_t>(K)] = target;

  Matrix D(N, Fb);
  Vector s(m), row(Fb), ell(N);
  for (int i = K - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    for (Eigen::Index r = 0; r < N; ++r) {
      const PathBundle& b = ens.paths[static_cast<std::size_t>(r)];
      regression_row(b, i, feats, false, s.data(), row.data());
      D.row(r) = row.transpose();
      ell(r) = running_cost(grid, b, i);
    }
    const Matrix J = one_step_design(D, D, ens.paths, i);
    LeastSquares ls(J, nullptr, ridge);
    if (ls.rank_deficient()) ++out.rank_deficient_steps;
    const Matrix coef = ls.solve(target);
    out.coef_ahead[k] = coef.topRows(Fb);
    out.coef_q1[k] = coef.middleRows(Fb, Fb);
    out.coef_q2[k].resize(Fb, d);
    for (int c = 0; c < d; ++c) out.coef_q2[k].col(c) = coef.col(0).segment(Fb * (2 + c), Fb);
    const Vector ahead = D * out.coef_ahead[k].col(0);
    out.q1[k] = D * out.coef_q1[k].col(0);
    out.q2[k] = D * out.coef_q2[k];
    out.p[k] = ahead + ell * dt;
    target = out.p[k];
  }

  double ss = 0.0;
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    for (Eigen::Index r = 0; r < N; ++r) {
      const PathBundle& b = ens.paths[static_cast<std::size_t>(r)];
      const double res = out.p[k](r) - out.p[k + 1](r) - running_cost(grid, b, i) * grid.dt[k] +
                         out.q1[k](r) * b.dW(i) + out.q2[k].row(r).dot(b.dV.row(i));
      ss += res * res;
    }
  }
  out.residual_rms = std::sqrt(ss / (static_cast<double>(N) * K));
  check_residual(out.residual_rms, residual_bound, "scalar adjoint");
  return out;
}

AdjointPaths solve_P_bsde(const GridScenario& grid, const std::vector<PathBundle>& particles, const PAdjoint& pside,
                          double ridge, double residual_bound) {
  if (particles.empty()) throw Error(ErrorKind::EmptyEnsemble, "vector adjoint on an empty ensemble");
  for (const auto& b : particles)
    if (b.measure != Measure::Q) throw Error(ErrorKind::MeasureMismatch, "vector adjoint is solved under Q");
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  if (pside.n != n || pside.d != d || static_cast<int>(pside.coef_q2.size()) != K)
    throw Error(ErrorKind::DimensionMismatch, "scalar adjoint does not match the grid");
  const auto N = static_cast<Eigen::Index>(particles.size());

  AdjointPaths adj;
  const auto Ks = static_cast<std::size_t>(K);
  adj.P.resize(Ks + 1);
  adj.P_ahead.resize(Ks);
  adj.Q1.resize(Ks);
  adj.Q2.resize(Ks);
  adj.p.resize(Ks + 1);
  adj.q1.resize(Ks);
  adj.q2.resize(Ks);

  // Scalar adjoint carried over to the Q particles through its fitted functions.
  for (int i = 0; i <= K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    adj.p[k].resize(N);
    if (i < K) {
      adj.q1[k].resize(N);
      adj.q2[k].resize(N, d);
    }
    for (Eigen::Index r = 0; r < N; ++r) {
      const PathBundle& b = particles[static_cast<std::size_t>(r)];
      if (i == K) {
        adj.p[k](r) = terminal_cost(grid, b);
        continue;
      }
      double pa = 0.0, q1v = 0.0;
      Vector q2v(d);
      pside.evaluate(i, b, pa, q1v, q2v);
      adj.p[k](r) = pa + running_cost(grid, b, i) * grid.dt[k];
      adj.q1[k](r) = q1v;
      adj.q2[k].row(r) = q2v.transpose();
    }
  }

  const int m = n + 1 + pside.features.linear_count(d);
  const int Fb = basis_size(m, increment_count(pside.features, d));
  Matrix lam(N, n);  // rows hold P_{i+1}^T
  for (Eigen::Index r = 0; r < N; ++r) {
    const PathBundle& b = particles[static_cast<std::size_t>(r)];
    lam.row(r) = 2.0 * b.Z(K) * (grid.G1() * b.X.row(K).transpose()).transpose();
  }
  adj.P[Ks] = lam;

  const int nf = pside.features.linear_count(d);
  const int Fm = Fb + cubic_size(n, nf);
  Matrix D(N, Fb), E(N, Fm), f(N, n);
  Vector s(m), row(Fb), cub(Fm - Fb);
  for (int i = K - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    for (Eigen::Index r = 0; r < N; ++r) {
      const PathBundle& b = particles[static_cast<std::size_t>(r)];
      regression_row(b, i, pside.features, true, s.data(), row.data());
      D.row(r) = row.transpose();
      E.row(r).head(Fb) = row.transpose();
      cubic_row(s.data(), n, nf, cub.data());
      E.row(r).tail(Fm - Fb) = cub.transpose();
    }
    const Matrix J = one_step_design(D, E, particles, i);
    LeastSquares ls(J, nullptr, ridge);
    if (ls.rank_deficient()) ++adj.rank_deficient_steps;
    const Matrix coef = ls.solve(lam);
    adj.P_ahead[k] = D * coef.topRows(Fb);
    adj.Q1[k] = E * coef.middleRows(Fb, Fm);
    adj.Q2[k].resize(N, n * d);
    for (int c = 0; c < d; ++c) adj.Q2[k].middleCols(n * c, n) = E * coef.middleRows(Fb + Fm * (1 + c), Fm);
    for (Eigen::Index r = 0; r < N; ++r) {
      const PathBundle& b = particles[static_cast<std::size_t>(r)];
      const double z = b.Z(i);
      f.row(r) = 2.0 * z * (grid.G[k] * b.X.row(i).transpose()).transpose() + z * adj.q2[k].row(r) * grid.H[k];
    }
    // I + A dt = zeta_{i+1}^{-1} zeta_i is the one-step discrete integrating factor.
    const Matrix F = Matrix::Identity(n, n) + grid.A[k] * dt;
    adj.P[k] = adj.P_ahead[k] * F + f * dt;
    lam = adj.P[k];
  }

  const ResidualReport rep = bsde_residual(grid, adj, particles);
  adj.residual_P = rep.P_rms;
  adj.residual_p = rep.p_rms;
  check_residual(adj.residual_P, residual_bound, "vector adjoint");
  return adj;
}

AdjointPaths solve_P_bsde(const GridScenario& grid, const NestedEnsemble& nested, const PAdjoint& pside, double ridge,
                          double residual_bound) {
  return solve_P_bsde(grid, nested.particles, pside, ridge, residual_bound);
}

ResidualReport bsde_residual(const GridScenario& grid, const AdjointPaths& adj, const std::vector<PathBundle>& particles) {
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  const auto N = static_cast<Eigen::Index>(particles.size());
  if (adj.particles() != N) throw Error(ErrorKind::DimensionMismatch, "adjoints and particles differ in count");
  double ssP = 0.0, ssp = 0.0;
  Vector r(n), q2(n);
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    for (Eigen::Index j = 0; j < N; ++j) {
      const PathBundle& b = particles[static_cast<std::size_t>(j)];
      const Vector x = b.X.row(i).transpose();
      const Vector Pi = adj.P[k].row(j).transpose();
      const double z = b.Z(i);
      Vector driver = 2.0 * z * grid.G[k] * x + grid.A[k].transpose() * Pi +
                      z * grid.H[k].transpose() * adj.q2[k].row(j).transpose();
      r = Pi - adj.P[k + 1].row(j).transpose() - driver * dt + adj.Q1[k].row(j).transpose() * b.dW(i);
      for (int c = 0; c < d; ++c) r += adj.Q2[k].row(j).segment(n * c, n).transpose() * b.dV(i, c);
      ssP += r.squaredNorm();

      const Vector u = b.u.row(i).transpose();
      const double ell = x.dot(grid.G[k] * x) + u.dot(grid.R[k] * u);
      double rp = adj.p[k](j) - adj.p[k + 1](j) - ell * dt + adj.q1[k](j) * b.dW(i);
      const Vector dWt = b.dV.row(i).transpose() - grid.H[k] * x * dt;
      rp += adj.q2[k].row(j).dot(dWt);
      ssp += rp * rp;
    }
  }
  const double denom = static_cast<double>(N) * K;
  return ResidualReport{std::sqrt(ssP / denom), std::sqrt(ssp / denom)};
}

void write_adjoint_csv(std::ostream& os, const GridScenario& grid, const AdjointPaths& adj) {
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  CsvWriter w(os);
  std::vector<std::string> h{"particle", "node"};
  for (int a = 0; a < n; ++a) h.push_back("P" + std::to_string(a));
  for (int a = 0; a < n; ++a) h.push_back("Q1_" + std::to_string(a));
  for (int c = 0; c < d; ++c)
    for (int a = 0; a < n; ++a) h.push_back("Q2_" + std::to_string(a) + "_" + std::to_string(c));
  h.push_back("p");
  h.push_back("q1");
  for (int c = 0; c < d; ++c) h.push_back("q2_" + std::to_string(c));
  w.header(h);
  const std::string blank;
  for (int j = 0; j < adj.particles(); ++j) {
    for (int i = 0; i <= K; ++i) {
      const auto k = static_cast<std::size_t>(i);
      w.field(j).field(i);
      for (int a = 0; a < n; ++a) w.field(adj.P[k](j, a));
      for (int a = 0; a < n; ++a) i < K ? w.field(adj.Q1[k](j, a)) : w.field(blank);
      for (int c = 0; c < n * d; ++c) i < K ? w.field(adj.Q2[k](j, c)) : w.field(blank);
      w.field(adj.p[k](j));
      i < K ? w.field(adj.q1[k](j)) : w.field(blank);
      for (int c = 0; c < d; ++c) i < K ? w.field(adj.q2[k](j, c)) : w.field(blank);
      w.end_row();
    }
  }
}

}  // namespace polq
