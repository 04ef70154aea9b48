#include "polq/pathsim.hpp"

#include <cmath>
#include <ostream>

#include "polq/error.hpp"
#include "polq/io.hpp"
#include "polq/stats.hpp"

namespace polq {

const char* to_string(Measure m) noexcept { return m == Measure::P ? "P" : "Q"; }

namespace {

Matrix rk4_rhs(const Matrix& z, const Matrix& A) { return -z * A; }

double identity_error(const Matrix& a, const Matrix& b) {
  return (a * b - Matrix::Identity(a.rows(), a.cols())).lpNorm<Eigen::Infinity>();
}

void check_inverse(const Matrix& z, std::size_t i, ZetaPath& out) {
  Eigen::JacobiSVD<Matrix> svd(z);
  const auto& s = svd.singularValues();
  const double cond = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) throw Error(ErrorKind::SingularZeta, "fundamental solution is singular at node " + std::to_string(i));
  Matrix inv = z.inverse();
  out.max_identity_error = std::max(out.max_identity_error, identity_error(z, inv));
  out.zeta.push_back(z);
  out.zeta_inv.push_back(std::move(inv));
}

}  // namespace

ZetaPath solve_zeta(const GridScenario& grid, int substeps) {
  if (substeps < 1) throw Error(ErrorKind::InvalidArgument, "substeps must be positive");
  const int n = grid.n();
  ZetaPath out;
  Matrix z = Matrix::Identity(n, n);
  check_inverse(z, 0, out);
  const Coefficient& A = grid.base.A;
  for (int i = 0; i < grid.steps(); ++i) {
    const double t0 = grid.t[static_cast<std::size_t>(i)];
    const double h = grid.dt[static_cast<std::size_t>(i)] / substeps;
    for (int s = 0; s < substeps; ++s) {
      const double t = t0 + s * h;
      // Coefficients are sampled inside the step only, so a jump at the right
      // endpoint never leaks into the interval before it.
      const double eps = 1e-12 * h;
      const Matrix a0 = A(t), am = A(t + 0.5 * h), a1 = A(t + h - eps);
      const Matrix k1 = rk4_rhs(z, a0);
      const Matrix k2 = rk4_rhs(z + 0.5 * h * k1, am);
      const Matrix k3 = rk4_rhs(z + 0.5 * h * k2, am);
      const Matrix k4 = rk4_rhs(z + h * k3, a1);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    check_inverse(z, static_cast<std::size_t>(i) + 1, out);
  }
  return out;
}

ZetaPath euler_zeta(const GridScenario& grid) {
  const int n = grid.n();
  ZetaPath out;
  Matrix z = Matrix::Identity(n, n);
  check_inverse(z, 0, out);
  for (int i = 0; i < grid.steps(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Matrix F = Matrix::Identity(n, n) + grid.A[k] * grid.dt[k];
    Eigen::FullPivLU<Matrix> lu(F);
    if (!lu.isInvertible()) throw Error(ErrorKind::SingularZeta, "Euler propagator is singular at step " + std::to_string(i));
    z = z * lu.inverse();
    check_inverse(z, k + 1, out);
  }
  return out;
}

PathBundle simulate(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise, Measure m) {
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  if (policy.steps() != K || policy.d != d)
    throw Error(ErrorKind::DimensionMismatch, "policy does not match the grid");
  if (noise.dW.size() != K || noise.dV.rows() != K || noise.dV.cols() != d)
    throw Error(ErrorKind::DimensionMismatch, "noise does not match the grid");

  PathBundle b;
  b.measure = m;
  b.seed = noise.seed;
  b.X.resize(K + 1, n);
  b.Y.resize(K + 1, d);
  b.Z.resize(K + 1);
  b.N.resize(K + 1);
  b.u.resize(K, d);
  b.energy.resize(K + 1);
  b.dW = noise.dW;
  b.dV = noise.dV;
  b.X.row(0) = grid.x().transpose();
  b.Y.row(0).setZero();
  b.energy(0) = 0.0;

  const int F = policy.feature_count();
  Vector f(F), u(d), hx(d), x(n), dv(d);
  BudgetState st;
  double logd = 0.0;  // log N under P, log Z under Q
  b.N(0) = b.Z(0) = 1.0;
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    features(policy.basis, b.Y, i, f.data());
    u.noalias() = policy.coeffs[k].transpose() * f;
    budget_step(u.data(), d, dt, policy.Kc, i, st);
    b.u.row(i) = u.transpose();
    b.energy(i + 1) = st.energy;

    x = b.X.row(i).transpose();
    hx.noalias() = grid.H[k] * x;
    dv = noise.dV.row(i).transpose();
    const double hh = hx.squaredNorm() * dt;
    if (m == Measure::P) {
      b.Y.row(i + 1) = b.Y.row(i) + (hx * dt + dv).transpose();
      logd += -hx.dot(dv) - 0.5 * hh;
      b.N(i + 1) = std::exp(logd);
      b.Z(i + 1) = 1.0 / b.N(i + 1);
    } else {
      b.Y.row(i + 1) = b.Y.row(i) + dv.transpose();
      logd += hx.dot(dv) - 0.5 * hh;
      b.Z(i + 1) = std::exp(logd);
      b.N(i + 1) = 1.0 / b.Z(i + 1);
    }
    b.X.row(i + 1) = (x + (grid.A[k] * x + grid.B[k] * u) * dt + grid.C[k] * u * noise.dW(i)).transpose();
  }
  b.tau_index = st.saturated ? st.tau_index : K;
  b.saturated = st.saturated;
  if (!b.X.allFinite() || !b.Y.allFinite() || !b.Z.allFinite() || !b.N.allFinite() || !(b.Z.minCoeff() > 0.0) ||
      !(b.N.minCoeff() > 0.0))
    throw Error(ErrorKind::NonfinitePath, "path overflow (seed " + std::to_string(noise.seed) + ")");
  return b;
}

PathBundle simulate_under_P(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise) {
  return simulate(grid, policy, noise, Measure::P);
}

PathBundle simulate_under_Q(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise) {
  return simulate(grid, policy, noise, Measure::Q);
}

namespace {

// Runs body(k) for k in [0, count). Each k owns its output slot, so the
// parallel and serial versions write identical results.
template <class Body>
void for_paths(int count, Exec exec, Body&& body) {
  if (exec == Exec::Serial) {
    for (int k = 0; k < count; ++k) body(k);
    return;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (int k = 0; k < count; ++k) {
    try {
      body(k);
    } catch (...) {
#pragma omp critical(polq_path_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Ensemble simulate_ensemble(const GridScenario& grid, const PolicyRep& policy, Measure m, std::uint64_t master,
                           int count, std::string_view label, Exec exec) {
  if (count < 1) throw Error(ErrorKind::EmptyEnsemble, "ensemble size must be positive");
  Ensemble ens;
  ens.measure = m;
  ens.paths.resize(static_cast<std::size_t>(count));
  for_paths(count, exec, [&](int k) {
    const auto seed = derive_seed(master, label, static_cast<std::uint64_t>(k));
    ens.paths[static_cast<std::size_t>(k)] = simulate(grid, policy, make_noise(grid, seed), m);
  });
  return ens;
}

EnsembleSummary summarize_ensemble(const GridScenario& grid, const PolicyRep& policy, Measure m,
                                   std::uint64_t master, int count, std::string_view label, Exec exec) {
  if (count < 1) throw Error(ErrorKind::EmptyEnsemble, "ensemble size must be positive");
  const int K = grid.steps();
  EnsembleSummary s;
  s.measure = m;
  s.N.resize(count, K + 1);
  s.Z.resize(count, K + 1);
  s.cost.resize(count);
  s.energy.resize(count);
  s.tau_index.resize(static_cast<std::size_t>(count));
  s.saturated.resize(static_cast<std::size_t>(count));
  for_paths(count, exec, [&](int k) {
    const auto seed = derive_seed(master, label, static_cast<std::uint64_t>(k));
    const PathBundle b = simulate(grid, policy, make_noise(grid, seed), m);
    s.N.row(k) = b.N.transpose();
    s.Z.row(k) = b.Z.transpose();
    s.cost(k) = path_cost(grid, b, m == Measure::Q);
    s.energy(k) = b.energy(K);
    s.tau_index[static_cast<std::size_t>(k)] = b.tau_index;
    s.saturated[static_cast<std::size_t>(k)] = b.saturated ? 1 : 0;
  });
  return s;
}

Matrix closed_form_state(const GridScenario& grid, const ZetaPath& zeta, const Matrix& u, const Vector& dW) {
  const int K = grid.steps(), n = grid.n();
  if (u.rows() != K || u.cols() != grid.d() || dW.size() != K || static_cast<int>(zeta.zeta.size()) != K + 1)
    throw Error(ErrorKind::DimensionMismatch, "closed_form_state inputs do not match the grid");
  Matrix X(K + 1, n);
  Vector acc = grid.x();
  X.row(0) = (zeta.zeta_inv[0] * acc).transpose();
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Vector ui = u.row(i).transpose();
    acc += zeta.zeta[k] * (grid.B[k] * ui * grid.dt[k] + grid.C[k] * ui * dW(i));
    X.row(i + 1) = (zeta.zeta_inv[k + 1] * acc).transpose();
  }
  return X;
}

double path_cost(const GridScenario& grid, const PathBundle& b, bool weighted) {
  const int K = grid.steps();
  double total = 0.0;
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Vector x = b.X.row(i).transpose();
    const Vector u = b.u.row(i).transpose();
    const double run = x.dot(grid.G[k] * x) + u.dot(grid.R[k] * u);
    total += (weighted ? b.Z(i) : 1.0) * run * grid.dt[k];
  }
  const Vector xT = b.X.row(K).transpose();
  total += (weighted ? b.Z(K) : 1.0) * xT.dot(grid.G1() * xT);
  return total;
}

namespace {

CostEstimate cost_estimate(const GridScenario& grid, const Ensemble& ens, Measure want) {
  if (ens.paths.empty()) throw Error(ErrorKind::EmptyEnsemble, "cost of an empty ensemble");
  if (ens.measure != want)
    throw Error(ErrorKind::MeasureMismatch, std::string("ensemble simulated under ") + to_string(ens.measure));
  std::vector<double> c(ens.paths.size());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = path_cost(grid, ens.paths[k], want == Measure::Q);
  const MeanStderr ms = mean_stderr(c);
  return CostEstimate{ms.mean, ms.se, c.size(), want};
}

}  // namespace

CostEstimate cost_under_P(const GridScenario& grid, const Ensemble& ens) { return cost_estimate(grid, ens, Measure::P); }
CostEstimate cost_under_Q(const GridScenario& grid, const Ensemble& ens) { return cost_estimate(grid, ens, Measure::Q); }

void write_ensemble_csv(std::ostream& os, const GridScenario& grid, const Ensemble& ens) {
  const int n = grid.n(), d = grid.d(), K = grid.steps();
  CsvWriter w(os);
  std::vector<std::string> header{"path_id", "t"};
  for (int c = 0; c < n; ++c) header.push_back("X" + std::to_string(c));
  for (int c = 0; c < d; ++c) header.push_back("Y" + std::to_string(c));
  header.push_back("Z");
  header.push_back("N");
  for (int c = 0; c < d; ++c) header.push_back("u" + std::to_string(c));
  header.push_back("energy");
  w.header(header);
  for (std::size_t p = 0; p < ens.paths.size(); ++p) {
    const PathBundle& b = ens.paths[p];
    for (int i = 0; i <= K; ++i) {
      w.field(static_cast<long long>(p)).field(grid.t[static_cast<std::size_t>(i)]);
      for (int c = 0; c < n; ++c) w.field(b.X(i, c));
      for (int c = 0; c < d; ++c) w.field(b.Y(i, c));
      w.field(b.Z(i)).field(b.N(i));
      for (int c = 0; c < d; ++c) w.field(i < K ? b.u(i, c) : 0.0);
      w.field(b.energy(i));
      w.end_row();
    }
  }
}

}  // namespace polq
