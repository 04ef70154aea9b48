#include "polq/oracle.hpp"

#include <cmath>

#include "polq/error.hpp"
#include "polq/rng.hpp"
#include "polq/stats.hpp"

namespace polq {

namespace {

Matrix riccati_rhs(const Matrix& S, const Matrix& A, const Matrix& B, const Matrix& C, const Matrix& G,
                   const Matrix& R) {
  const Matrix gain = R + C.transpose() * S * C;
  const Eigen::LDLT<Matrix> ldlt(gain);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !gain.allFinite())
    throw Error(ErrorKind::RiccatiBlowup, "R + C^T S C lost positive definiteness");
  const Matrix BtS = B.transpose() * S;
  // dS/dt in forward time.
  return -(A.transpose() * S + S * A + G - BtS.transpose() * ldlt.solve(BtS));
}

}  // namespace

RiccatiSolution riccati_full_info(const GridScenario& grid, int substeps) {
  const int K = grid.steps();
  const Scenario& sc = grid.base;
  RiccatiSolution sol;
  sol.Sigma.resize(static_cast<std::size_t>(K) + 1);
  Matrix S = grid.G1();
  sol.Sigma[static_cast<std::size_t>(K)] = S;
  for (int i = K - 1; i >= 0; --i) {
    const double t1 = grid.t[static_cast<std::size_t>(i) + 1];
    const double h = grid.dt[static_cast<std::size_t>(i)] / substeps;
    for (int s = 0; s < substeps; ++s) {
      const double t = t1 - s * h;
      const double eps = 1e-12 * h;
      auto f = [&](double tt, const Matrix& X) { return riccati_rhs(X, sc.A(tt), sc.B(tt), sc.C(tt), sc.G(tt), sc.R(tt)); };
      // Backward step of size h; coefficient samples stay inside the interval.
      const Matrix k1 = f(t - eps, S);
      const Matrix k2 = f(t - 0.5 * h, S - 0.5 * h * k1);
      const Matrix k3 = f(t - 0.5 * h, S - 0.5 * h * k2);
      const Matrix k4 = f(t - h, S - h * k3);
      S -= (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      S = 0.5 * (S + S.transpose());
      if (!S.allFinite()) throw Error(ErrorKind::RiccatiBlowup, "Riccati solution is not finite");
    }
    sol.Sigma[static_cast<std::size_t>(i)] = S;
  }
  sol.value = grid.x().dot(sol.Sigma[0] * grid.x());
  return sol;
}

double deterministic_cost(const GridScenario& grid, const Matrix& u) {
  const int K = grid.steps(), n = grid.n();
  if (u.rows() != K || u.cols() != grid.d()) throw Error(ErrorKind::DimensionMismatch, "control shape");
  Vector m = grid.x();
  Matrix V = Matrix::Zero(n, n);
  double J = 0.0;
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    const Vector ui = u.row(i).transpose();
    J += (m.dot(grid.G[k] * m) + (grid.G[k] * V).trace() + ui.dot(grid.R[k] * ui)) * dt;
    const Matrix F = Matrix::Identity(n, n) + grid.A[k] * dt;
    const Vector cu = grid.C[k] * ui;
    m = F * m + grid.B[k] * ui * dt;
    V = F * V * F.transpose() + cu * cu.transpose() * dt;
  }
  return J + m.dot(grid.G1() * m) + (grid.G1() * V).trace();
}

Matrix deterministic_gradient(const GridScenario& grid, const Matrix& u) {
  const int K = grid.steps(), n = grid.n(), d = grid.d();
  if (u.rows() != K || u.cols() != d) throw Error(ErrorKind::DimensionMismatch, "control shape");
  std::vector<Vector> m(static_cast<std::size_t>(K) + 1);
  m[0] = grid.x();
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Matrix F = Matrix::Identity(n, n) + grid.A[k] * grid.dt[k];
    m[k + 1] = F * m[k] + grid.B[k] * u.row(i).transpose() * grid.dt[k];
  }
  // lambda = d cost / d m, Lambda = d cost / d V.
  Vector lam = 2.0 * grid.G1() * m[static_cast<std::size_t>(K)];
  Matrix Lam = grid.G1();
  Matrix g(K, d);
  for (int i = K - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    const double dt = grid.dt[k];
    const Vector ui = u.row(i).transpose();
    const Vector gi = 2.0 * grid.R[k] * ui * dt + grid.B[k].transpose() * lam * dt +
                      2.0 * grid.C[k].transpose() * Lam * grid.C[k] * ui * dt;
    g.row(i) = gi.transpose();
    const Matrix F = Matrix::Identity(n, n) + grid.A[k] * dt;
    lam = F.transpose() * lam + 2.0 * grid.G[k] * m[k] * dt;
    Lam = F.transpose() * Lam * F + grid.G[k] * dt;
  }
  return g;
}

PontryaginResult deterministic_pontryagin(const GridScenario& grid, double tol, int max_iter) {
  for (const auto& h : grid.H)
    if (!h.isZero(0.0)) throw Error(ErrorKind::InvalidArgument, "deterministic reduction needs H = 0");
  const int K = grid.steps(), d = grid.d();
  const Matrix zero = Matrix::Zero(K, d);
  const Matrix g0 = deterministic_gradient(grid, zero);
  auto hess = [&](const Matrix& p) { return Matrix(deterministic_gradient(grid, p) - g0); };
  PontryaginResult res;
  res.u = zero;
  Matrix r = -g0;
  Matrix p = r;
  double rr = r.squaredNorm();
  int it = 0;
  while (std::sqrt(rr) >= tol) {
    if (it >= max_iter) throw Error(ErrorKind::MaxIterExceeded, "conjugate gradients did not reach the tolerance");
    const Matrix Hp = hess(p);
    const double pHp = (p.array() * Hp.array()).sum();
    if (!(pHp > 0.0)) throw Error(ErrorKind::MaxIterExceeded, "deterministic cost lost curvature");
    const double alpha = rr / pHp;
    res.u += alpha * p;
    r -= alpha * Hp;
    ++it;
    // Periodic restart from the true gradient keeps round-off from drifting.
    if (it % 50 == 0) r = -deterministic_gradient(grid, res.u);
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  res.grad_norm = deterministic_gradient(grid, res.u).norm();
  res.iterations = it;
  res.value = deterministic_cost(grid, res.u);
  return res;
}

Matrix block_control(const Matrix& values, int steps) {
  const auto blocks = static_cast<int>(values.rows());
  Matrix u(steps, values.cols());
  for (int b = 0; b < blocks; ++b) {
    const int first = (b * steps) / blocks, last = ((b + 1) * steps) / blocks;
    for (int i = first; i < last; ++i) u.row(i) = values.row(b);
  }
  return u;
}

std::vector<double> lattice_around(double center, double half_width, int points) {
  if (points < 1) throw Error(ErrorKind::InvalidArgument, "lattice needs at least one point");
  std::vector<double> v;
  if (points == 1) return {center};
  for (int k = 0; k < points; ++k) v.push_back(center - half_width + 2.0 * half_width * k / (points - 1));
  return v;
}

GridSearchResult brute_force_small(const GridScenario& grid, int blocks, const std::vector<double>& lattice, int paths,
                                   std::uint64_t master, Exec exec) {
  const int K = grid.steps(), d = grid.d(), n = grid.n();
  if (blocks < 1 || blocks > K) throw Error(ErrorKind::InvalidArgument, "blocks must lie in [1, steps]");
  if (lattice.empty()) throw Error(ErrorKind::InvalidArgument, "empty lattice");
  if (paths < 2) throw Error(ErrorKind::InvalidArgument, "need at least two paths");
  const int dims = blocks * d;
  long long combos = 1;
  for (int k = 0; k < dims; ++k) {
    combos *= static_cast<long long>(lattice.size());
    if (combos > kMaxCombinations)
      throw Error(ErrorKind::CombinatorialBudgetExceeded,
                  "lattice^(blocks*d) exceeds " + std::to_string(kMaxCombinations) + " combinations");
  }

  // With the noise held fixed the state is affine in the block values, so the
  // Monte-Carlo cost of every candidate is an exact quadratic form in them.
  // Accumulate that form once per path instead of re-simulating each candidate.
  const std::size_t P = static_cast<std::size_t>(paths);
  std::vector<double> c0(P);
  std::vector<Vector> lin(P);
  std::vector<Matrix> quad(P);
  auto states = [&](const NoiseBundle& nb, const Matrix& values) {
    return simulate_under_P(grid, PolicyRep::open_loop(block_control(values, K)), nb).X;
  };
  auto run = [&](int p) {
    const NoiseBundle nb = make_noise(grid, derive_seed(master, "brute", static_cast<std::uint64_t>(p)));
    const Matrix base = states(nb, Matrix::Zero(blocks, d));
    std::vector<Matrix> resp(static_cast<std::size_t>(dims));
    for (int q = 0; q < dims; ++q) {
      Matrix e = Matrix::Zero(blocks, d);
      e(q / d, q % d) = 1.0;
      resp[static_cast<std::size_t>(q)] = states(nb, e) - base;
    }
    double c = 0.0;
    Vector l = Vector::Zero(dims);
    Matrix Qm = Matrix::Zero(dims, dims);
    for (int i = 0; i <= K; ++i) {
      const bool term = i == K;
      const auto k = static_cast<std::size_t>(std::min(i, K - 1));
      const Matrix& G = term ? grid.G1() : grid.G[k];
      const double w = term ? 1.0 : grid.dt[k];
      const Vector a = base.row(i).transpose();
      Matrix E(n, dims);
      for (int q = 0; q < dims; ++q) E.col(q) = resp[static_cast<std::size_t>(q)].row(i).transpose();
      c += w * a.dot(G * a);
      l += w * 2.0 * E.transpose() * (G * a);
      Qm += w * E.transpose() * G * E;
      if (!term) {
        const int b = (i * blocks) / K;
        // Control cost of block b's values on this step.
        for (int r1 = 0; r1 < d; ++r1)
          for (int r2 = 0; r2 < d; ++r2) Qm(b * d + r1, b * d + r2) += w * grid.R[k](r1, r2);
      }
    }
    c0[static_cast<std::size_t>(p)] = c;
    lin[static_cast<std::size_t>(p)] = l;
    quad[static_cast<std::size_t>(p)] = Qm;
  };
  if (exec == Exec::Serial) {
    for (int p = 0; p < paths; ++p) run(p);
  } else {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < paths; ++p) run(p);
  }
  std::vector<double> tmp(P);
  for (std::size_t p = 0; p < P; ++p) tmp[p] = c0[p];
  const double cbar = pairwise_sum(tmp) / paths;
  Vector lbar(dims);
  Matrix Qbar(dims, dims);
  for (int a = 0; a < dims; ++a) {
    for (std::size_t p = 0; p < P; ++p) tmp[p] = lin[p](a);
    lbar(a) = pairwise_sum(tmp) / paths;
    for (int b = 0; b < dims; ++b) {
      for (std::size_t p = 0; p < P; ++p) tmp[p] = quad[p](a, b);
      Qbar(a, b) = pairwise_sum(tmp) / paths;
    }
  }

  GridSearchResult res;
  res.lattice = lattice;
  res.blocks = blocks;
  res.combinations = combos;
  double best = std::numeric_limits<double>::infinity();
  Vector theta(dims), best_theta(dims);
  std::vector<std::size_t> idx(static_cast<std::size_t>(dims), 0);
  for (long long c = 0; c < combos; ++c) {
    long long rest = c;
    for (int q = 0; q < dims; ++q) {
      idx[static_cast<std::size_t>(q)] = static_cast<std::size_t>(rest % static_cast<long long>(lattice.size()));
      rest /= static_cast<long long>(lattice.size());
      theta(q) = lattice[idx[static_cast<std::size_t>(q)]];
    }
    const double J = cbar + lbar.dot(theta) + theta.dot(Qbar * theta);
    if (J < best) {
      best = J;
      best_theta = theta;
    }
  }
  res.best_control.resize(blocks, d);
  for (int q = 0; q < dims; ++q) res.best_control(q / d, q % d) = best_theta(q);
  std::vector<double> per(P);
  for (std::size_t p = 0; p < P; ++p) per[p] = c0[p] + lin[p].dot(best_theta) + best_theta.dot(quad[p] * best_theta);
  const MeanStderr ms = mean_stderr(per);
  res.best_value = CostEstimate{ms.mean, ms.se, P, Measure::P};
  return res;
}

std::optional<DegenerateValue> analytic_degenerate(const GridScenario& grid) {
  const int K = grid.steps(), n = grid.n();
  bool zero_cost = grid.G1().isZero(0.0), no_drift = true;
  for (int i = 0; i < K; ++i) {
    zero_cost = zero_cost && grid.G[static_cast<std::size_t>(i)].isZero(0.0);
    no_drift = no_drift && grid.B[static_cast<std::size_t>(i)].isZero(0.0);
  }
  if (zero_cost) return DegenerateValue{0.0, "G = G1 = 0: u = 0 is optimal with value 0"};
  if (!no_drift) return std::nullopt;
  // B = 0: the control only adds u'Ru and zero-mean noise, so u = 0 is optimal.
  Vector x = grid.x();
  double J = 0.0;
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    J += x.dot(grid.G[k] * x) * grid.dt[k];
    x = (Matrix::Identity(n, n) + grid.A[k] * grid.dt[k]) * x;
  }
  J += x.dot(grid.G1() * x);
  bool no_diffusion = true;
  for (const auto& c : grid.C) no_diffusion = no_diffusion && c.isZero(0.0);
  return DegenerateValue{J, no_diffusion ? "B = C = 0: uncontrolled path" : "B = 0: u = 0 is optimal, uncontrolled path"};
}

nlohmann::json oracle_report(const std::string& scenario_hash, const std::string& oracle, double value,
                             nlohmann::json details) {
  nlohmann::json v = std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
  return nlohmann::json{{"scenario_hash", scenario_hash}, {"oracle", oracle}, {"value", v}, {"details", std::move(details)}};
}

}  // namespace polq
