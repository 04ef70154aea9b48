#include <doctest.h>

#include <cmath>
#include <sstream>

#include "polq/adjoint.hpp"
#include "polq/error.hpp"
#include "polq/filter.hpp"
#include "support.hpp"

using namespace polq;
using polq::test::grid_of;
using polq::test::scalar;

namespace {

struct Solved {
  Ensemble ensP;
  PAdjoint pside;
  NestedEnsemble nested;
  AdjointPaths adj;
};

Solved solve_all(const GridScenario& g, const PolicyRep& pol, int p_paths = 400, int M = 40, int L = 10) {
  Solved s;
  s.ensP = simulate_ensemble(g, pol, Measure::P, 11, p_paths);
  s.pside = solve_p_bsde(g, s.ensP, pol.basis);
  s.nested = build_nested(g, pol, M, L, 12);
  s.adj = solve_P_bsde(g, s.nested, s.pside);
  return s;
}

double max_abs(const std::vector<Matrix>& v) {
  double m = 0.0;
  for (const auto& x : v) m = std::max(m, x.cwiseAbs().maxCoeff());
  return m;
}

double max_abs(const std::vector<Vector>& v) {
  double m = 0.0;
  for (const auto& x : v) m = std::max(m, x.cwiseAbs().maxCoeff());
  return m;
}

}  // namespace

TEST_CASE("zero weights give zero adjoints") {
  const GridScenario g = grid_of(scalar(0.5, 1, 0.5, 0, 0, 1, 0));
  const Solved s = solve_all(g, PolicyRep::zero(g.steps(), 1, BasisSpec{1, true, false}));
  CHECK(max_abs(s.pside.p) == 0.0);
  CHECK(max_abs(s.pside.q1) == 0.0);
  CHECK(max_abs(s.pside.q2) == 0.0);
  CHECK(max_abs(s.adj.P) == 0.0);
  CHECK(max_abs(s.adj.Q1) == 0.0);
  CHECK(max_abs(s.adj.Q2) == 0.0);
  const ResidualReport r = bsde_residual(g, s.adj, s.nested.particles);
  CHECK(r.P_rms < 1e-10);
  CHECK(r.p_rms < 1e-10);
}

TEST_CASE("deterministic state gives the quadrature cost-to-go") {
  const double a = -0.3, gw = 1.2, g1 = 0.8, x = 1.5;
  const GridScenario g = grid_of(scalar(a, 0, 0, 1, gw, 1, g1, x));
  const Solved s = solve_all(g, PolicyRep::zero(g.steps(), 1, BasisSpec{1, true, false}));
  const ZetaPath z = euler_zeta(g);
  double togo = g1 * std::pow(z.zeta_inv.back()(0, 0) * x, 2);
  for (int i = g.steps(); i >= 0; --i) {
    if (i < g.steps()) togo += gw * std::pow(z.zeta_inv[static_cast<std::size_t>(i)](0, 0) * x, 2) * g.dt[static_cast<std::size_t>(i)];
    CHECK((s.pside.p[static_cast<std::size_t>(i)].array() - togo).abs().maxCoeff() < 1e-6 * togo);
  }
  CHECK(max_abs(s.pside.q1) < 1e-6);
  CHECK(max_abs(s.pside.q2) < 1e-6);
}

TEST_CASE("constant state with terminal weight only") {
  const GridScenario g = grid_of(scalar(0, 1, 0, 0, 0, 1, 1, 1.7));
  const Solved s = solve_all(g, PolicyRep::zero(g.steps(), 1, BasisSpec{1, true, false}));
  for (const auto& p : s.pside.p) CHECK((p.array() - 1.7 * 1.7).abs().maxCoeff() < 1e-6);
  for (const auto& P : s.adj.P) CHECK((P.array() - 2.0 * 1.7).abs().maxCoeff() < 1e-6);
  CHECK(max_abs(s.adj.Q1) < 1e-5);
  CHECK(max_abs(s.adj.Q2) < 1e-5);
}

TEST_CASE("terminal conditions are exact") {
  const GridScenario g = test::shipped("mixed2d");
  const PolicyRep pol = test::random_policy(g.steps(), 2, BasisSpec{1, true, false}, 0.3, 4);
  const Solved s = solve_all(g, pol);
  const int K = g.steps();
  for (int r = 0; r < s.nested.size(); ++r) {
    const PathBundle& b = s.nested.particles[static_cast<std::size_t>(r)];
    const Vector xT = b.X.row(K).transpose();
    const Vector PT = 2.0 * b.Z(K) * g.G1() * xT;
    CHECK((s.adj.P[static_cast<std::size_t>(K)].row(r).transpose() - PT).norm() == 0.0);
  }
  for (std::size_t r = 0; r < s.ensP.paths.size(); ++r) {
    const Vector xT = s.ensP.paths[r].X.row(K).transpose();
    CHECK(s.pside.p[static_cast<std::size_t>(K)](static_cast<Eigen::Index>(r)) == xT.dot(g.G1() * xT));
  }
}

TEST_CASE("deterministic adjoint follows the linear ODE") {
  const double a = 0.6, gw = 1.0, g1 = 1.0, x = 1.0;
  auto exact = [&](double t) {
    return 2.0 * g1 * x * std::exp(a * (2.0 - t)) + 2.0 * gw * x * std::exp(-a * t) * (std::exp(2.0 * a) - std::exp(2.0 * a * t)) / (2.0 * a);
  };
  double err[2];
  for (int level = 0; level < 2; ++level) {
    const GridScenario g = grid_of(scalar(a, 0, 0, 0, gw, 1, g1, x), 50 << level);
    const Solved s = solve_all(g, PolicyRep::zero(g.steps(), 1, BasisSpec{1, true, false}), 200, 20, 10);
    err[level] = 0.0;
    for (std::size_t i = 0; i < g.t.size(); ++i)
      err[level] = std::max(err[level], (s.adj.P[i].array() - exact(g.t[i])).abs().maxCoeff());
  }
  CHECK(err[0] < 0.03 * exact(0.0));
  CHECK(std::log2(err[0] / err[1]) > 0.8);
}

TEST_CASE("scalar adjoint at time zero is the Monte-Carlo cost") {
  const GridScenario g = test::shipped("scalar_h1");
  const PolicyRep pol = test::random_policy(g.steps(), 1, BasisSpec{1, true, false}, 0.3, 4);
  const Ensemble e = simulate_ensemble(g, pol, Measure::P, 5, 2000);
  const PAdjoint p = solve_p_bsde(g, e, pol.basis);
  const CostEstimate c = cost_under_P(g, e);
  CHECK(std::abs(p.p[0].mean() - c.mean) <= 3.0 * c.se);
}

TEST_CASE("shifting Q1 raises the residual by the dW variance") {
  const GridScenario g = test::shipped("scalar_h1");
  const PolicyRep pol = test::random_policy(g.steps(), 1, BasisSpec{1, true, false}, 0.3, 6);
  Solved s = solve_all(g, pol, 1000, 100, 20);
  const ResidualReport before = bsde_residual(g, s.adj, s.nested.particles);
  for (auto& q : s.adj.Q1) q.array() += 0.1;
  const ResidualReport after = bsde_residual(g, s.adj, s.nested.particles);
  const double added = after.P_rms * after.P_rms - before.P_rms * before.P_rms;
  CHECK(added == doctest::Approx(0.01 * g.dt[0]).epsilon(0.15));
  CHECK(after.p_rms == before.p_rms);
}

TEST_CASE("residual bound and shape checks") {
  const GridScenario g = test::shipped("scalar_h1");
  const PolicyRep pol = test::random_policy(g.steps(), 1, BasisSpec{1, true, false}, 0.3, 6);
  const Ensemble e = simulate_ensemble(g, pol, Measure::P, 5, 300);
  try {
    solve_p_bsde(g, e, pol.basis, kDefaultRidge, 1e-12);
    FAIL("expected ResidualTooLarge");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::ResidualTooLarge);
  }
  try {
    solve_p_bsde(g, simulate_ensemble(g, pol, Measure::Q, 5, 10), pol.basis);
    FAIL("expected MeasureMismatch");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::MeasureMismatch);
  }
}

TEST_CASE("adjoint CSV layout") {
  const GridScenario g = grid_of(scalar(0.5, 1, 0.5, 1, 1, 1, 1), 3);
  const Solved s = solve_all(g, PolicyRep::zero(3, 1, BasisSpec{1, true, false}), 50, 2, 2);
  std::ostringstream os;
  write_adjoint_csv(os, g, s.adj);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "particle,node,P0,Q1_0,Q2_0_0,p,q1,q2_0");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4 * 4);
}
