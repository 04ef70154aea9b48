#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "polq/filter.hpp"
#include "polq/pathsim.hpp"
#include "polq/regression.hpp"

namespace polq {

/// Scalar adjoint (p, q1, q2) solved under P, with the fitted per-step
/// coefficient functions kept so the solution can be evaluated on any path
/// (in particular on particles simulated under Q).
///
/// Regression state at node i: s = (X_i, Y level, Y increments of the policy
/// basis); the basis is 1, every s_a and every product s_a s_b except
/// products of two increments.
struct PAdjoint {
  BasisSpec features;
  int n = 0, d = 0;
  std::vector<Vector> p;    // K+1, one entry per path
  std::vector<Vector> q1;   // K
  std::vector<Matrix> q2;   // K, paths x d
  std::vector<Matrix> coef_ahead;  // K, basis x 1: E[p_{i+1} | F_i]
  std::vector<Matrix> coef_q1;     // K, basis x 1
  std::vector<Matrix> coef_q2;     // K, basis x d
  double residual_rms = 0.0;
  int rank_deficient_steps = 0;

  int state_dim() const { return n + features.linear_count(d); }
  /// Values of (p_ahead, q1, q2) at node i of `path`.
  void evaluate(int i, const PathBundle& path, double& p_ahead, double& q1v, Eigen::Ref<Vector> q2v) const;
};

PAdjoint solve_p_bsde(const GridScenario& grid, const Ensemble& ensP, const BasisSpec& features,
                      double ridge = kDefaultRidge,
                      double residual_bound = std::numeric_limits<double>::infinity());

/// Vector adjoint (P, Q1, Q2) on a Q-ensemble, together with the scalar
/// adjoint transported onto the same particles.
struct AdjointPaths {
  std::vector<Matrix> P;        // K+1, particles x n
  std::vector<Matrix> P_ahead;  // K, particles x n: one-step conditional E[P_{i+1} | F_i]
  std::vector<Matrix> Q1;       // K, particles x n
  std::vector<Matrix> Q2;       // K, particles x (n*d); column a + n*c holds entry (a, c)
  std::vector<Vector> p;        // K+1
  std::vector<Vector> q1;       // K
  std::vector<Matrix> q2;       // K, particles x d
  double residual_P = 0.0;
  double residual_p = 0.0;
  int rank_deficient_steps = 0;

  int particles() const { return P.empty() ? 0 : static_cast<int>(P.front().rows()); }
};

/// One-step backward pass P_i = E[P_{i+1} | F_i] (I + A dt) + driver dt, where
/// I + A dt = zeta_{i+1}^{-1} zeta_i is the discrete integrating factor that
/// removes the A-term from Pi = P zeta^{-1}. Conditional expectations regress
/// on the same basis with Z_i added to the regression state.
AdjointPaths solve_P_bsde(const GridScenario& grid, const std::vector<PathBundle>& particles, const PAdjoint& pside,
                          double ridge = kDefaultRidge,
                          double residual_bound = std::numeric_limits<double>::infinity());
AdjointPaths solve_P_bsde(const GridScenario& grid, const NestedEnsemble& nested, const PAdjoint& pside,
                          double ridge = kDefaultRidge,
                          double residual_bound = std::numeric_limits<double>::infinity());

struct ResidualReport {
  double P_rms = 0.0;
  double p_rms = 0.0;
};

/// RMS over particles and steps of
///   P_i - [P_{i+1} + (2 Z G X + A^T P_i + Z H^T q2^T) dt - Q1 dW - Q2 dY]
///   p_i - [p_{i+1} + (X^T G X + u^T R u) dt - q1 dW - q2 dW~]   (dW~ = dY - H X dt)
ResidualReport bsde_residual(const GridScenario& grid, const AdjointPaths& adj, const std::vector<PathBundle>& particles);

/// particle,node,P*,Q1*,Q2*,p,q1,q2*; step quantities are blank at the terminal node.
void write_adjoint_csv(std::ostream& os, const GridScenario& grid, const AdjointPaths& adj);

}  // namespace polq
