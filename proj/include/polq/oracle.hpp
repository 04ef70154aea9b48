#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polq/pathsim.hpp"

namespace polq {

/// Full-information value from the backward matrix Riccati equation
///   dS/dt + A^T S + S A + G - S B (R + C^T S C)^{-1} B^T S = 0,  S(T) = G1.
struct RiccatiSolution {
  std::vector<Matrix> Sigma;  // K+1 nodes
  double value = 0.0;         // x^T S(0) x
};

RiccatiSolution riccati_full_info(const GridScenario& grid, int substeps = 16);

/// Expected cost of a deterministic control (K x d) in the Euler model, from
/// the exact mean/covariance recursion
///   m_{i+1} = (I + A dt) m_i + B u_i dt,
///   V_{i+1} = (I + A dt) V_i (I + A dt)^T + C u_i u_i^T C^T dt.
double deterministic_cost(const GridScenario& grid, const Matrix& u);
/// Gradient of deterministic_cost with respect to u (K x d).
Matrix deterministic_gradient(const GridScenario& grid, const Matrix& u);

struct PontryaginResult {
  Matrix u;  // K x d
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Optimal deterministic control for H = 0 by conjugate gradients on the
/// (quadratic) deterministic cost, run until the gradient norm drops below tol.
PontryaginResult deterministic_pontryagin(const GridScenario& grid, double tol = 1e-8, int max_iter = 10000);

struct GridSearchResult {
  Matrix best_control;  // blocks x d
  CostEstimate best_value;
  std::vector<double> lattice;
  int blocks = 0;
  long long combinations = 0;
};

inline constexpr long long kMaxCombinations = 1000000;

/// Exhaustive search over piecewise-constant deterministic controls with
/// values in `lattice` on `blocks` equal time blocks. Every candidate is
/// scored by Monte Carlo under P on the same `paths` noise realizations.
GridSearchResult brute_force_small(const GridScenario& grid, int blocks, const std::vector<double>& lattice, int paths,
                                   std::uint64_t master, Exec exec = Exec::Parallel);

/// `points` evenly spaced values on [center - half_width, center + half_width].
std::vector<double> lattice_around(double center, double half_width, int points);

/// K x d control that is constant on each of `blocks` equal time blocks.
Matrix block_control(const Matrix& values, int steps);

struct DegenerateValue {
  double value = 0.0;
  std::string pattern;
};

/// Closed-form optimum for G = G1 = 0 (value 0) or B = 0 (u = 0 is optimal;
/// value from the uncontrolled Euler path). Empty when neither applies.
std::optional<DegenerateValue> analytic_degenerate(const GridScenario& grid);

nlohmann::json oracle_report(const std::string& scenario_hash, const std::string& oracle, double value,
                             nlohmann::json details);

}  // namespace polq
