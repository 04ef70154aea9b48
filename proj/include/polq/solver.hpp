#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "polq/adjoint.hpp"
#include "polq/error.hpp"
#include "polq/filter.hpp"
#include "polq/pathsim.hpp"
#include "polq/policy.hpp"

namespace polq {

inline constexpr double kMinTheta = 1.0 / 64.0;

struct SolveConfig {
  int M = 200;              // outer observation paths
  int L = 20;               // inner particles per outer path
  int p_paths = 4000;       // P-ensemble for the scalar adjoint
  int eval_paths = 20000;   // independent P-ensemble for the reported cost
  BasisSpec basis{1, true, false};
  double Kc = kNoBudget;
  double theta = 0.5;
  int max_iter = 60;
  double tol = 1e-2;
  double ridge = kDefaultRidge;
  int blocks = 4;
  std::uint64_t seed = 42;
  Exec exec = Exec::Parallel;
  double residual_bound = std::numeric_limits<double>::infinity();

  void validate() const;
};

nlohmann::json config_to_json(const SolveConfig& c);

/// Control targets of the stationarity formula, per outer path and step.
struct CandidateTargets {
  std::vector<Matrix> u;       // K, M x d
  std::vector<Vector> zhat;    // K, M: inner average of Z_i
  std::vector<Vector> weight;  // K, M: zhat before saturation, 0 after
};

/// u = -1/2 (Zhat R)^{-1} avg_inner(B^T P_ahead + C^T Q1) before the outer
/// path's budget is exhausted, 0 afterwards.
CandidateTargets candidate_control(const GridScenario& grid, const NestedEnsemble& nested, const AdjointPaths& adj);

/// Perturbation direction: feature `feature` of the policy basis on control
/// component `component`, active on steps [first, last).
struct Direction {
  int block = 0;
  int feature = 0;
  int component = 0;
  int first = 0;
  int last = 0;
  std::string id() const;
};

std::vector<Direction> basis_directions(int steps, int features, int d, int blocks);

struct VariationReport {
  std::string direction;
  double norm = 0.0;  // L2(Q x dt) norm of the raw direction; reported derivatives are per unit norm
  double adjoint_derivative = 0.0;
  double adjoint_se = 0.0;
  double fd_derivative = std::numeric_limits<double>::quiet_NaN();
  double fd_se = std::numeric_limits<double>::quiet_NaN();
  double epsilon_fd = 0.0;
  std::vector<double> fd_by_epsilon;
  std::vector<double> fd_se_by_epsilon;
  double richardson = std::numeric_limits<double>::quiet_NaN();
  bool noise_dominated = false;
  double masked_fraction = 0.0;  // share of outer paths where v was cut by saturation
};

nlohmann::json variation_to_json(const VariationReport& r);

/// L2(Q x dt) norm of the direction over the outer observation paths.
double direction_norm(const GridScenario& grid, const PolicyRep& policy, const Direction& v, const NestedEnsemble& nested);

/// Adjoint side: E^Q sum_i <2 Z R u + B^T P_ahead + C^T Q1, v_i> dt per unit-norm v,
/// with stderr clustered by outer path.
VariationReport variational_derivative(const GridScenario& grid, const PolicyRep& policy, const Direction& v,
                                       const NestedEnsemble& nested, const AdjointPaths& adj);

/// Policy with coefficient (feature, component) shifted by `amount` on the direction's steps.
PolicyRep perturb(const PolicyRep& policy, const Direction& v, double amount);

/// Central differences (J(u+eps v) - J(u-eps v)) / (2 eps) under Q on the nested
/// noise of `master` (common random numbers), per unit-norm v.
/// With `strict`, NoiseDominated is raised when the stderr exceeds |estimate| for every eps.
VariationReport gateaux_fd(const GridScenario& grid, const PolicyRep& policy, const Direction& v, double norm,
                           const std::vector<double>& eps_list, int M, int L, std::uint64_t master,
                           bool strict = false, Exec exec = Exec::Parallel);

struct TauStats {
  double saturation_fraction = 0.0;
  double mean_tau = 0.0;
  double min_tau = 0.0;
  std::vector<int> histogram;  // 10 equal bins on [0, T]
};

TauStats tau_stats(const GridScenario& grid, const std::vector<int>& tau_index, const std::vector<char>& saturated);

struct SolveResult {
  PolicyRep policy;
  std::vector<CostEstimate> cost_history;  // Q-cost on the nested sample
  std::vector<double> grad_norm_history;
  std::vector<double> theta_history;  // damping applied after each iteration
  std::vector<VariationReport> certificate;  // adjoint derivatives at the returned policy
  int skipped_directions = 0;
  TauStats tau;
  bool converged = false;
  int iterations = 0;
  CostEstimate final_cost;     // independent P-ensemble
  double control_norm = 0.0;   // sqrt(E sum |u|^2 dt) on that ensemble
  double residual_P = 0.0;
  double residual_p = 0.0;
  int rank_deficient_fits = 0;
  std::string status;
};

nlohmann::json solve_result_to_json(const SolveResult& r);

class SolveDiverged : public Error {
 public:
  SolveDiverged(const std::string& msg, SolveResult partial)
      : Error(ErrorKind::Diverged, msg), partial_(std::move(partial)) {}
  const SolveResult& partial() const { return partial_; }

 private:
  SolveResult partial_;
};

/// Damped fixed-point iteration on the stationarity formula. All ensembles use
/// noise fixed across iterations. The damping starts at config.theta and is
/// halved (down to kMinTheta) whenever two successive steps have negative
/// inner product in coefficient space.
SolveResult picard_solve(const GridScenario& grid, const SolveConfig& config, const PolicyRep* initial = nullptr);

/// Quantities of one linearization, exposed for tests and the gradient suite.
struct Linearization {
  NestedEnsemble nested;
  PAdjoint pside;
  AdjointPaths adj;
};

Linearization linearize(const GridScenario& grid, const PolicyRep& policy, const SolveConfig& config);

struct LadderResult {
  std::vector<double> budgets;
  std::vector<CostEstimate> costs;
  std::vector<SolveResult> solves;
  double chosen_n = 0.0;
  double epsilon = 0.0;
  double riccati_value = std::numeric_limits<double>::quiet_NaN();
};

/// Smallest budget whose cost is within epsilon/2 of the minimum over the table.
double choose_budget(const std::vector<double>& budgets, const std::vector<double>& costs, double epsilon);

LadderResult ladder_run(const GridScenario& grid, const std::vector<double>& budgets, double epsilon,
                        const SolveConfig& config);

}  // namespace polq
