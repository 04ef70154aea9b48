#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace polq {

/// Observation-path features at node i:
///   [1, Y_i - Y_{i-1}, ..., Y_i - Y_{i-lag}, (Y_i if level), (pairwise products if quadratic)]
/// Indices below 0 are clamped to 0, so every feature is a function of
/// Y_0..Y_i only.
struct BasisSpec {
  int lag = 1;
  bool level = false;
  bool quadratic = false;

  int linear_count(int d) const { return lag * d + (level ? d : 0); }
  int feature_count(int d) const {
    const int m = linear_count(d);
    return 1 + m + (quadratic ? m * (m + 1) / 2 : 0);
  }
  bool operator==(const BasisSpec&) const = default;
};

/// Writes the linear (non-constant, non-product) features into out[0..m).
void linear_features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i, double* out);
/// Full feature vector, length spec.feature_count(d).
void features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i, double* out);
Eigen::VectorXd features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i);

inline constexpr double kNoBudget = std::numeric_limits<double>::infinity();

/// F^Y-adapted feedback: u_i = coeffs[i]^T features(Y, i), followed by the
/// energy budget K_c (total int |u|^2 dt <= K_c^2).
struct PolicyRep {
  BasisSpec basis;
  int d = 1;
  std::vector<Eigen::MatrixXd> coeffs;  // one F x d matrix per step
  double Kc = kNoBudget;

  int steps() const { return static_cast<int>(coeffs.size()); }
  int feature_count() const { return basis.feature_count(d); }

  /// Output before the budget is applied.
  Eigen::VectorXd raw(int i, const Eigen::MatrixXd& Y) const;

  static PolicyRep zero(int steps, int d, BasisSpec basis = {}, double Kc = kNoBudget);
  /// Deterministic control: intercept-only policy reproducing u (K x d).
  static PolicyRep open_loop(const Eigen::MatrixXd& u, double Kc = kNoBudget);
};

/// Running-energy bookkeeping for one path.
struct BudgetState {
  double energy = 0.0;
  bool saturated = false;
  int tau_index = -1;  // node at which the budget was exhausted, -1 if never
};

/// Applies the budget to the raw control of step i in place. The crossing
/// step is scaled so the cumulative energy lands exactly on K_c^2.
void budget_step(double* u, int d, double dt, double Kc, int i, BudgetState& st);

struct BudgetResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd energy;  // K+1 running values
  double tau = 0.0;
  int tau_index = 0;  // node index of tau (K when the budget never binds)
};

BudgetResult apply_budget(const Eigen::MatrixXd& u, const std::vector<double>& dt, double Kc);

/// The same policy with budget n, i.e. u 1_{t < tau_n}.
PolicyRep truncate_external(const PolicyRep& policy, double n);

nlohmann::json policy_to_json(const PolicyRep& p);
PolicyRep policy_from_json(const nlohmann::json& j);

}  // namespace polq
