#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polq/filter.hpp"
#include "polq/pathsim.hpp"

namespace polq {

struct Diagnostic {
  std::string name;
  std::vector<double> checkpoints;
  std::vector<double> estimates;
  std::vector<double> stderrs;
  std::vector<double> reference;  // comparison values when the rule has them (bounds, second estimator)
  bool pass = false;
  std::string rule;
  nlohmann::json details = nlohmann::json::object();
};

nlohmann::json diagnostic_to_json(const Diagnostic& d);

enum class DensityProcess { NUnderP, ZUnderQ };

/// Nodes K/4, K/2, 3K/4, K (deduplicated, at least node 1).
std::vector<int> default_checkpoints(int K);

/// Mean and stderr of the density at each checkpoint node; pass iff
/// |mean - 1| <= 3 stderr everywhere.
Diagnostic martingale_diagnostic(const GridScenario& grid, const EnsembleSummary& ens, DensityProcess process,
                                 const std::vector<int>& checkpoints);

struct MomentProbe {
  double k = 0.0;
  std::vector<int> sample_sizes;
  std::vector<double> estimates;
  std::vector<double> stderrs;
  bool stable = false;               // top two sizes within 20%
  double max_relative_change = 0.0;  // over all consecutive sizes
};

/// E^Q[Z(T)^{1+k}] on independent Q ensembles of each size.
MomentProbe moment_probe(const GridScenario& grid, const PolicyRep& policy, double k, const std::vector<int>& sizes,
                         std::uint64_t master, Exec exec = Exec::Parallel);

struct StateBound {
  double sup_x = 0.0;
  double bound = 0.0;
  double zeta_inv_norm = 0.0;
  double zeta_b_norm = 0.0;
  double sup_m = 0.0;
};

/// Three-term decomposition bound for one path under P, from the discrete
/// propagator of the Euler recursion.
StateBound state_bound(const GridScenario& grid, const ZetaPath& euler, const PathBundle& path, double Kc);

/// Every policy on every noise realization; all policies must share K_c.
Diagnostic state_bound_check(const GridScenario& grid, const std::vector<PolicyRep>& policies,
                             const std::vector<NoiseBundle>& noises);

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

/// Exact law of X at `node` under P given Y_0..Y_node for the Euler model with
/// the controls u (K x d) known along the observation path.
GaussianPosterior kalman_posterior(const GridScenario& grid, const Matrix& Y, const Matrix& u, int node);

using StateFunction = std::function<double(const Vector&)>;

/// Compares the Z-weighted inner average under Q with an estimate from
/// particles drawn from the exact P-posterior, per outer path.
Diagnostic ks_consistency(const GridScenario& grid, const NestedEnsemble& nested, const StateFunction& phi, int node,
                          int p_particles, std::uint64_t master);

}  // namespace polq
