#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "polq/policy.hpp"
#include "polq/rng.hpp"
#include "polq/scenario.hpp"

namespace polq {

enum class Measure { P, Q };
const char* to_string(Measure m) noexcept;

/// Fundamental solution of d zeta = -zeta A dt, zeta(0) = I, at the grid nodes.
struct ZetaPath {
  std::vector<Matrix> zeta;
  std::vector<Matrix> zeta_inv;
  double max_identity_error = 0.0;  // max_i ||zeta_i zeta_inv_i - I||
};

/// RK4 with `substeps` sub-intervals per grid step, A evaluated in continuous time.
ZetaPath solve_zeta(const GridScenario& grid, int substeps = 8);

/// Discrete propagator of the Euler recursion:
/// zeta_{i+1} = zeta_i (I + A_i dt_i)^{-1}, so that zeta_{i+1} X_{i+1} = zeta_i X_i + zeta_{i+1} (B u dt + C u dW).
ZetaPath euler_zeta(const GridScenario& grid);

struct PathBundle {
  Measure measure = Measure::P;
  std::uint64_t seed = 0;
  Matrix X;        // (K+1) x n
  Matrix Y;        // (K+1) x d
  Vector Z;        // K+1
  Vector N;        // K+1, N = 1/Z
  Matrix u;        // K x d, applied (post-budget)
  Vector energy;   // K+1 running int |u|^2 dt
  int tau_index = 0;  // node where the budget was exhausted, K if never
  bool saturated = false;
  Vector dW;       // K
  Matrix dV;       // K x d (W~ increments under P, dY under Q)

  int steps() const { return static_cast<int>(u.rows()); }
};

PathBundle simulate(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise, Measure m);
PathBundle simulate_under_P(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise);
PathBundle simulate_under_Q(const GridScenario& grid, const PolicyRep& policy, const NoiseBundle& noise);

enum class Exec { Serial, Parallel };

struct Ensemble {
  Measure measure = Measure::P;
  std::vector<PathBundle> paths;
};

/// Path k uses make_noise(grid, derive_seed(master, label, k)).
Ensemble simulate_ensemble(const GridScenario& grid, const PolicyRep& policy, Measure m, std::uint64_t master,
                           int count, std::string_view label = "paths", Exec exec = Exec::Parallel);

/// Reduced per-path record for large ensembles.
struct EnsembleSummary {
  Measure measure = Measure::P;
  Matrix N;  // count x (K+1)
  Matrix Z;  // count x (K+1)
  Vector cost;  // per-path cost in the measure's own representation
  Vector energy;
  std::vector<int> tau_index;
  std::vector<char> saturated;
};

EnsembleSummary summarize_ensemble(const GridScenario& grid, const PolicyRep& policy, Measure m,
                                   std::uint64_t master, int count, std::string_view label = "paths",
                                   Exec exec = Exec::Parallel);

/// Variation-of-constants state with left-endpoint sums:
/// X_i = zeta_i^{-1} [x + sum_{j<i} zeta_j (B_j u_j dt_j + C_j u_j dW_j)].
Matrix closed_form_state(const GridScenario& grid, const ZetaPath& zeta, const Matrix& u, const Vector& dW);

/// Left-endpoint cost of one path; with `weighted` every term carries Z.
double path_cost(const GridScenario& grid, const PathBundle& path, bool weighted);

struct CostEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n_paths = 0;
  Measure measure = Measure::P;
};

CostEstimate cost_under_P(const GridScenario& grid, const Ensemble& ens);
CostEstimate cost_under_Q(const GridScenario& grid, const Ensemble& ens);

/// One row per (path, node): path_id,t,X*,Y*,Z,N,u*,energy. The terminal node
/// carries u = 0.
void write_ensemble_csv(std::ostream& os, const GridScenario& grid, const Ensemble& ens);

}  // namespace polq
