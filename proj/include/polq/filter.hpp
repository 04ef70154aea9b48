#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "polq/pathsim.hpp"
#include "polq/policy.hpp"

namespace polq {

/// M observation paths drawn as Brownian motions under Q, each carrying L
/// inner particles with independent W noise. Particle (j, l) lives at index
/// j*L + l.
struct NestedEnsemble {
  int M = 0;
  int L = 0;
  std::uint64_t master_seed = 0;
  std::vector<PathBundle> particles;

  const PathBundle& at(int j, int l) const { return particles[static_cast<std::size_t>(j) * L + l]; }
  const Matrix& Y(int j) const { return at(j, 0).Y; }
  int size() const { return static_cast<int>(particles.size()); }
};

/// Documented footprint M*L*K*(n+d+4) doubles.
std::size_t nested_footprint_bytes(const GridScenario& grid, int M, int L);
inline constexpr std::size_t kDefaultMemoryBudget = std::size_t{2} << 30;

/// Outer path j draws its observation increments from derive_seed(master, "outer", j);
/// inner particle (j, l) draws dW from derive_seed(master, "inner", j*L + l).
NestedEnsemble build_nested(const GridScenario& grid, const PolicyRep& policy, int M, int L, std::uint64_t master,
                            Exec exec = Exec::Parallel, std::size_t memory_budget = kDefaultMemoryBudget);

/// Z-weighted path costs of the particles build_nested would produce, without
/// keeping the paths.
std::vector<double> nested_path_costs(const GridScenario& grid, const PolicyRep& policy, int M, int L,
                                      std::uint64_t master, Exec exec = Exec::Parallel);

using NodeFunctional = std::function<double(const PathBundle&, int)>;

struct CondExpectation {
  Vector values;   // M
  Vector stderrs;  // M, standard error of each inner average
};

/// Plain inner average for each outer path.
CondExpectation cond_expect(const NestedEnsemble& nested, const NodeFunctional& integrand, int node);

struct PolicyFit {
  PolicyRep policy;
  int rank_deficient_steps = 0;
};

/// Per-step ridge least squares of targets[i] (M x d) on the features of the
/// outer observation paths. weights[i] (length M) is optional.
PolicyFit fit_policy(const std::vector<Matrix>& Ys, const std::vector<Matrix>& targets, const BasisSpec& basis,
                     double ridge, double Kc, const std::vector<Vector>* weights = nullptr);
PolicyFit fit_policy(const NestedEnsemble& nested, const std::vector<Matrix>& targets, const BasisSpec& basis,
                     double ridge, double Kc, const std::vector<Vector>* weights = nullptr);

}  // namespace polq
