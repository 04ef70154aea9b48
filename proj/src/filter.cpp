#include "polq/filter.hpp"

#include <cmath>

#include "polq/error.hpp"
#include "polq/regression.hpp"
#include "polq/rng.hpp"

namespace polq {

std::size_t nested_footprint_bytes(const GridScenario& grid, int M, int L) {
  const auto per = static_cast<std::size_t>(grid.steps()) * static_cast<std::size_t>(grid.n() + grid.d() + 4);
  return static_cast<std::size_t>(M) * static_cast<std::size_t>(L) * per * sizeof(double);
}

namespace {

NoiseBundle particle_noise(const GridScenario& grid, const Matrix& dY, std::uint64_t master, int j, int l, int L) {
  NoiseBundle nb;
  nb.seed = derive_seed(master, "inner", static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(L) + l);
  nb.dW = gaussian_increments(grid.dt, 1, nb.seed).col(0);
  nb.dV = dY;
  return nb;
}

template <class Body>
void for_outer(int M, Exec exec, Body&& body) {
  if (exec == Exec::Serial) {
    for (int j = 0; j < M; ++j) body(j);
    return;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (int j = 0; j < M; ++j) {
    try {
      body(j);
    } catch (...) {
#pragma omp critical(polq_outer_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

void check_sizes(int M, int L) {
  if (M < 1 || L < 1) throw Error(ErrorKind::InvalidArgument, "nested ensemble needs M >= 1 and L >= 1");
}

}  // namespace

NestedEnsemble build_nested(const GridScenario& grid, const PolicyRep& policy, int M, int L, std::uint64_t master,
                            Exec exec, std::size_t memory_budget) {
  check_sizes(M, L);
  if (nested_footprint_bytes(grid, M, L) > memory_budget)
    throw Error(ErrorKind::MemoryBudgetExceeded, "nested ensemble of " + std::to_string(M) + "x" + std::to_string(L) +
                                                     " particles exceeds the memory budget");
  NestedEnsemble ne;
  ne.M = M;
  ne.L = L;
  ne.master_seed = master;
  ne.particles.resize(static_cast<std::size_t>(M) * static_cast<std::size_t>(L));
  for_outer(M, exec, [&](int j) {
    const Matrix dY = gaussian_increments(grid.dt, grid.d(), derive_seed(master, "outer", static_cast<std::uint64_t>(j)));
    for (int l = 0; l < L; ++l)
      ne.particles[static_cast<std::size_t>(j) * L + l] =
          simulate(grid, policy, particle_noise(grid, dY, master, j, l, L), Measure::Q);
  });
  return ne;
}

std::vector<double> nested_path_costs(const GridScenario& grid, const PolicyRep& policy, int M, int L,
                                      std::uint64_t master, Exec exec) {
  check_sizes(M, L);
  std::vector<double> out(static_cast<std::size_t>(M) * static_cast<std::size_t>(L));
  for_outer(M, exec, [&](int j) {
    const Matrix dY = gaussian_increments(grid.dt, grid.d(), derive_seed(master, "outer", static_cast<std::uint64_t>(j)));
    for (int l = 0; l < L; ++l) {
      const PathBundle b = simulate(grid, policy, particle_noise(grid, dY, master, j, l, L), Measure::Q);
      out[static_cast<std::size_t>(j) * L + l] = path_cost(grid, b, true);
    }
  });
  return out;
}

CondExpectation cond_expect(const NestedEnsemble& nested, const NodeFunctional& integrand, int node) {
  if (nested.particles.empty()) throw Error(ErrorKind::EmptyEnsemble, "empty nested ensemble");
  if (node < 0 || node > nested.particles.front().steps()) throw Error(ErrorKind::InvalidArgument, "node off the grid");
  CondExpectation ce;
  ce.values.resize(nested.M);
  ce.stderrs.resize(nested.M);
  std::vector<double> vals(static_cast<std::size_t>(nested.L));
  for (int j = 0; j < nested.M; ++j) {
    double s = 0.0;
    for (int l = 0; l < nested.L; ++l) {
      vals[static_cast<std::size_t>(l)] = integrand(nested.at(j, l), node);
      s += vals[static_cast<std::size_t>(l)];
    }
    const double mean = s / nested.L;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    ce.values(j) = mean;
    ce.stderrs(j) = nested.L > 1 ? std::sqrt(ss / (nested.L - 1) / nested.L) : 0.0;
  }
  return ce;
}

PolicyFit fit_policy(const std::vector<Matrix>& Ys, const std::vector<Matrix>& targets, const BasisSpec& basis,
                     double ridge, double Kc, const std::vector<Vector>* weights) {
  if (Ys.empty()) throw Error(ErrorKind::EmptyEnsemble, "no observation paths to fit on");
  const int M = static_cast<int>(Ys.size());
  const int d = static_cast<int>(Ys.front().cols());
  const int K = static_cast<int>(targets.size());
  if (K < 1 || Ys.front().rows() != K + 1) throw Error(ErrorKind::DimensionMismatch, "targets do not match the grid");
  if (weights && static_cast<int>(weights->size()) != K) throw Error(ErrorKind::DimensionMismatch, "weights per step");
  const int F = basis.feature_count(d);
  PolicyFit out;
  out.policy = PolicyRep::zero(K, d, basis, Kc);
  Matrix design(M, F);
  for (int i = 0; i < K; ++i) {
    const Matrix& t = targets[static_cast<std::size_t>(i)];
    if (t.rows() != M || t.cols() != d) throw Error(ErrorKind::DimensionMismatch, "target block shape");
    if (!t.allFinite()) throw Error(ErrorKind::RegressionFailure, "nonfinite control target");
    for (int j = 0; j < M; ++j) {
      Vector f = features(basis, Ys[static_cast<std::size_t>(j)], i);
      design.row(j) = f.transpose();
    }
    const Vector* w = weights ? &(*weights)[static_cast<std::size_t>(i)] : nullptr;
    if (w && !(w->sum() > 0.0)) continue;  // no informative path at this step: keep zero
    const RidgeFit fit = ridge_fit(design, t, w, ridge);
    if (fit.rank_deficient) ++out.rank_deficient_steps;
    out.policy.coeffs[static_cast<std::size_t>(i)] = fit.coef;
  }
  return out;
}

PolicyFit fit_policy(const NestedEnsemble& nested, const std::vector<Matrix>& targets, const BasisSpec& basis,
                     double ridge, double Kc, const std::vector<Vector>* weights) {
  std::vector<Matrix> Ys;
  Ys.reserve(static_cast<std::size_t>(nested.M));
  for (int j = 0; j < nested.M; ++j) Ys.push_back(nested.Y(j));
  return fit_policy(Ys, targets, basis, ridge, Kc, weights);
}

}  // namespace polq
