#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "polq/policy.hpp"
#include "polq/rng.hpp"
#include "polq/scenario.hpp"

namespace polq::test {

inline std::filesystem::path scenario_path(const std::string& name) {
  return std::filesystem::path(POLQ_SCENARIO_DIR) / (name + ".json");
}

inline GridScenario shipped(const std::string& name, int steps = 0) {
  const ValidatedScenario vs = validate_scenario(load_scenario(scenario_path(name)));
  return steps > 0 ? discretize(vs, steps) : discretize(vs);
}

/// Scalar scenario with constant coefficients.
inline Scenario scalar(double A, double B, double C, double H, double G, double R, double G1, double x = 1.0,
                       double T = 1.0, int steps = 50, double delta = 0.5) {
  auto c = [](double v) { return Coefficient::constant(Matrix::Constant(1, 1, v)); };
  Scenario s;
  s.n = s.d = 1;
  s.T = T;
  s.x = Vector::Constant(1, x);
  s.delta = delta;
  s.steps = steps;
  s.A = c(A);
  s.B = c(B);
  s.C = c(C);
  s.H = c(H);
  s.G = c(G);
  s.R = c(R);
  s.G1 = Matrix::Constant(1, 1, G1);
  return s;
}

inline GridScenario grid_of(const Scenario& s, int steps = 0) {
  const ValidatedScenario vs = validate_scenario(s);
  return steps > 0 ? discretize(vs, steps) : discretize(vs);
}

/// Policy with independent N(0, scale^2) coefficients.
inline PolicyRep random_policy(int steps, int d, const BasisSpec& basis, double scale, std::uint64_t seed,
                               double Kc = kNoBudget) {
  PolicyRep p = PolicyRep::zero(steps, d, basis, Kc);
  std::mt19937_64 gen(derive_seed(seed, "test_policy", 0));
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& c : p.coeffs)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = normal(gen);
  return p;
}

}  // namespace polq::test
