#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace polq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Deterministic, bounded matrix-valued function of time. Three families are
/// supported: constant, piecewise-constant (right-continuous breakpoints) and
/// polynomial M0 + M1 t + M2 t^2 + ...
class Coefficient {
 public:
  struct Breakpoint {
    double t;
    Matrix value;
  };

  Coefficient() = default;

  static Coefficient constant(Matrix value);
  static Coefficient piecewise(std::vector<Breakpoint> breakpoints);
  static Coefficient polynomial(std::vector<Matrix> terms);

  Matrix operator()(double t) const;

  Eigen::Index rows() const;
  Eigen::Index cols() const;

  // True when the function is identically zero on every t.
  bool is_zero() const;
  bool is_constant() const;
  // Times at which the function may jump (empty unless piecewise).
  std::vector<double> jump_times() const;

  nlohmann::json to_json() const;

 private:
  struct Constant {
    Matrix value;
  };
  struct Piecewise {
    std::vector<Breakpoint> breakpoints;
  };
  struct Polynomial {
    std::vector<Matrix> terms;
  };
  std::variant<Constant, Piecewise, Polynomial> repr_;
};

/// Problem data of the partially observed LQ problem.
///
///   dX = (A X + B u) dt + C u dW,  X(0) = x
///   dY = H X dt + dW~,             Y(0) = 0
///   J  = E[ int (X'GX + u'Ru) dt + X(T)'G1 X(T) ]
///
/// W is scalar, W~ is d-dimensional, u and Y are d-dimensional.
struct Scenario {
  int n = 1;
  int d = 1;
  double T = 1.0;
  Vector x;
  double delta = 1.0;
  int steps = 50;
  Coefficient A, B, C, H, G, R;
  Matrix G1;
};

struct ValidationCertificate {
  double min_eig_R_minus_delta = 0.0;
  double min_eig_G = 0.0;
  double min_eig_G1 = 0.0;
  int samples = 0;
};

// A Scenario that passed validate_scenario. Only constructible through it.
class ValidatedScenario {
 public:
  const Scenario& scenario() const { return scenario_; }
  const ValidationCertificate& certificate() const { return certificate_; }

 private:
  friend ValidatedScenario validate_scenario(Scenario raw);
  ValidatedScenario(Scenario s, ValidationCertificate c)
      : scenario_(std::move(s)), certificate_(c) {}
  Scenario scenario_;
  ValidationCertificate certificate_;
};

inline constexpr double kPsdTolerance = 1e-10;

/// Checks shapes, finiteness, G >= 0, G1 >= 0 and R >= delta I on a sample
/// grid of max(steps, 100) intervals plus all breakpoints.
ValidatedScenario validate_scenario(Scenario raw);

/// Uniform time grid with coefficients sampled at left endpoints.
struct GridScenario {
  Scenario base;
  std::vector<double> t;   // K+1 nodes, t[0] = 0, t[K] = T
  std::vector<double> dt;  // K steps
  // One sample per step, taken at t[i].
  std::vector<Matrix> A, B, C, H, G, R;

  int steps() const { return static_cast<int>(dt.size()); }
  int n() const { return base.n; }
  int d() const { return base.d; }
  const Vector& x() const { return base.x; }
  const Matrix& G1() const { return base.G1; }
  double T() const { return base.T; }
};

GridScenario discretize(const ValidatedScenario& sc, int steps);
GridScenario discretize(const ValidatedScenario& sc);

/// Re-checks the sampled tables of a grid against the scenario invariants.
ValidationCertificate validate_grid(const GridScenario& grid);

Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json scenario_to_json(const Scenario& sc);
Scenario load_scenario(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON dump of the scenario, as 16 hex digits.
std::string scenario_hash(const Scenario& sc);

}  // namespace polq
