#include <doctest.h>

#include <cmath>
#include <limits>

#include "polq/error.hpp"
#include "polq/oracle.hpp"
#include "support.hpp"

using namespace polq;
using polq::test::grid_of;
using polq::test::scalar;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("Riccati value without weights is zero") {
  CHECK(riccati_full_info(grid_of(scalar(0.5, 1, 0.5, 1, 0, 1, 0))).value == 0.0);
}

TEST_CASE("Riccati without control reduces to the Lyapunov equation") {
  const double a = 0.4, g = 1.3, g1 = 0.7, x = 1.5;
  const RiccatiSolution s = riccati_full_info(grid_of(scalar(a, 0, 0.2, 1, g, 1, g1, x)));
  const double e = std::exp(2.0 * a);
  CHECK(s.value == doctest::Approx(x * x * (g1 * e + g * (e - 1.0) / (2.0 * a))).epsilon(1e-9));
  CHECK(s.Sigma.back()(0, 0) == g1);
}

TEST_CASE("Riccati with pure control cost") {
  const GridScenario grid = test::shipped("riccati_b1");
  const RiccatiSolution s = riccati_full_info(grid);
  CHECK(s.value == doctest::Approx(0.5).epsilon(1e-10));
  for (std::size_t i = 0; i < grid.t.size(); ++i)
    CHECK(s.Sigma[i](0, 0) == doctest::Approx(1.0 / (2.0 - grid.t[i])).epsilon(1e-9));
}

TEST_CASE("deterministic gradient matches central differences") {
  const GridScenario g = test::shipped("brute_h0", 10);
  Matrix u(10, 1);
  for (int i = 0; i < 10; ++i) u(i, 0) = 0.1 * i - 0.4;
  const Matrix grad = deterministic_gradient(g, u);
  for (int i = 0; i < 10; ++i) {
    Matrix up = u, um = u;
    up(i, 0) += 1e-3;
    um(i, 0) -= 1e-3;
    CHECK(grad(i, 0) == doctest::Approx((deterministic_cost(g, up) - deterministic_cost(g, um)) / 2e-3).epsilon(1e-6));
  }
}

TEST_CASE("deterministic optimum") {
  SUBCASE("no weights") {
    const PontryaginResult r = deterministic_pontryagin(grid_of(scalar(0.5, 1, 0.5, 0, 0, 1, 0)));
    CHECK(r.value == 0.0);
    CHECK(r.u.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("stationary and above the full-information value") {
    const GridScenario g = test::shipped("h0_control");
    const PontryaginResult r = deterministic_pontryagin(g);
    CHECK(r.grad_norm < 1e-8);
    CHECK(deterministic_gradient(g, r.u).norm() < 1e-8);
    CHECK(r.value >= riccati_full_info(g).value);
    CHECK(r.value < deterministic_cost(g, Matrix::Zero(g.steps(), 1)));
  }
  SUBCASE("requires an uninformative observation") {
    CHECK(kind_of([] { deterministic_pontryagin(test::shipped("scalar_h1")); }) == ErrorKind::InvalidArgument);
  }
}

TEST_CASE("grid search") {
  const GridScenario g = test::shipped("brute_h0");
  SUBCASE("single lattice point is the uncontrolled Monte-Carlo cost") {
    const GridSearchResult r = brute_force_small(g, 2, {0.0}, 500, 9);
    const Ensemble e = simulate_ensemble(g, PolicyRep::zero(g.steps(), 1), Measure::P, 9, 500, "brute");
    const CostEstimate c = cost_under_P(g, e);
    CHECK(r.combinations == 1);
    CHECK(r.best_value.mean == doctest::Approx(c.mean).epsilon(1e-12));
    CHECK(r.best_value.se == doctest::Approx(c.se).epsilon(1e-9));
  }
  SUBCASE("quadratic form reproduces direct simulation") {
    const GridSearchResult r = brute_force_small(g, 2, {-0.9, -0.4, 0.3}, 400, 5);
    CHECK(r.combinations == 9);
    const PolicyRep pol = PolicyRep::open_loop(block_control(r.best_control, g.steps()));
    const CostEstimate c = cost_under_P(g, simulate_ensemble(g, pol, Measure::P, 5, 400, "brute"));
    CHECK(r.best_value.mean == doctest::Approx(c.mean).epsilon(1e-10));
    for (double a : {-0.9, -0.4, 0.3})
      for (double b : {-0.9, -0.4, 0.3}) {
        Matrix v(2, 1);
        v << a, b;
        const CostEstimate ci =
            cost_under_P(g, simulate_ensemble(g, PolicyRep::open_loop(block_control(v, g.steps())), Measure::P, 5, 400, "brute"));
        CHECK(r.best_value.mean <= ci.mean + 1e-10);
      }
  }
  SUBCASE("no weights selects zero") {
    const GridSearchResult r = brute_force_small(grid_of(scalar(0.5, 1, 0.5, 0, 0, 1, 0)), 2, {-1, 0, 1}, 200, 3);
    CHECK(r.best_control.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.best_value.mean == 0.0);
  }
  SUBCASE("combinatorial cap") {
    CHECK(kind_of([&] { brute_force_small(test::shipped("brute_h0", 14), 7, lattice_around(0, 1, 21), 10, 1); }) ==
          ErrorKind::CombinatorialBudgetExceeded);
  }
}

TEST_CASE("lattice and block helpers") {
  const std::vector<double> l = lattice_around(1.0, 0.5, 3);
  REQUIRE(l.size() == 3);
  CHECK(l[0] == doctest::Approx(0.5));
  CHECK(l[1] == doctest::Approx(1.0));
  CHECK(l[2] == doctest::Approx(1.5));
  Matrix v(2, 1);
  v << 1.0, 2.0;
  const Matrix u = block_control(v, 4);
  CHECK(u.rows() == 4);
  CHECK(u(0, 0) == 1.0);
  CHECK(u(1, 0) == 1.0);
  CHECK(u(2, 0) == 2.0);
  CHECK(u(3, 0) == 2.0);
}

TEST_CASE("closed-form degenerate cases") {
  const double g = 1.3, g1 = 0.6, x = 1.4;
  const auto b0 = analytic_degenerate(grid_of(scalar(0, 0, 0.3, 1, g, 1, g1, x)));
  REQUIRE(b0.has_value());
  CHECK(b0->value == doctest::Approx(x * x * (g + g1)).epsilon(1e-12));
  const auto none = analytic_degenerate(grid_of(scalar(0.5, 1, 0.5, 1, 0, 1, 0)));
  REQUIRE(none.has_value());
  CHECK(none->value == 0.0);
  CHECK_FALSE(analytic_degenerate(test::shipped("scalar_h1")).has_value());
}

TEST_CASE("oracle report") {
  const nlohmann::json r = oracle_report("abc", "riccati", 0.5, {{"k", 1}});
  CHECK(r["scenario_hash"] == "abc");
  CHECK(r["oracle"] == "riccati");
  CHECK(r["value"].get<double>() == 0.5);
  CHECK(oracle_report("abc", "x", std::numeric_limits<double>::quiet_NaN(), {})["value"].is_null());
}
