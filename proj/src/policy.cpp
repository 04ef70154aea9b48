#include "polq/policy.hpp"

#include <algorithm>
#include <cmath>

#include "polq/error.hpp"

namespace polq {

using nlohmann::json;

void linear_features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i, double* out) {
  const auto d = Y.cols();
  int k = 0;
  for (int j = 1; j <= spec.lag; ++j) {
    const int back = std::max(i - j, 0);
    for (Eigen::Index c = 0; c < d; ++c) out[k++] = Y(i, c) - Y(back, c);
  }
  if (spec.level)
    for (Eigen::Index c = 0; c < d; ++c) out[k++] = Y(i, c);
}

void features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i, double* out) {
  const int m = spec.linear_count(static_cast<int>(Y.cols()));
  out[0] = 1.0;
  linear_features(spec, Y, i, out + 1);
  if (spec.quadratic) {
    int k = 1 + m;
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b) out[k++] = out[1 + a] * out[1 + b];
  }
}

Eigen::VectorXd features(const BasisSpec& spec, const Eigen::MatrixXd& Y, int i) {
  Eigen::VectorXd f(spec.feature_count(static_cast<int>(Y.cols())));
  features(spec, Y, i, f.data());
  return f;
}

Eigen::VectorXd PolicyRep::raw(int i, const Eigen::MatrixXd& Y) const {
  return coeffs.at(static_cast<std::size_t>(i)).transpose() * features(basis, Y, i);
}

PolicyRep PolicyRep::zero(int steps, int d, BasisSpec basis, double Kc) {
  PolicyRep p;
  p.basis = basis;
  p.d = d;
  p.Kc = Kc;
  p.coeffs.assign(static_cast<std::size_t>(steps), Eigen::MatrixXd::Zero(basis.feature_count(d), d));
  return p;
}

PolicyRep PolicyRep::open_loop(const Eigen::MatrixXd& u, double Kc) {
  PolicyRep p = zero(static_cast<int>(u.rows()), static_cast<int>(u.cols()), BasisSpec{0, false, false}, Kc);
  for (Eigen::Index i = 0; i < u.rows(); ++i) p.coeffs[static_cast<std::size_t>(i)].row(0) = u.row(i);
  return p;
}

void budget_step(double* u, int d, double dt, double Kc, int i, BudgetState& st) {
  if (st.saturated) {
    std::fill(u, u + d, 0.0);
    return;
  }
  if (!std::isfinite(Kc)) {
    double e = 0.0;
    for (int c = 0; c < d; ++c) e += u[c] * u[c];
    st.energy += e * dt;
    return;
  }
  const double cap = Kc * Kc;
  double e = 0.0;
  for (int c = 0; c < d; ++c) e += u[c] * u[c];
  const double step = e * dt;
  // A relative slack keeps round-off in the running sum from turning an exact
  // landing on K_c^2 into a spurious extra crossing step.
  if (st.energy + step >= cap * (1.0 - 1e-12)) {
    const double room = std::max(cap - st.energy, 0.0);
    const double scale = step > 0.0 ? std::sqrt(room / step) : 0.0;
    for (int c = 0; c < d; ++c) u[c] *= scale;
    st.energy = cap;
    st.saturated = true;
    st.tau_index = i + 1;
    return;
  }
  st.energy += step;
}

BudgetResult apply_budget(const Eigen::MatrixXd& u, const std::vector<double>& dt, double Kc) {
  const auto K = u.rows();
  if (static_cast<std::size_t>(K) != dt.size()) throw Error(ErrorKind::DimensionMismatch, "control/grid length");
  BudgetResult r;
  r.u = u;
  r.energy = Eigen::VectorXd::Zero(K + 1);
  BudgetState st;
  const int d = static_cast<int>(u.cols());
  Eigen::VectorXd row(d);
  for (Eigen::Index i = 0; i < K; ++i) {
    row = u.row(i).transpose();
    budget_step(row.data(), d, dt[static_cast<std::size_t>(i)], Kc, static_cast<int>(i), st);
    r.u.row(i) = row.transpose();
    r.energy(i + 1) = st.energy;
  }
  double T = 0.0;
  for (double h : dt) T += h;
  r.tau_index = st.saturated ? st.tau_index : static_cast<int>(K);
  double tau = 0.0;
  for (int i = 0; i < r.tau_index; ++i) tau += dt[static_cast<std::size_t>(i)];
  r.tau = st.saturated ? tau : T;
  return r;
}

PolicyRep truncate_external(const PolicyRep& policy, double n) {
  if (!(n > 0.0)) throw Error(ErrorKind::NotPositive, "truncation budget must be positive");
  PolicyRep out = policy;
  out.Kc = std::min(policy.Kc, n);
  return out;
}

json policy_to_json(const PolicyRep& p) {
  json coeffs = json::array();
  for (const auto& c : p.coeffs) {
    json row = json::array();
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      for (Eigen::Index j = 0; j < c.cols(); ++j) row.push_back(c(i, j));
    coeffs.push_back(row);
  }
  json kc = std::isfinite(p.Kc) ? json(p.Kc) : json(nullptr);
  return json{{"basis_spec", {{"lag", p.basis.lag}, {"level", p.basis.level}, {"quadratic", p.basis.quadratic}}},
              {"d", p.d},
              {"K_c", kc},
              {"coeffs", coeffs}};
}

PolicyRep policy_from_json(const json& j) {
  try {
    PolicyRep p;
    const auto& b = j.at("basis_spec");
    p.basis.lag = b.at("lag").get<int>();
    p.basis.level = b.value("level", false);
    p.basis.quadratic = b.value("quadratic", false);
    p.d = j.at("d").get<int>();
    p.Kc = j.at("K_c").is_null() ? kNoBudget : j.at("K_c").get<double>();
    const int F = p.basis.feature_count(p.d);
    for (const auto& row : j.at("coeffs")) {
      if (static_cast<int>(row.size()) != F * p.d) throw Error(ErrorKind::DimensionMismatch, "policy coefficient size");
      Eigen::MatrixXd c(F, p.d);
      for (int a = 0; a < F; ++a)
        for (int k = 0; k < p.d; ++k) c(a, k) = row.at(static_cast<std::size_t>(a * p.d + k)).get<double>();
      p.coeffs.push_back(c);
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
}

}  // namespace polq
