#include "polq/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "polq/error.hpp"

namespace polq {

using nlohmann::json;

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

double min_sym_eig(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_symmetric(const Matrix& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

void require_shape(const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
  if (m.rows() != r || m.cols() != c) {
    std::ostringstream os;
    os << name << " has shape " << m.rows() << "x" << m.cols() << ", expected " << r << "x" << c;
    throw Error(ErrorKind::DimensionMismatch, os.str());
  }
}

}  // namespace

Coefficient Coefficient::constant(Matrix value) {
  Coefficient c;
  c.repr_ = Constant{std::move(value)};
  return c;
}

Coefficient Coefficient::piecewise(std::vector<Breakpoint> breakpoints) {
  if (breakpoints.empty()) throw Error(ErrorKind::InvalidArgument, "piecewise coefficient without breakpoints");
  std::stable_sort(breakpoints.begin(), breakpoints.end(),
                   [](const Breakpoint& a, const Breakpoint& b) { return a.t < b.t; });
  for (std::size_t k = 1; k < breakpoints.size(); ++k) {
    if (breakpoints[k].value.rows() != breakpoints[0].value.rows() ||
        breakpoints[k].value.cols() != breakpoints[0].value.cols())
      throw Error(ErrorKind::DimensionMismatch, "piecewise breakpoints disagree in shape");
    if (breakpoints[k].t == breakpoints[k - 1].t)
      throw Error(ErrorKind::InvalidArgument, "duplicate breakpoint time");
  }
  Coefficient c;
  c.repr_ = Piecewise{std::move(breakpoints)};
  return c;
}

Coefficient Coefficient::polynomial(std::vector<Matrix> terms) {
  if (terms.empty()) throw Error(ErrorKind::InvalidArgument, "polynomial coefficient without terms");
  for (const auto& m : terms)
    if (m.rows() != terms[0].rows() || m.cols() != terms[0].cols())
      throw Error(ErrorKind::DimensionMismatch, "polynomial terms disagree in shape");
  Coefficient c;
  c.repr_ = Polynomial{std::move(terms)};
  return c;
}

Matrix Coefficient::operator()(double t) const {
  if (const auto* c = std::get_if<Constant>(&repr_)) return c->value;
  if (const auto* p = std::get_if<Piecewise>(&repr_)) {
    // Right-continuous: the last breakpoint at or before t wins.
    const Breakpoint* chosen = &p->breakpoints.front();
    for (const auto& b : p->breakpoints) {
      if (b.t <= t) chosen = &b;
      else break;
    }
    return chosen->value;
  }
  const auto& terms = std::get<Polynomial>(repr_).terms;
  Matrix acc = terms.back();
  for (std::size_t k = terms.size() - 1; k-- > 0;) acc = acc * t + terms[k];
  return acc;
}

Eigen::Index Coefficient::rows() const {
  return std::visit(
      [](const auto& r) -> Eigen::Index {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Constant>) return r.value.rows();
        else if constexpr (std::is_same_v<T, Piecewise>) return r.breakpoints.front().value.rows();
        else return r.terms.front().rows();
      },
      repr_);
}

Eigen::Index Coefficient::cols() const {
  return std::visit(
      [](const auto& r) -> Eigen::Index {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Constant>) return r.value.cols();
        else if constexpr (std::is_same_v<T, Piecewise>) return r.breakpoints.front().value.cols();
        else return r.terms.front().cols();
      },
      repr_);
}

bool Coefficient::is_zero() const {
  if (const auto* c = std::get_if<Constant>(&repr_)) return c->value.isZero(0.0);
  if (const auto* p = std::get_if<Piecewise>(&repr_)) {
    for (const auto& b : p->breakpoints)
      if (!b.value.isZero(0.0)) return false;
    return true;
  }
  for (const auto& m : std::get<Polynomial>(repr_).terms)
    if (!m.isZero(0.0)) return false;
  return true;
}

bool Coefficient::is_constant() const {
  if (std::holds_alternative<Constant>(repr_)) return true;
  if (const auto* p = std::get_if<Piecewise>(&repr_)) {
    for (const auto& b : p->breakpoints)
      if (b.value != p->breakpoints.front().value) return false;
    return true;
  }
  const auto& terms = std::get<Polynomial>(repr_).terms;
  for (std::size_t k = 1; k < terms.size(); ++k)
    if (!terms[k].isZero(0.0)) return false;
  return true;
}

std::vector<double> Coefficient::jump_times() const {
  std::vector<double> out;
  if (const auto* p = std::get_if<Piecewise>(&repr_))
    for (const auto& b : p->breakpoints) out.push_back(b.t);
  return out;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  return arr;
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (!j.is_array()) throw Error(ErrorKind::ParseError, name + ": expected a flat array");
  // Nested row lists are accepted too, flattened row by row.
  std::vector<double> flat;
  for (const auto& e : j) {
    if (e.is_array()) {
      for (const auto& v : e) {
        if (!v.is_number()) throw Error(ErrorKind::ParseError, name + ": non-numeric entry");
        flat.push_back(v.get<double>());
      }
    } else if (e.is_number()) {
      flat.push_back(e.get<double>());
    } else if (e.is_null()) {
      flat.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      throw Error(ErrorKind::ParseError, name + ": non-numeric entry");
    }
  }
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    std::ostringstream os;
    os << name << ": " << flat.size() << " entries, expected " << rows * cols;
    throw Error(ErrorKind::DimensionMismatch, os.str());
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = flat[static_cast<std::size_t>(i * cols + c)];
  return m;
}

bool is_matrix_literal(const json& j) {
  if (!j.is_array() || j.empty()) return false;
  return j.front().is_number() || j.front().is_array() || j.front().is_null();
}

Coefficient coefficient_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                  const std::string& name) {
  if (j.is_number()) {
    if (rows * cols != 1) throw Error(ErrorKind::DimensionMismatch, name + ": scalar given for a matrix");
    return Coefficient::constant(Matrix::Constant(1, 1, j.get<double>()));
  }
  if (j.is_object()) {
    if (!j.contains("poly")) throw Error(ErrorKind::ParseError, name + ": object coefficient needs 'poly'");
    std::vector<Matrix> terms;
    for (const auto& t : j.at("poly")) terms.push_back(matrix_from_json(t, rows, cols, name));
    return Coefficient::polynomial(std::move(terms));
  }
  if (is_matrix_literal(j)) return Coefficient::constant(matrix_from_json(j, rows, cols, name));
  if (j.is_array()) {
    std::vector<Coefficient::Breakpoint> bps;
    for (const auto& b : j) {
      if (!b.is_object() || !b.contains("t") || !b.contains("matrix"))
        throw Error(ErrorKind::ParseError, name + ": breakpoint needs {t, matrix}");
      bps.push_back({b.at("t").get<double>(), matrix_from_json(b.at("matrix"), rows, cols, name)});
    }
    return Coefficient::piecewise(std::move(bps));
  }
  throw Error(ErrorKind::ParseError, name + ": unrecognized coefficient form");
}

}  // namespace

json Coefficient::to_json() const {
  if (const auto* c = std::get_if<Constant>(&repr_)) return matrix_to_json(c->value);
  if (const auto* p = std::get_if<Piecewise>(&repr_)) {
    json arr = json::array();
    for (const auto& b : p->breakpoints) arr.push_back({{"t", b.t}, {"matrix", matrix_to_json(b.value)}});
    return arr;
  }
  json terms = json::array();
  for (const auto& m : std::get<Polynomial>(repr_).terms) terms.push_back(matrix_to_json(m));
  return json{{"poly", terms}};
}

ValidatedScenario validate_scenario(Scenario raw) {
  const int n = raw.n, d = raw.d;
  if (n < 1 || d < 1) throw Error(ErrorKind::DimensionMismatch, "n and d must be at least 1");
  if (!(raw.T > 0.0) || !std::isfinite(raw.T)) throw Error(ErrorKind::NotPositive, "horizon T must be positive");
  if (!(raw.delta > 0.0) || !std::isfinite(raw.delta))
    throw Error(ErrorKind::NotPositive, "delta must be positive");
  if (raw.steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be at least 1");
  if (raw.x.size() != n) throw Error(ErrorKind::DimensionMismatch, "x must have n entries");
  if (!raw.x.allFinite()) throw Error(ErrorKind::NonfiniteEntry, "x has a nonfinite entry");

  require_shape(Matrix(raw.A(0.0)), n, n, "A");
  require_shape(Matrix(raw.B(0.0)), n, d, "B");
  require_shape(Matrix(raw.C(0.0)), n, d, "C");
  require_shape(Matrix(raw.H(0.0)), d, n, "H");
  require_shape(Matrix(raw.G(0.0)), n, n, "G");
  require_shape(Matrix(raw.R(0.0)), d, d, "R");
  require_shape(raw.G1, n, n, "G1");

  std::vector<double> ts;
  const int samples = std::max(raw.steps, 100);
  for (int i = 0; i <= samples; ++i) ts.push_back(raw.T * i / samples);
  for (const Coefficient* c : {&raw.A, &raw.B, &raw.C, &raw.H, &raw.G, &raw.R})
    for (double t : c->jump_times())
      if (t >= 0.0 && t <= raw.T) ts.push_back(t);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  ValidationCertificate cert;
  cert.min_eig_R_minus_delta = std::numeric_limits<double>::infinity();
  cert.min_eig_G = std::numeric_limits<double>::infinity();
  cert.samples = static_cast<int>(ts.size());

  const char* names[] = {"A", "B", "C", "H", "G", "R"};
  const Coefficient* coeffs[] = {&raw.A, &raw.B, &raw.C, &raw.H, &raw.G, &raw.R};
  for (double t : ts) {
    for (int k = 0; k < 6; ++k) {
      if (!all_finite((*coeffs[k])(t)))
        throw Error(ErrorKind::NonfiniteEntry, std::string(names[k]) + " has a nonfinite entry");
    }
    const Matrix g = raw.G(t), r = raw.R(t);
    if (!is_symmetric(g)) throw Error(ErrorKind::NotPositive, "G is not symmetric");
    if (!is_symmetric(r)) throw Error(ErrorKind::NotPositive, "R is not symmetric");
    cert.min_eig_G = std::min(cert.min_eig_G, min_sym_eig(g));
    cert.min_eig_R_minus_delta =
        std::min(cert.min_eig_R_minus_delta, min_sym_eig(r - raw.delta * Matrix::Identity(d, d)));
  }
  if (!all_finite(raw.G1)) throw Error(ErrorKind::NonfiniteEntry, "G1 has a nonfinite entry");
  if (!is_symmetric(raw.G1)) throw Error(ErrorKind::NotPositive, "G1 is not symmetric");
  cert.min_eig_G1 = min_sym_eig(raw.G1);

  auto reject = [](const char* what, double v) {
    std::ostringstream os;
    os << what << " (min eigenvalue " << v << ")";
    throw Error(ErrorKind::NotPositive, os.str());
  };
  if (cert.min_eig_R_minus_delta < -kPsdTolerance) reject("R falls below delta*I", cert.min_eig_R_minus_delta);
  if (cert.min_eig_G < -kPsdTolerance) reject("G is not positive semidefinite", cert.min_eig_G);
  if (cert.min_eig_G1 < -kPsdTolerance) reject("G1 is not positive semidefinite", cert.min_eig_G1);

  return ValidatedScenario(std::move(raw), cert);
}

GridScenario discretize(const ValidatedScenario& sc, int steps) {
  if (steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be at least 1");
  const Scenario& s = sc.scenario();
  GridScenario g;
  g.base = s;
  g.base.steps = steps;
  g.t.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) g.t[static_cast<std::size_t>(i)] = s.T * i / steps;
  g.t.back() = s.T;
  for (int i = 0; i < steps; ++i) {
    const double ti = g.t[static_cast<std::size_t>(i)];
    g.dt.push_back(g.t[static_cast<std::size_t>(i) + 1] - ti);
    g.A.push_back(s.A(ti));
    g.B.push_back(s.B(ti));
    g.C.push_back(s.C(ti));
    g.H.push_back(s.H(ti));
    g.G.push_back(s.G(ti));
    g.R.push_back(s.R(ti));
  }
  return g;
}

GridScenario discretize(const ValidatedScenario& sc) { return discretize(sc, sc.scenario().steps); }

ValidationCertificate validate_grid(const GridScenario& g) {
  const int K = g.steps();
  if (K < 1 || static_cast<int>(g.t.size()) != K + 1) throw Error(ErrorKind::DimensionMismatch, "grid size");
  if (g.t.front() != 0.0 || g.t.back() != g.base.T) throw Error(ErrorKind::InvalidArgument, "grid does not cover [0,T]");
  ValidationCertificate cert;
  cert.min_eig_R_minus_delta = std::numeric_limits<double>::infinity();
  cert.min_eig_G = std::numeric_limits<double>::infinity();
  cert.samples = K;
  const int d = g.d();
  for (int i = 0; i < K; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!(g.dt[k] > 0.0)) throw Error(ErrorKind::NotPositive, "nonpositive step");
    for (const auto* tab : {&g.A, &g.B, &g.C, &g.H, &g.G, &g.R})
      if (!(*tab)[k].allFinite()) throw Error(ErrorKind::NonfiniteEntry, "sampled coefficient is nonfinite");
    cert.min_eig_G = std::min(cert.min_eig_G, min_sym_eig(g.G[k]));
    cert.min_eig_R_minus_delta =
        std::min(cert.min_eig_R_minus_delta, min_sym_eig(g.R[k] - g.base.delta * Matrix::Identity(d, d)));
  }
  cert.min_eig_G1 = min_sym_eig(g.G1());
  if (cert.min_eig_R_minus_delta < -kPsdTolerance || cert.min_eig_G < -kPsdTolerance ||
      cert.min_eig_G1 < -kPsdTolerance)
    throw Error(ErrorKind::NotPositive, "sampled grid violates the scenario bounds");
  return cert;
}

Scenario scenario_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::ParseError, "scenario must be a JSON object");
  for (const char* key : {"n", "d", "T", "x", "delta", "A", "B", "C", "H", "G", "R", "G1"})
    if (!doc.contains(key)) throw Error(ErrorKind::ParseError, std::string("missing key '") + key + "'");
  Scenario s;
  try {
    s.n = doc.at("n").get<int>();
    s.d = doc.at("d").get<int>();
    s.T = doc.at("T").get<double>();
    s.delta = doc.at("delta").get<double>();
    s.steps = doc.value("steps", 50);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  if (s.n < 1 || s.d < 1) throw Error(ErrorKind::DimensionMismatch, "n and d must be at least 1");
  const Matrix xm = matrix_from_json(doc.at("x").is_number() ? json::array({doc.at("x")}) : doc.at("x"), s.n, 1, "x");
  s.x = xm.col(0);
  s.A = coefficient_from_json(doc.at("A"), s.n, s.n, "A");
  s.B = coefficient_from_json(doc.at("B"), s.n, s.d, "B");
  s.C = coefficient_from_json(doc.at("C"), s.n, s.d, "C");
  s.H = coefficient_from_json(doc.at("H"), s.d, s.n, "H");
  s.G = coefficient_from_json(doc.at("G"), s.n, s.n, "G");
  s.R = coefficient_from_json(doc.at("R"), s.d, s.d, "R");
  const json& g1 = doc.at("G1");
  s.G1 = matrix_from_json(g1.is_number() ? json::array({g1}) : g1, s.n, s.n, "G1");
  return s;
}

json scenario_to_json(const Scenario& s) {
  json x = json::array();
  for (Eigen::Index i = 0; i < s.x.size(); ++i) x.push_back(s.x(i));
  return json{{"n", s.n},
              {"d", s.d},
              {"T", s.T},
              {"x", x},
              {"delta", s.delta},
              {"steps", s.steps},
              {"A", s.A.to_json()},
              {"B", s.B.to_json()},
              {"C", s.C.to_json()},
              {"H", s.H.to_json()},
              {"G", s.G.to_json()},
              {"R", s.R.to_json()},
              {"G1", matrix_to_json(s.G1)}};
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  return scenario_from_json(doc);
}

std::string scenario_hash(const Scenario& sc) {
  const std::string text = scenario_to_json(sc).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace polq
