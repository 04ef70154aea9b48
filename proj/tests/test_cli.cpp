#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "polq/cli.hpp"
#include "support.hpp"

using namespace polq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  std::random_device rd;
  const fs::path p = fs::temp_directory_path() / ("polq_cli_" + tag + "_" + std::to_string(rd()));
  fs::create_directories(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CliOptions options(const std::string& command, const std::string& scenario, const fs::path& out) {
  CliOptions o;
  o.command = command;
  o.scenario = test::scenario_path(scenario);
  o.out = out;
  return o;
}

void small_solve(CliOptions& o) {
  o.paths = 1000;
  o.inner = 10;
  o.max_iter = 5;
}

}  // namespace

TEST_CASE("invalid scenario exits with the input-error code") {
  const fs::path dir = fresh_dir("bad");
  const fs::path sc = dir / "bad.json";
  std::ofstream(sc) << R"({"n":1,"d":1,"T":1,"steps":10,"delta":0.5,"x":1,"A":0,"B":1,"C":0,"H":1,"G":1,"R":0,"G1":1})";
  CliOptions o;
  o.command = "solve";
  o.scenario = sc;
  o.out = dir / "runs";
  std::ostringstream log;
  const RunOutcome r = run_command(o, log);
  CHECK(r.exit_code == 2);
  CHECK(r.run_dir.empty());
  o.scenario = dir / "missing.json";
  CHECK(run_command(o, log).exit_code == 2);
  fs::remove_all(dir);
}

TEST_CASE("grid search beyond the combination cap is rejected before writing") {
  const fs::path dir = fresh_dir("cap");
  CliOptions o = options("oracle", "brute_h0", dir);
  o.which = "brute";
  o.blocks = 7;
  o.lattice_points = 21;
  std::ostringstream log;
  const RunOutcome r = run_command(o, log);
  CHECK(r.exit_code == 2);
  CHECK(fs::is_empty(dir));
  fs::remove_all(dir);
}

TEST_CASE("degenerate oracle on a generic scenario reports not applicable") {
  const fs::path dir = fresh_dir("deg");
  CliOptions o = options("oracle", "scalar_h1", dir);
  o.which = "degenerate";
  std::ostringstream log;
  const RunOutcome r = run_command(o, log);
  CHECK(r.exit_code == 0);
  const nlohmann::json rep = read_json(r.run_dir / "oracle_degenerate.json");
  CHECK(rep["value"].is_null());
  CHECK(rep.dump().find("NotApplicable") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("Riccati oracle through the command line") {
  const fs::path dir = fresh_dir("ric");
  CliOptions o = options("oracle", "riccati_b1", dir);
  o.which = "riccati";
  std::ostringstream log;
  const RunOutcome r = run_command(o, log);
  REQUIRE(r.exit_code == 0);
  CHECK(read_json(r.run_dir / "oracle_riccati.json")["value"].get<double>() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(fs::exists(r.run_dir / "riccati.csv"));
  fs::remove_all(dir);
}

TEST_CASE("manifest lists every artifact") {
  const fs::path dir = fresh_dir("man");
  CliOptions o = options("solve", "zero_cost", dir);
  small_solve(o);
  std::ostringstream log;
  const RunOutcome r = run_command(o, log);
  REQUIRE(r.exit_code == 0);
  const nlohmann::json m = read_json(r.run_dir / "manifest.json");
  for (const char* key : {"command", "scenario_hash", "version", "started", "finished", "artifacts"})
    CHECK(m.contains(key));
  CHECK(m["command"] == "solve");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(r.run_dir))
    if (e.path().filename() != "manifest.json") ++files;
  CHECK(m["artifacts"].size() == files);
  for (const auto& a : m["artifacts"]) CHECK(fs::exists(r.run_dir / a.get<std::string>()));
  for (const char* f : {"result.json", "policy.json", "history.csv", "certificate.csv", "tau_histogram.csv"})
    CHECK(fs::exists(r.run_dir / f));
  const nlohmann::json res = read_json(r.run_dir / "result.json");
  CHECK(res.dump().find("converged") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("reruns with the same seed are byte-identical") {
  const fs::path dir = fresh_dir("det");
  CliOptions o = options("solve", "scalar_h1", dir);
  small_solve(o);
  o.max_iter = 3;
  std::ostringstream log;
  const RunOutcome a = run_command(o, log);
  const RunOutcome b = run_command(o, log);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(a.run_dir != b.run_dir);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a.run_dir)) {
    const std::string name = e.path().filename().string();
    if (name == "manifest.json") continue;
    CHECK_MESSAGE(read_text(e.path()) == read_text(b.run_dir / name), name);
    ++compared;
  }
  CHECK(compared >= 5);
  fs::remove_all(dir);
}

TEST_CASE("diagnostic policy shape") {
  const PolicyRep p = diagnostic_policy(10, 2, 3.0);
  CHECK(p.steps() == 10);
  CHECK(p.d == 2);
  CHECK(p.Kc == 3.0);
  CHECK(p.coeffs[0](0, 0) == -0.3);
}
