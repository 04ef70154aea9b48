#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polq/policy.hpp"
#include "polq/scenario.hpp"

namespace polq {

struct CliOptions {
  std::string command;
  std::filesystem::path scenario;
  std::uint64_t seed = 42;
  std::optional<int> paths;
  std::optional<int> inner;
  std::optional<double> kc;
  std::vector<double> budgets{1.0, 2.0, 4.0, 8.0};
  double epsilon = 0.05;
  std::optional<int> steps;
  std::filesystem::path out = "runs";
  std::optional<double> theta;
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::string which = "all";
  std::optional<int> blocks;
  int lattice_points = 21;
  double lattice_range = 2.0;
  std::optional<int> threads;
};

/// Append-only run directory <out>/<UTC timestamp>_<scenario hash>_<command>
/// that records every file written through it in manifest.json.
class RunDir {
 public:
  RunDir(const std::filesystem::path& out, const std::string& command, const std::string& scenario_hash);

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name);
  void write_json(const std::string& name, const nlohmann::json& doc);
  void write_text(const std::string& name, const std::string& text);
  const std::vector<std::string>& artifacts() const { return artifacts_; }
  /// Writes manifest.json; `meta` is merged into the manifest document.
  void finish(nlohmann::json meta);

 private:
  std::filesystem::path dir_;
  std::string command_;
  std::string scenario_hash_;
  std::string started_;
  std::vector<std::string> artifacts_;
};

struct RunOutcome {
  int exit_code = 0;
  std::filesystem::path run_dir;  // empty when the run failed before creating it
};

/// Fixed exploratory policy used by the diagnostics: intercept -0.3 and
/// observation-level gain -0.5 on every control component.
PolicyRep diagnostic_policy(int steps, int d, double Kc);

RunOutcome cmd_diagnose(const CliOptions& opt, std::ostream& log);
RunOutcome cmd_solve(const CliOptions& opt, std::ostream& log);
RunOutcome cmd_ladder(const CliOptions& opt, std::ostream& log);
RunOutcome cmd_oracle(const CliOptions& opt, std::ostream& log);

/// Dispatches on opt.command and maps library errors onto exit codes:
/// 2 for invalid input, 1 for failed diagnostics or numerical failure.
RunOutcome run_command(const CliOptions& opt, std::ostream& log);

/// Parses argv and runs the command.
int cli_main(int argc, char** argv);

}  // namespace polq
