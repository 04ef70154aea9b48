#pragma once

#include <stdexcept>
#include <string>

namespace polq {

enum class ErrorKind {
  DimensionMismatch,
  NotPositive,
  NonfiniteEntry,
  InvalidArgument,
  ParseError,
  IoError,
  SingularZeta,
  NonfinitePath,
  EmptyEnsemble,
  MeasureMismatch,
  BudgetMismatch,
  DegenerateWeights,
  MemoryBudgetExceeded,
  RegressionFailure,
  ResidualTooLarge,
  SingularScaledR,
  Diverged,
  BudgetViolatingDirection,
  NoiseDominated,
  RiccatiBlowup,
  MaxIterExceeded,
  CombinatorialBudgetExceeded,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries one of the kinds above so the
// CLI can map it onto an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace polq
