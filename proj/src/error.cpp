#include "polq/error.hpp"

namespace polq {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NotPositive: return "NotPositive";
    case ErrorKind::NonfiniteEntry: return "NonfiniteEntry";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SingularZeta: return "SingularZeta";
    case ErrorKind::NonfinitePath: return "NonfinitePath";
    case ErrorKind::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorKind::MeasureMismatch: return "MeasureMismatch";
    case ErrorKind::BudgetMismatch: return "BudgetMismatch";
    case ErrorKind::DegenerateWeights: return "DegenerateWeights";
    case ErrorKind::MemoryBudgetExceeded: return "MemoryBudgetExceeded";
    case ErrorKind::RegressionFailure: return "RegressionFailure";
    case ErrorKind::ResidualTooLarge: return "ResidualTooLarge";
    case ErrorKind::SingularScaledR: return "SingularScaledR";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::BudgetViolatingDirection: return "BudgetViolatingDirection";
    case ErrorKind::NoiseDominated: return "NoiseDominated";
    case ErrorKind::RiccatiBlowup: return "RiccatiBlowup";
    case ErrorKind::MaxIterExceeded: return "MaxIterExceeded";
    case ErrorKind::CombinatorialBudgetExceeded: return "CombinatorialBudgetExceeded";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace polq
