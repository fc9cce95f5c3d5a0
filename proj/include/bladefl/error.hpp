#pragma once

#include <stdexcept>
#include <string>

namespace bladefl {

enum class ErrorCode {
  NonPositiveParameter,
  InvalidParameter,
  InsufficientBudget,
  BudgetExceeded,
  IndivisibleShards,
  BadMagic,
  CountMismatch,
  TruncatedFile,
  EmptyShard,
  EmptyList,
  TopologyMismatch,
  DegenerateProbe,
  UnknownClient,
  IncompleteTxSet,
  VerificationFailure,
  ValidationFailure,
  NoHonestVictim,
  DivergentBound,
  NoFeasibleK,
  Io,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bladefl
