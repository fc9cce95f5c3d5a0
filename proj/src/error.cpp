#include "bladefl/error.hpp"

namespace bladefl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveParameter: return "NonPositiveParameter";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::InsufficientBudget: return "InsufficientBudget";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::IndivisibleShards: return "IndivisibleShards";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::EmptyShard: return "EmptyShard";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::TopologyMismatch: return "TopologyMismatch";
    case ErrorCode::DegenerateProbe: return "DegenerateProbe";
    case ErrorCode::UnknownClient: return "UnknownClient";
    case ErrorCode::IncompleteTxSet: return "IncompleteTxSet";
    case ErrorCode::VerificationFailure: return "VerificationFailure";
    case ErrorCode::ValidationFailure: return "ValidationFailure";
    case ErrorCode::NoHonestVictim: return "NoHonestVictim";
    case ErrorCode::DivergentBound: return "DivergentBound";
    case ErrorCode::NoFeasibleK: return "NoFeasibleK";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace bladefl
