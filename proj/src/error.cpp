#include "twodpo/error.hpp"

namespace twodpo {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::AlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::MissingTemplate: return "MissingTemplate";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::ScaleViolation: return "ScaleViolation";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::ExhaustedRetries: return "ExhaustedRetries";
    case ErrorCode::WrongVoterCount: return "WrongVoterCount";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::ZeroMeanReward: return "ZeroMeanReward";
    case ErrorCode::SpanRewardMismatch: return "SpanRewardMismatch";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ScorerFailure: return "ScorerFailure";
    case ErrorCode::DegenerateRound: return "DegenerateRound";
  }
  return "Unknown";
}

}  // namespace twodpo
