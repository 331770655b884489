#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace twodpo {

enum class ErrorCode {
  InvalidArgument,
  Io,
  // dataset_model
  MalformedRecord,
  SchemaViolation,
  InvariantViolation,
  EmptyDataset,
  // segmenter
  EmptyText,
  AlignmentMismatch,
  // annotation_pipeline
  MissingTemplate,
  ParseFailure,
  CountMismatch,
  ScaleViolation,
  JudgeUnavailable,
  ExhaustedRetries,
  WrongVoterCount,
  // reward_algebra
  OutOfRange,
  DimensionMismatch,
  EmptyResponse,
  ZeroMeanReward,
  // loss_engine
  SpanRewardMismatch,
  EmptySelection,
  // toy_policy
  UnknownToken,
  EmptyCorpus,
  ShapeMismatch,
  // trainer
  ConfigError,
  DataError,
  NonFiniteLoss,
  EmptyBatch,
  ScorerFailure,
  DegenerateRound,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace twodpo
