#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace intent {

enum class ErrorCode {
  InvalidConfig,
  UnknownAgent,
  EpisodeFinished,
  InvalidArgument,
  EmptyInput,
  MismatchedInitialState,
  DimensionMismatch,
  InvalidK,
  MissingTruthLabel,
  FileNotFound,
  ParseError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::UnknownAgent: return "unknown-agent-id";
    case ErrorCode::EpisodeFinished: return "episode-finished";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::EmptyInput: return "empty-input";
    case ErrorCode::MismatchedInitialState: return "mismatched-initial-state";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::InvalidK: return "invalid-K";
    case ErrorCode::MissingTruthLabel: return "missing-truth-label";
    case ErrorCode::FileNotFound: return "file-not-found";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

// All library failures surface as this exception; code() is stable for tests.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace intent
