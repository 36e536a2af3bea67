#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pefa {

enum class ErrorCode {
  // vcd
  MalformedHeader,
  MalformedRecord,
  UnknownIdCode,
  NonMonotonicTime,
  UnknownColumn,
  WidthMismatch,
  TimeNotFound,
  // toolchain
  NoRtlFound,
  NoModuleFound,
  MultipleTestbenchModules,
  AlreadyInstrumented,
  ToolNotFound,
  Timeout,
  RuntimeCrash,
  WorkdirError,
  ReplayMiss,
  // llm
  HttpError,
  RateLimited,
  MalformedResponse,
  // harness / mcts
  DomainError,
  MissingFile,
  ConfigError,
  IoError,
  NoChildren,
  TerminalNode,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library. `code()` identifies the contract
/// violation; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Extra payload for HTTP failures.
class HttpStatusError : public Error {
 public:
  HttpStatusError(ErrorCode code, int status, const std::string& detail)
      : Error(code, "status " + std::to_string(status) + ": " + detail), status_(status) {}

  [[nodiscard]] int status() const noexcept { return status_; }

 private:
  int status_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::UnknownIdCode: return "UnknownIdCode";
    case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::TimeNotFound: return "TimeNotFound";
    case ErrorCode::NoRtlFound: return "NoRtlFound";
    case ErrorCode::NoModuleFound: return "NoModuleFound";
    case ErrorCode::MultipleTestbenchModules: return "MultipleTestbenchModules";
    case ErrorCode::AlreadyInstrumented: return "AlreadyInstrumented";
    case ErrorCode::ToolNotFound: return "ToolNotFound";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::RuntimeCrash: return "RuntimeCrash";
    case ErrorCode::WorkdirError: return "WorkdirError";
    case ErrorCode::ReplayMiss: return "ReplayMiss";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NoChildren: return "NoChildren";
    case ErrorCode::TerminalNode: return "TerminalNode";
  }
  return "Unknown";
}

}  // namespace pefa
