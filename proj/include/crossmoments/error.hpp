#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crossmoments {

enum class ErrorCode {
  InvalidModel,
  InvalidConfig,
  NonSmooth,
  InconclusiveTail,
  DegenerateLag,
  DegenerateObservation,
  QuadratureNonConvergent,
  InnerMCBudgetExceeded,
  EmbeddingNotPSD,
  ReplicateFailures,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonSmooth: return "NonSmooth";
    case ErrorCode::InconclusiveTail: return "InconclusiveTail";
    case ErrorCode::DegenerateLag: return "DegenerateLag";
    case ErrorCode::DegenerateObservation: return "DegenerateObservation";
    case ErrorCode::QuadratureNonConvergent: return "QuadratureNonConvergent";
    case ErrorCode::InnerMCBudgetExceeded: return "InnerMCBudgetExceeded";
    case ErrorCode::EmbeddingNotPSD: return "EmbeddingNotPSD";
    case ErrorCode::ReplicateFailures: return "ReplicateFailures";
  }
  return "Unknown";
}

/// All library failures carry a code so callers (and the CLI exit-code
/// mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace crossmoments
