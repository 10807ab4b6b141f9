#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace arbor_slam {

enum class ErrorCode {
  kInvalidParameter,
  kEmptyScan,
  kPoseOutOfGrid,
  kNoOccupiedCells,
  kDegenerateScan,
  kNonPsdNoise,
  kSingularInnovation,
  kInitialization,
  kOutOfOrder,
  kUninitialized,
  kParse,
  kIo,
  kEmptyLog,
  kNoPairs,
  kTooFewPairs,
  kResolutionMismatch,
  kEmptyReference,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed input file. `line()` is 1-based; 0 when the failure is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorCode::kParse,
              source + (line > 0 ? ":" + std::to_string(line) : std::string{}) + ": " + what),
        line_(line) {}

  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require(bool condition, const std::string& parameter, const std::string& message) {
  if (!condition) {
    throw Error(ErrorCode::kInvalidParameter, parameter + ": " + message);
  }
}

}  // namespace arbor_slam
