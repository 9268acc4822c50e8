#pragma once

#include <stdexcept>
#include <string>

namespace tsw {

enum class ErrorCode {
  kInvalidArgument,
  kFingerprintMismatch,
  kDimensionMismatch,
  kBadMagic,
  kTruncated,
  kTrailingData,
  kDuplicateName,
  kShapeMismatch,
  kPopcountMismatch,
  kCorruptPack,
  kCorruptData,
  kIo,
  kDivergence,
  kInternal,
};

// Maps onto the CLI exit code contract: 1 user error, 2 data error, 3 internal.
enum class ErrorKind { kUser = 1, kData = 2, kInternal = 3 };

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kFingerprintMismatch: return "fingerprint mismatch";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kTrailingData: return "trailing data";
    case ErrorCode::kDuplicateName: return "duplicate tensor name";
    case ErrorCode::kShapeMismatch: return "shape/length mismatch";
    case ErrorCode::kPopcountMismatch: return "popcount mismatch";
    case ErrorCode::kCorruptPack: return "corrupt switch pack";
    case ErrorCode::kCorruptData: return "corrupt data";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kDivergence: return "training diverged";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown";
}

inline ErrorKind kind_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kFingerprintMismatch:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kDivergence:
      return ErrorKind::kUser;
    case ErrorCode::kInternal:
      return ErrorKind::kInternal;
    default:
      return ErrorKind::kData;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace tsw
