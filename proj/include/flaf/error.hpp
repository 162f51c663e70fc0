#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flaf {

// Every failure raised by the engine carries one of these codes. The query
// service maps each code to exactly one (http status, machine code) pair.
enum class ErrorCode {
  kMalformedRiff,
  kUnsupportedEncoding,
  kEmptyClip,
  kTooShort,
  kDimensionMismatch,
  kMissingGroup,
  kUnknownSegment,
  kUnknownDetector,
  kInsufficientOverlap,
  kUnknownVideo,
  kDuplicateVideo,
  kCorruptLog,
  kSpecInvalid,
  kNoInputs,
  kPortInUse,
  kDataDirLocked,
  kInvalidArgument,
  kIo,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRiff: return "malformed_riff";
    case ErrorCode::kUnsupportedEncoding: return "unsupported_encoding";
    case ErrorCode::kEmptyClip: return "empty_clip";
    case ErrorCode::kTooShort: return "too_short";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kMissingGroup: return "missing_group";
    case ErrorCode::kUnknownSegment: return "unknown_segment";
    case ErrorCode::kUnknownDetector: return "unknown_detector";
    case ErrorCode::kInsufficientOverlap: return "insufficient_overlap";
    case ErrorCode::kUnknownVideo: return "unknown_video";
    case ErrorCode::kDuplicateVideo: return "duplicate_video";
    case ErrorCode::kCorruptLog: return "corrupt_log";
    case ErrorCode::kSpecInvalid: return "spec_invalid";
    case ErrorCode::kNoInputs: return "no_inputs";
    case ErrorCode::kPortInUse: return "port_in_use";
    case ErrorCode::kDataDirLocked: return "data_dir_locked";
    case ErrorCode::kInvalidArgument: return "bad_request";
    case ErrorCode::kIo: return "io_error";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the index when a log frame fails its CRC; carries the byte offset
// of the offending frame.
class CorruptLogError : public Error {
 public:
  CorruptLogError(std::uint64_t offset, const std::string& message)
      : Error(ErrorCode::kCorruptLog,
              message + " at log offset " + std::to_string(offset)),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace flaf
