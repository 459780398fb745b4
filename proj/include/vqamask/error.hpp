#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vqamask {

enum class ErrorCode {
  ShapeMismatch,
  BoxOutOfBounds,
  DegenerateBox,
  PlacementOutOfBounds,
  IndivisibleTile,
  NonPowerOfTwoUpscale,
  TapOutOfRange,
  IndexOutOfVocab,
  UnknownCharacter,
  NonDeterministicLoss,
  NaNLoss,
  Unreadable,
  MalformedRecord,
  WriteFailure,
  InvalidArgument,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BoxOutOfBounds: return "BoxOutOfBounds";
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::PlacementOutOfBounds: return "PlacementOutOfBounds";
    case ErrorCode::IndivisibleTile: return "IndivisibleTile";
    case ErrorCode::NonPowerOfTwoUpscale: return "NonPowerOfTwoUpscale";
    case ErrorCode::TapOutOfRange: return "TapOutOfRange";
    case ErrorCode::IndexOutOfVocab: return "IndexOutOfVocab";
    case ErrorCode::UnknownCharacter: return "UnknownCharacter";
    case ErrorCode::NonDeterministicLoss: return "NonDeterministicLoss";
    case ErrorCode::NaNLoss: return "NaNLoss";
    case ErrorCode::Unreadable: return "Unreadable";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::WriteFailure: return "WriteFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace vqamask
