// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace leafnet {

enum class ErrorCode {
  ShapeMismatch,
  DTypeMismatch,
  InvalidShape,
  InvalidAxis,
  InvalidArgument,
  NotScalar,
  DetachedTape,
  NonFinite,
  KernelLargerThanInput,
  DegenerateBatch,
  LabelOutOfRange,
  InputTooSmall,
  AlreadyHasHead,
  KOutOfRange,
  MissingGradient,
  EmptyDataset,
  NonFiniteLoss,
  ClassTooSmall,
  IoFailure,
  BadMagic,
  VersionMismatch,
  ChecksumMismatch,
  MalformedFile,
  ShapeMismatchOnLoad,
  DuplicateClassName,
  DecodeFailure,
  UnsupportedFormat,
  EmptyMatrix,
  AllOneClass,
  SchemaMismatch,
  UnknownConfigKey,
};

std::string_view to_string(ErrorCode code);

/// The single exception type thrown by the library. Callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace leafnet
