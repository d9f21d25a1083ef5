// SPDX-License-Identifier: Apache-2.0
#include "leafnet/error.hpp"

namespace leafnet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DTypeMismatch: return "DTypeMismatch";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DetachedTape: return "DetachedTape";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::KernelLargerThanInput: return "KernelLargerThanInput";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InputTooSmall: return "InputTooSmall";
    case ErrorCode::AlreadyHasHead: return "AlreadyHasHead";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::ShapeMismatchOnLoad: return "ShapeMismatchOnLoad";
    case ErrorCode::DuplicateClassName: return "DuplicateClassName";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::AllOneClass: return "AllOneClass";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::UnknownConfigKey: return "UnknownConfigKey";
  }
  return "Unknown";
}

}  // namespace leafnet
