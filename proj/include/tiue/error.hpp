// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiue {

enum class ErrorCode {
  ShapeMismatch,
  InvalidAttr,
  NotScalar,
  DecayOutOfRange,
  InvalidRange,
  InvalidTimestep,
  InvalidK,
  CacheMismatch,
  InvalidSteps,
  InvalidPlan,
  DimMismatch,
  EmptyDataset,
  TargetMissing,
  NonFinite,
  DegenerateVariance,
  CheckpointInvalid,
  InvalidSpec,
  UnknownClass,
  RankDeficient,
  KTooLarge,
  Corrupt,
  VersionUnsupported,
  ConfigInvalid,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace tiue
