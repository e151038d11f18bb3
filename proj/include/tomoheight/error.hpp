#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tomoheight {

enum class Errc {
  // core
  NonFiniteIntensity,
  NegativeIntensity,
  NonMonotoneZAxis,
  DimensionMismatch,
  // fileio
  BadMagic,
  HeaderParse,
  TruncatedPayload,
  InvariantViolation,
  IncompatibleSpacing,
  Io,
  // synth
  BadParams,
  EmptyVegetationWindow,
  // geosplit
  BadSpec,
  TooSmall,
  DegenerateSplit,
  // metrics
  EmptyInput,
  LengthMismatch,
  ZeroVariance,
  ConstantChannel,
  NotFitted,
  // tabular
  EmptySelection,
  SingularSystem,
  TooFewRows,
  SchemaMismatch,
  // volnet / trainer
  ShapeMismatch,
  NonFinite,
  NoPatches,
  DivergedLoss,
  EmptyDataset,
  // hpo
  AllTrialsFailed,
  OutOfSpace,
  // cli
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

/// Exit code class used by the command-line tool: 2 config, 3 data, 4 numerical.
int errc_exit_code(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace tomoheight
