#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvpose {

enum class Errc {
  DegenerateProjection,
  InsufficientViews,
  DegenerateGeometry,
  HomogeneousDivide,
  CholeskyFailure,
  MapFailure,
  GainDomain,
  EmptyGraph,
  NonMonotoneTimestamp,
  SchemaViolation,
  InvariantViolation,
  Disconnected,
  ConfigError,
  IoError,
  NoValidJoints,
  InvalidArgument,
};

std::string_view to_string(Errc code);

/// Exception carrying a machine-checkable error code. All library failures
/// that callers are expected to handle are reported through this type.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mvpose
