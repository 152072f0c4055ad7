#include "mvpose/error.hpp"

namespace mvpose {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::DegenerateProjection: return "DegenerateProjection";
    case Errc::InsufficientViews: return "InsufficientViews";
    case Errc::DegenerateGeometry: return "DegenerateGeometry";
    case Errc::HomogeneousDivide: return "HomogeneousDivide";
    case Errc::CholeskyFailure: return "CholeskyFailure";
    case Errc::MapFailure: return "MapFailure";
    case Errc::GainDomain: return "GainDomain";
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::Disconnected: return "Disconnected";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::NoValidJoints: return "NoValidJoints";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace mvpose
