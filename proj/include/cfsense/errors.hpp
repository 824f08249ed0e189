#pragma once

#include <stdexcept>
#include <string>

namespace cfsense {

// Graph construction and validation.
struct CycleDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtectedHasParents : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownNodeInEdge : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownNode : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidPathMask : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Basis and shape checks.
struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures.
struct SingularNormalEquations : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteData : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonSymmetricInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tool-level preconditions.
struct NotBivariate : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AllCandidatesFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inner fit failure inside the worst-case search; callers treat it as a
// penalty rather than a fatal error.
struct InnerFitFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Data loading.
struct MissingColumn : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonBinaryProtected : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyAfterFiltering : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration parsing; `field` is the dotted path of the offending entry.
struct ConfigError : std::runtime_error {
  ConfigError(std::string field_path, const std::string& what_arg)
      : std::runtime_error("config field '" + field_path + "': " + what_arg),
        field(std::move(field_path)) {}
  std::string field;
};

}  // namespace cfsense
