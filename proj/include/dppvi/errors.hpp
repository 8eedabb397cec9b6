#pragma once

#include <stdexcept>
#include <string>

namespace dppvi {

struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LengthMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A distribution left the normalizable part of the family (some eta2 >= 0).
struct NonNormalizable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonNormalizableGlobal : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimizerDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingPerExampleGrads : std::logic_error {
    using std::logic_error::logic_error;
};

// No finite (epsilon, delta) bound can be certified with the given noise.
struct DivergentEpsilon : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CalibrationFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleSplit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dppvi
