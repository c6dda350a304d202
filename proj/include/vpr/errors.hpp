#pragma once

#include <stdexcept>
#include <string>

namespace vpr {

// Shape or extent disagreement between tensors/operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A configuration value outside its admissible range (e.g. GeM p < 1).
struct ParameterError : std::invalid_argument {
    explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A value outside the mathematical domain of an operation (log of a
// nonpositive value, discriminator score outside (0,1), ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mean over an empty set (every pixel carries the ignore label).
struct UndefinedMeanError : DomainError {
    explicit UndefinedMeanError(const std::string& msg) : DomainError(msg) {}
};

// API misuse: a documented call contract was violated.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// A training query with no admissible positive or negative. Callers count
// these; they are never silently dropped.
struct QueryUnusable : std::runtime_error {
    explicit QueryUnusable(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unreadable file.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loop abort (non-finite loss). Carries a one-line diagnostic.
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vpr
