#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvdfl {

enum class ErrorKind {
    Ingestion,
    UniverseTooSmall,
    InsufficientHistory,
    InvalidConfig,
    InsufficientObservations,
    DegenerateCovariance,
    SingularMatrix,
    DegenerateBudget,
    Shape,
    State,
    NonFinite,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception; `kind()` lets callers map failures to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mvdfl
