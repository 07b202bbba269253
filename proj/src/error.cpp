#include "mvdfl/error.hpp"

namespace mvdfl {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Ingestion: return "ingestion error";
        case ErrorKind::UniverseTooSmall: return "universe too small";
        case ErrorKind::InsufficientHistory: return "insufficient history";
        case ErrorKind::InvalidConfig: return "invalid config";
        case ErrorKind::InsufficientObservations: return "insufficient observations";
        case ErrorKind::DegenerateCovariance: return "degenerate covariance";
        case ErrorKind::SingularMatrix: return "singular matrix";
        case ErrorKind::DegenerateBudget: return "degenerate budget";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::State: return "state error";
        case ErrorKind::NonFinite: return "non-finite value";
        case ErrorKind::Io: return "i/o error";
    }
    return "unknown error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace mvdfl
