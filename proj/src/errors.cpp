#include "moldweight/errors.hpp"

namespace moldweight {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::LagTooLarge: return "LagTooLarge";
        case ErrorKind::NonFiniteInput: return "NonFiniteInput";
        case ErrorKind::InvalidConfidence: return "InvalidConfidence";
        case ErrorKind::UnknownChannelName: return "UnknownChannelName";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::EmptyWindow: return "EmptyWindow";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::IncompleteTape: return "IncompleteTape";
        case ErrorKind::SchemaVariantMismatch: return "SchemaVariantMismatch";
        case ErrorKind::WindowLengthMismatch: return "WindowLengthMismatch";
        case ErrorKind::SchemaMismatch: return "SchemaMismatch";
        case ErrorKind::InsufficientData: return "InsufficientData";
        case ErrorKind::OutOfOrderRecord: return "OutOfOrderRecord";
        case ErrorKind::VersionMismatch: return "VersionMismatch";
        case ErrorKind::SchemaFingerprintMismatch: return "SchemaFingerprintMismatch";
        case ErrorKind::CorruptFile: return "CorruptFile";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::EmptyGrid: return "EmptyGrid";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::HeaderMismatch: return "HeaderMismatch";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::NonMonotonicMoldIndex: return "NonMonotonicMoldIndex";
        case ErrorKind::ZeroVarianceDifferences: return "ZeroVarianceDifferences";
        case ErrorKind::InvalidDf: return "InvalidDf";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void raise(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace moldweight
