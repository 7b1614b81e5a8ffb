#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moldweight {

enum class ErrorKind {
    InvalidArgument,
    ZeroVariance,
    LagTooLarge,
    NonFiniteInput,
    InvalidConfidence,
    UnknownChannelName,
    ShapeMismatch,
    EmptyWindow,
    LengthMismatch,
    IncompleteTape,
    SchemaVariantMismatch,
    WindowLengthMismatch,
    SchemaMismatch,
    InsufficientData,
    OutOfOrderRecord,
    VersionMismatch,
    SchemaFingerprintMismatch,
    CorruptFile,
    NoConvergence,
    EmptyGrid,
    InvalidConfig,
    HeaderMismatch,
    ParseError,
    NonMonotonicMoldIndex,
    ZeroVarianceDifferences,
    InvalidDf,
    Io,
};

[[nodiscard]] std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

}  // namespace moldweight
