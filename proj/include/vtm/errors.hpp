#pragma once

#include <stdexcept>
#include <string>

namespace vtm {

// Configuration problems: bad flags, malformed config documents, unknown keys.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset and file-format problems.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BadMagicError : DataError {
    explicit BadMagicError(const std::string& msg) : DataError(msg) {}
};

struct DimMismatchError : DataError {
    explicit DimMismatchError(const std::string& msg) : DataError(msg) {}
};

struct TruncatedPayloadError : DataError {
    explicit TruncatedPayloadError(const std::string& msg) : DataError(msg) {}
};

// Numerical failures: non-finite losses, degenerate embeddings.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateEmbeddingError : NumericError {
    explicit DegenerateEmbeddingError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace vtm
